use crate::error::{Error, Result};
use crate::scene::PointCloud;

/// Furthest-point-sampled subset of a cloud, in selection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyPointSet {
    pub indices: Vec<usize>,
    pub points: Vec<[f64; 3]>,
}

impl KeyPointSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Greedy max-min selection of `k` points. The first pick is `seed % T`
/// (index 0 without a seed); later ties go to the lowest index. Asking for
/// more points than exist returns all of them.
pub fn fps(cloud: &PointCloud, k: usize, seed: Option<u64>) -> Result<KeyPointSet> {
    if cloud.is_empty() {
        return Err(Error::Input("furthest point sampling on an empty cloud".into()));
    }
    if k == 0 {
        return Err(Error::Config("furthest point sampling needs k >= 1".into()));
    }
    let pts: Vec<[f64; 3]> = cloud.points().iter().map(|p| p.xyz()).collect();
    let t = pts.len();
    let k = k.min(t);
    let mut next = seed.map_or(0, |s| (s % t as u64) as usize);
    let mut min_d = vec![f64::INFINITY; t];
    let mut set = KeyPointSet::default();
    for _ in 0..k {
        set.indices.push(next);
        set.points.push(pts[next]);
        let q = pts[next];
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in pts.iter().enumerate() {
            let d = dist2(*p, q);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        next = best.1;
    }
    Ok(set)
}
