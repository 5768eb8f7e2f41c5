use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One LiDAR return: position in meters and reflectance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub r: f64,
}

impl LidarPoint {
    pub fn new(u: f64, v: f64, w: f64, r: f64) -> Self {
        Self { u, v, w, r }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    pub fn features(&self) -> [f64; 4] {
        [self.u, self.v, self.w, self.r]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.u.is_finite() && p.v.is_finite() && p.w.is_finite()) {
                return Err(Error::Input(format!("point {i} has non-finite coordinates")));
            }
            if !(0.0..=1.0).contains(&p.r) {
                return Err(Error::Input(format!("point {i} reflectance {} outside [0, 1]", p.r)));
            }
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[LidarPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same cloud shifted by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| LidarPoint::new(p.u + offset[0], p.v + offset[1], p.w + offset[2], p.r))
                .collect(),
        }
    }

    /// Text form: one `u v w r` line per point.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            let _ = writeln!(s, "{} {} {} {}", p.u, p.v, p.w, p.r);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad number in `{line}`"),
                })?;
            if vals.len() != 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 4 fields, found {}", vals.len()),
                });
            }
            pts.push(LidarPoint::new(vals[0], vals[1], vals[2], vals[3]));
        }
        Self::new(pts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_reflectance() {
        assert!(PointCloud::new(vec![LidarPoint::new(0.0, 0.0, 0.0, 1.5)]).is_err());
        assert!(PointCloud::new(vec![LidarPoint::new(f64::NAN, 0.0, 0.0, 0.5)]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = PointCloud::new(vec![
            LidarPoint::new(1.0 / 3.0, -2.5, 0.1, 0.25),
            LidarPoint::new(12.0, 0.0, -0.75, 1.0),
        ])
        .unwrap();
        assert_eq!(PointCloud::from_text(&c.to_text()).unwrap(), c);
        assert!(matches!(
            PointCloud::from_text("1 2 3 0.5\n1 2 3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
