use crate::detect::Box3D;
use crate::error::{Error, Result};
use crate::numerics::{RowWeights, Tensor};
use crate::scene::CameraModel;
use crate::voxel::SparseVoxelGrid;

/// `G³` cell centers of a regular lattice inside `bbox`, in world frame,
/// ordered with the box-local x index outermost.
pub fn roi_grid_points(bbox: &Box3D, g: usize) -> Result<Vec<[f64; 3]>> {
    if g == 0 {
        return Err(Error::Config("grid size must be >= 1".into()));
    }
    if bbox.size.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Input(format!("degenerate box size {:?}", bbox.size)));
    }
    let frac = |i: usize| (i as f64 + 0.5) / g as f64 - 0.5;
    let mut pts = Vec::with_capacity(g * g * g);
    for i in 0..g {
        for j in 0..g {
            for k in 0..g {
                let local = [frac(i) * bbox.size[0], frac(j) * bbox.size[1], frac(k) * bbox.size[2]];
                pts.push(bbox.to_world(local));
            }
        }
    }
    Ok(pts)
}

/// Equal weights over occupied voxels whose centers lie within `radius` of
/// each point; points with no such voxel get no terms (a zero row).
pub fn lidar_pool_weights(pts: &[[f64; 3]], vox: &SparseVoxelGrid, radius: f64) -> RowWeights {
    let cs = vox.cell_size();
    let origin = vox.geometry().origin;
    let ext = vox.extents();
    pts.iter()
        .map(|p| {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for a in 0..3 {
                let c = (p[a] - origin[a]) / cs[a] - 0.5;
                let r = radius / cs[a];
                lo[a] = (c - r).floor().max(0.0) as usize;
                hi[a] = ((c + r).ceil().max(-1.0) + 1.0).min(ext[a] as f64) as usize;
            }
            let mut rows = Vec::new();
            for i in lo[0]..hi[0] {
                for j in lo[1]..hi[1] {
                    for k in lo[2]..hi[2] {
                        let idx = [i, j, k];
                        if vox.get(idx).is_none() {
                            continue;
                        }
                        let c = vox.center(idx);
                        let d2: f64 = (0..3).map(|a| (c[a] - p[a]).powi(2)).sum();
                        if d2 <= radius * radius {
                            rows.push(vox.indices().binary_search(&idx).expect("occupied voxel"));
                        }
                    }
                }
            }
            let w = 1.0 / rows.len().max(1) as f64;
            rows.into_iter().map(|r| (r, w)).collect()
        })
        .collect()
}

/// Mean occupied-voxel feature within `radius` of each point.
pub fn pool_lidar(pts: &[[f64; 3]], vox: &SparseVoxelGrid, radius: f64) -> Tensor {
    let f = vox.features();
    let c = vox.width();
    let mut out = Tensor::zeros(&[pts.len(), c]);
    for (i, terms) in lidar_pool_weights(pts, vox, radius).iter().enumerate() {
        let row = out.row_mut(i);
        for &(r, w) in terms {
            for (o, x) in row.iter_mut().zip(f.row(r)) {
                *o += w * x;
            }
        }
    }
    out
}

/// Bilinear weights into an `hw` feature map covering the camera image.
/// Feature cell `(i, j)` is centered on image position
/// `((i + 0.5) H / h, (j + 0.5) W / w)`; samples clamp at the map border.
/// Points behind the camera or outside the image get no terms.
pub fn image_pool_weights(pts: &[[f64; 3]], hw: (usize, usize), cam: &CameraModel) -> RowWeights {
    let (fh, fw) = hw;
    let (ih, iw) = (cam.height as f64, cam.width as f64);
    pts.iter()
        .map(|&p| {
            let Some((row, col, _)) = cam.project(p) else {
                return Vec::new();
            };
            if !(row >= 0.0 && row < ih && col >= 0.0 && col < iw) {
                return Vec::new();
            }
            let axis = |x: f64, n: usize, img: f64| {
                let f = (x * n as f64 / img - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = (f.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, f - i0 as f64)
            };
            let (r0, r1, ar) = axis(row, fh, ih);
            let (c0, c1, ac) = axis(col, fw, iw);
            let mut terms: Vec<(usize, f64)> = Vec::with_capacity(4);
            for (r, wr) in [(r0, 1.0 - ar), (r1, ar)] {
                for (c, wc) in [(c0, 1.0 - ac), (c1, ac)] {
                    let w = wr * wc;
                    if w == 0.0 {
                        continue;
                    }
                    let idx = r * fw + c;
                    match terms.iter_mut().find(|t| t.0 == idx) {
                        Some(t) => t.1 += w,
                        None => terms.push((idx, w)),
                    }
                }
            }
            terms
        })
        .collect()
}

/// Bilinear sample of an `H x W x C` feature map at each point's projection.
pub fn pool_image(pts: &[[f64; 3]], feat: &Tensor, cam: &CameraModel) -> Result<Tensor> {
    let [h, w, c] = match feat.shape() {
        [h, w, c] => [*h, *w, *c],
        s => return Err(Error::dim("pool image", format!("expected H x W x C, got {s:?}"))),
    };
    let mut out = Tensor::zeros(&[pts.len(), c]);
    for (i, terms) in image_pool_weights(pts, (h, w), cam).iter().enumerate() {
        let row = out.row_mut(i);
        for &(r, wt) in terms {
            for (o, x) in row.iter_mut().zip(feat.row(r)) {
                *o += wt * x;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::ObjectClass;
    use crate::numerics::testing::random_tensor;
    use crate::voxel::VoxelConfig;
    use std::f64::consts::FRAC_PI_2;

    fn unit_cube(yaw: f64) -> Box3D {
        Box3D::new([0.0; 3], [1.0; 3], yaw, ObjectClass::Vehicle).unwrap()
    }

    #[test]
    fn lattice_arithmetic() {
        assert_eq!(roi_grid_points(&unit_cube(0.0), 1).unwrap(), vec![[0.0; 3]]);
        let pts = roi_grid_points(&unit_cube(0.0), 2).unwrap();
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert!(p.iter().all(|x| x.abs() == 0.25));
        }
        assert_eq!(pts[0], [-0.25, -0.25, -0.25]);
        assert_eq!(pts[7], [0.25, 0.25, 0.25]);
    }

    #[test]
    fn rotated_lattice_matches_rotation_oracle() {
        let b0 = Box3D::new([3.0, -1.0, 0.5], [4.0, 2.0, 1.5], 0.0, ObjectClass::Vehicle).unwrap();
        let b1 = Box3D { yaw: FRAC_PI_2, ..b0 };
        let p0 = roi_grid_points(&b0, 3).unwrap();
        let p1 = roi_grid_points(&b1, 3).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            let (dx, dy) = (a[0] - 3.0, a[1] + 1.0);
            let want = [3.0 - dy, -1.0 + dx, a[2]];
            for i in 0..3 {
                assert!((b[i] - want[i]).abs() < 1e-12);
            }
        }
    }

    fn grid(entries: Vec<([usize; 3], Vec<f64>)>) -> SparseVoxelGrid {
        SparseVoxelGrid::new(entries, 2, [16, 16, 16], 1, VoxelConfig::default().geometry()).unwrap()
    }

    #[test]
    fn lidar_pooling_cases() {
        let g = grid(vec![([0, 0, 4], vec![1.0, 2.0]), ([10, 10, 10], vec![3.0, -1.0])]);
        let c = g.center([10, 10, 10]);
        let far = [c[0] + 100.0, c[1], c[2]];
        let out = pool_lidar(&[c, far], &g, 0.5);
        assert_eq!(out.row(0), &[3.0, -1.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn lidar_pooling_matches_brute_force() {
        let mut entries = Vec::new();
        let f = random_tensor(&[60, 2], 1);
        for n in 0..60usize {
            entries.push(([(n * 7) % 16, (n * 5 + 3) % 16, (n * 11) % 16], f.row(n).to_vec()));
        }
        entries.sort_by_key(|e| e.0);
        entries.dedup_by_key(|e| e.0);
        let g = grid(entries);
        let q = random_tensor(&[40, 3], 2);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|i| {
                let r = q.row(i);
                [4.0 + 4.0 * r[0], -28.0 + 4.0 * r[1], 1.0 + 2.0 * r[2]]
            })
            .collect();
        for radius in [0.3, 0.8, 2.0] {
            let got = pool_lidar(&pts, &g, radius);
            for (i, p) in pts.iter().enumerate() {
                let mut sum = [0.0; 2];
                let mut n = 0;
                for (idx, feat) in g.iter() {
                    let c = g.center(idx);
                    if (0..3).map(|a| (c[a] - p[a]).powi(2)).sum::<f64>() <= radius * radius {
                        sum[0] += feat[0];
                        sum[1] += feat[1];
                        n += 1;
                    }
                }
                for a in 0..2 {
                    let want = if n == 0 { 0.0 } else { sum[a] / n as f64 };
                    assert!((got.row(i)[a] - want).abs() < 1e-12, "radius {radius} point {i}");
                }
            }
        }
    }

    #[test]
    fn image_sampling_cases() {
        let cam = CameraModel::forward_facing(8, 8, 1.0, 1.5).unwrap();
        let feat = random_tensor(&[4, 4, 3], 3);
        // cell (1, 2) is centered on pixel position (3, 5)
        let p = cam.back_project(3.0, 5.0, 10.0);
        let out = pool_image(&[p, [-5.0, 0.0, 1.0]], &feat, &cam).unwrap();
        for (a, b) in out.row(0).iter().zip(feat.row(6)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.row(1), &[0.0; 3]);
    }
}
