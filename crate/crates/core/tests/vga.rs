use std::f64::consts::FRAC_PI_2;

use fusion_core::detect::{Box3D, ObjectClass};
use fusion_core::numerics::testing::random_tensor;
use fusion_core::numerics::ParamSet;
use fusion_core::scene::CameraModel;
use fusion_core::vga::{init_vga, pool_lidar, roi_grid_points, vga_forward, VgaConfig};
use fusion_core::voxel::{SparseVoxelGrid, VoxelConfig, VoxelIndex};
use proptest::prelude::*;

const STRIDE: usize = 4;

fn grid(entries: Vec<(VoxelIndex, Vec<f64>)>, width: usize) -> SparseVoxelGrid {
    let vc = VoxelConfig::default();
    SparseVoxelGrid::new(entries, width, vc.stage_extents(2), STRIDE, vc.geometry()).unwrap()
}

/// Random occupied cells in a block around stride-4 cell `(6, 16, 1)`.
fn random_entries(width: usize, seed: u64) -> Vec<(VoxelIndex, Vec<f64>)> {
    let mut out = Vec::new();
    let mut n = 0;
    for i in 2..11 {
        for j in 12..21 {
            for k in 0..3 {
                n += 1;
                if (i * 7 + j * 13 + k * 5 + seed as usize) % 3 != 0 {
                    out.push(([i, j, k], random_tensor(&[width], seed * 10_000 + n).into_data()));
                }
            }
        }
    }
    out
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distant_voxels_do_not_affect_pooling(
        cx in 8.0f64..20.0, cy in -4.0f64..4.0, yaw in -3.1f64..3.1, seed in 0u64..1000, g in 1usize..5
    ) {
        let entries = random_entries(3, seed);
        let base = grid(entries.clone(), 3);
        let bbox = Box3D::new([cx, cy, 0.8], [3.0, 1.6, 1.4], yaw, ObjectClass::Vehicle).unwrap();
        let pts = roi_grid_points(&bbox, g).unwrap();
        let radius = base.diagonal();
        let want = pool_lidar(&pts, &base, radius);
        let mut touched = 0;
        for (n, (idx, _)) in entries.iter().enumerate() {
            let c = base.center(*idx);
            let far = pts.iter().all(|p| dist(*p, c) > radius);
            let mut e = entries.clone();
            e[n].1 = vec![1e6; 3];
            let got = pool_lidar(&pts, &grid(e, 3), radius);
            if far {
                prop_assert_eq!(&got, &want, "voxel {:?}", idx);
            } else {
                touched += 1;
                prop_assert!(got != want, "voxel {:?} within radius had no effect", idx);
            }
        }
        prop_assert!(touched > 0);
    }
}

/// `p -> R p + s` applied to the LiDAR cells, the box and the camera.
struct Motion {
    quarter_turns: usize,
    pivot: VoxelIndex,
    shift: [i64; 3],
}

impl Motion {
    fn rotate_xy(&self, mut x: i64, mut y: i64) -> (i64, i64) {
        for _ in 0..self.quarter_turns {
            (x, y) = (-y, x);
        }
        (x, y)
    }

    fn index(&self, idx: VoxelIndex) -> VoxelIndex {
        let (p, q) = (self.pivot[0] as i64, self.pivot[1] as i64);
        let (x, y) = self.rotate_xy(idx[0] as i64 - p, idx[1] as i64 - q);
        [
            p + x + self.shift[0],
            q + y + self.shift[1],
            idx[2] as i64 + self.shift[2],
        ]
        .map(|v| v as usize)
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        let (c0, s0) = self.rotate_xy(1, 0);
        [
            [c0 as f64, -s0 as f64, 0.0],
            [s0 as f64, c0 as f64, 0.0],
            [0.0, 0.0, 1.0],
        ]
    }

    /// World translation `s` with the rotation taken about the pivot center.
    fn translation(&self, g: &SparseVoxelGrid) -> [f64; 3] {
        let c = g.center(self.pivot);
        let m = self.matrix();
        let cs = g.cell_size();
        std::array::from_fn(|a| c[a] - (0..3).map(|b| m[a][b] * c[b]).sum::<f64>() + self.shift[a] as f64 * cs[a])
    }

    fn point(&self, p: [f64; 3], g: &SparseVoxelGrid) -> [f64; 3] {
        let m = self.matrix();
        let s = self.translation(g);
        std::array::from_fn(|a| (0..3).map(|b| m[a][b] * p[b]).sum::<f64>() + s[a])
    }
}

#[test]
fn vga_forward_is_equivariant_under_lattice_motions() {
    let cfg = VgaConfig {
        grid: 3,
        hidden: 12,
        width: 8,
        lidar_width: 6,
        ..VgaConfig::default()
    };
    let mut params = ParamSet::new(4);
    init_vga(&mut params, &cfg);
    let cam = CameraModel::forward_facing(64, 64, 1.0, 1.8).unwrap();
    let f_sffa = random_tensor(&[16, 16, cfg.width], 21);
    let motions = [
        Motion {
            quarter_turns: 0,
            pivot: [6, 16, 1],
            shift: [3, -2, 0],
        },
        Motion {
            quarter_turns: 0,
            pivot: [6, 16, 1],
            shift: [-1, 4, 1],
        },
        Motion {
            quarter_turns: 1,
            pivot: [6, 16, 1],
            shift: [0, 0, 0],
        },
        Motion {
            quarter_turns: 2,
            pivot: [7, 15, 1],
            shift: [2, 1, 0],
        },
        Motion {
            quarter_turns: 3,
            pivot: [6, 17, 1],
            shift: [0, -3, 0],
        },
    ];
    for (n, m) in motions.iter().enumerate() {
        let entries = random_entries(cfg.lidar_width, n as u64);
        let g = grid(entries.clone(), cfg.lidar_width);
        let moved_g = grid(
            entries.into_iter().map(|(i, f)| (m.index(i), f)).collect(),
            cfg.lidar_width,
        );
        let bbox = Box3D::new([13.3, 0.4, 0.8], [4.2, 1.8, 1.5], 0.25, ObjectClass::Vehicle).unwrap();
        let moved_box = Box3D {
            center: m.point(bbox.center, &g),
            yaw: bbox.yaw + FRAC_PI_2 * m.quarter_turns as f64,
            ..bbox
        };
        let moved_cam = cam.moved(&m.matrix(), m.translation(&g));
        let a = vga_forward(&bbox, &g, &f_sffa, &cam, &cfg, &params).unwrap();
        let b = vga_forward(&moved_box, &moved_g, &f_sffa, &moved_cam, &cfg, &params).unwrap();
        let d = a.max_abs_diff(&b);
        assert!(d <= 1e-6, "motion {n}: {d}");
        assert!(a.data().iter().any(|v| *v != 0.0));
    }
}
