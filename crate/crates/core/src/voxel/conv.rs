use std::collections::BTreeSet;

use super::fps::{fps, KeyPointSet};
use super::grid::{local_features, voxelize, SparseVoxelGrid, VoxelConfig, VoxelIndex};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::scene::PointCloud;

pub const BACKBONE_PREFIX: &str = "voxel";

/// Kernel taps in `(dx, dy, dz)` order matching the `[3, 3, 3, Cin, Cout]`
/// kernel layout, offsets in `{-1, 0, 1}`.
fn taps() -> impl Iterator<Item = (usize, [i64; 3])> {
    (0..27).map(|t| (t, [(t / 9) as i64 - 1, (t / 3 % 3) as i64 - 1, (t % 3) as i64 - 1]))
}

fn offset(base: [i64; 3], d: [i64; 3], ext: [usize; 3]) -> Option<VoxelIndex> {
    let mut out = [0; 3];
    for a in 0..3 {
        let v = base[a] + d[a];
        if v < 0 || v >= ext[a] as i64 {
            return None;
        }
        out[a] = v as usize;
    }
    Some(out)
}

pub fn init_conv(params: &mut ParamSet, prefix: &str, c_in: usize, c_out: usize) {
    params.init_uniform(&format!("{prefix}.kernel"), &[3, 3, 3, c_in, c_out], 27 * c_in);
    params.init_uniform(&format!("{prefix}.bias"), &[c_out], 27 * c_in);
}

/// 3×3×3 sparse convolution followed by bias and ReLU.
///
/// Stride 1 is submanifold: outputs sit exactly on the input sites. Stride 2
/// emits one output per occupied 2×2×2 block at `floor(i / 2)`, gathering
/// inputs at `2o + d` for `d` in `{-1, 0, 1}`³. Absent inputs count as zero.
pub fn sparse_conv3(grid: &SparseVoxelGrid, params: &ParamSet, prefix: &str, stride: usize) -> Result<SparseVoxelGrid> {
    let kernel = params.get(&format!("{prefix}.kernel"))?;
    let bias = params.get(&format!("{prefix}.bias"))?;
    let ks = kernel.shape();
    if ks.len() != 5 || ks[..3] != [3, 3, 3] || ks[3] != grid.width() || bias.shape() != [ks[4]] {
        return Err(Error::Config(format!(
            "{prefix}: kernel {:?} / bias {:?} do not fit input width {}",
            ks,
            bias.shape(),
            grid.width()
        )));
    }
    let (c_in, c_out) = (ks[3], ks[4]);
    let (out_idx, out_ext, out_stride): (Vec<VoxelIndex>, [usize; 3], usize) = match stride {
        1 => (grid.indices().to_vec(), grid.extents(), grid.stride()),
        2 => {
            let set: BTreeSet<VoxelIndex> = grid.indices().iter().map(|i| i.map(|x| x / 2)).collect();
            (
                set.into_iter().collect(),
                grid.extents().map(|x| x.div_ceil(2)),
                grid.stride() * 2,
            )
        }
        s => return Err(Error::Config(format!("{prefix}: stride {s} not in {{1, 2}}"))),
    };
    if out_stride > 8 {
        return Err(Error::Config(format!("{prefix}: stride would exceed 8")));
    }
    let kd = kernel.data();
    let mut entries = Vec::with_capacity(out_idx.len());
    for o in out_idx {
        let base = o.map(|x| (x * stride) as i64);
        let mut acc = bias.data().to_vec();
        for (t, d) in taps() {
            let Some(src) = offset(base, d, grid.extents()).and_then(|i| grid.get(i)) else {
                continue;
            };
            let w = &kd[t * c_in * c_out..(t + 1) * c_in * c_out];
            for (ci, &x) in src.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &w[ci * c_out..(ci + 1) * c_out];
                for (a, &k) in acc.iter_mut().zip(row) {
                    *a += x * k;
                }
            }
        }
        entries.push((o, acc.into_iter().map(|v| v.max(0.0)).collect()));
    }
    SparseVoxelGrid::new(entries, c_out, out_ext, out_stride, grid.geometry())
}

fn stage_prefix(stage: usize, kind: &str) -> String {
    format!("{BACKBONE_PREFIX}.stage{stage}.{kind}")
}

pub fn init_backbone(params: &mut ParamSet, cfg: &VoxelConfig) {
    let w = cfg.stage_widths;
    init_conv(params, &stage_prefix(0, "subm"), VoxelConfig::INPUT_WIDTH, w[0]);
    for s in 1..4 {
        init_conv(params, &stage_prefix(s, "down"), w[s - 1], w[s]);
        init_conv(params, &stage_prefix(s, "subm"), w[s], w[s]);
    }
}

/// Backbone output: grids at strides 1, 2, 4, 8 plus FPS keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFeatures {
    pub stages: Vec<SparseVoxelGrid>,
    pub keypoints: KeyPointSet,
}

impl LidarFeatures {
    pub fn stage(&self, stride: usize) -> Option<&SparseVoxelGrid> {
        self.stages.iter().find(|g| g.stride() == stride)
    }
}

/// Voxelize, then a submanifold conv at stride 1 and, for each later stage,
/// a stride-2 conv followed by a submanifold conv.
pub fn lidar_backbone(cloud: &PointCloud, cfg: &VoxelConfig, params: &ParamSet) -> Result<LidarFeatures> {
    let raw = voxelize(cloud, cfg)?;
    let mut g = sparse_conv3(&local_features(&raw)?, params, &stage_prefix(0, "subm"), 1)?;
    let mut stages = vec![g.clone()];
    for s in 1..4 {
        g = sparse_conv3(&g, params, &stage_prefix(s, "down"), 2)?;
        g = sparse_conv3(&g, params, &stage_prefix(s, "subm"), 1)?;
        stages.push(g.clone());
    }
    let in_range = PointCloud::new(
        cloud
            .points()
            .iter()
            .filter(|p| cfg.index_of(p.xyz()).is_some())
            .copied()
            .collect(),
    )?;
    let keypoints = if in_range.is_empty() {
        KeyPointSet::default()
    } else {
        fps(&in_range, cfg.num_keypoints, cfg.fps_seed)?
    };
    Ok(LidarFeatures { stages, keypoints })
}

/// Dense `X x Y x Z x C` copy of a grid, zeros where unoccupied.
pub fn densify(grid: &SparseVoxelGrid) -> Tensor {
    let e = grid.extents();
    let c = grid.width();
    let mut t = Tensor::zeros(&[e[0], e[1], e[2], c]);
    for (idx, f) in grid.iter() {
        t.row_mut((idx[0] * e[1] + idx[1]) * e[2] + idx[2]).copy_from_slice(f);
    }
    t
}
