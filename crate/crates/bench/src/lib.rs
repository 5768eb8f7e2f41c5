//! Fixtures shared by the kernel benchmarks.

use fusion_core::detect::{Box3D, ObjectClass};
use fusion_core::numerics::testing::random_tensor;
use fusion_core::pipeline::{init_pipeline_params, PipelineConfig};
use fusion_core::scene::{synth_scene, Scene};
use fusion_core::voxel::{voxelize, SparseVoxelGrid, VoxelConfig};
use fusion_core::ParamSet;

pub fn scene(seed: u64) -> Scene {
    synth_scene(&PipelineConfig::default().scene, seed).expect("default scene")
}

pub fn pipeline() -> (PipelineConfig, ParamSet) {
    let cfg = PipelineConfig::default();
    let params = init_pipeline_params(&cfg).expect("default params");
    (cfg, params)
}

pub fn voxel_grid(seed: u64) -> SparseVoxelGrid {
    voxelize(&scene(seed).cloud, &VoxelConfig::default()).expect("voxelize")
}

/// `n` boxes scattered over a 30 m square with varied yaw and score.
pub fn boxes(n: usize, seed: u64) -> Vec<Box3D> {
    let r = random_tensor(&[n, 5], seed);
    (0..n)
        .map(|i| {
            let v = r.row(i);
            Box3D::new(
                [15.0 + 15.0 * v[0], 15.0 * v[1], 0.8],
                [4.5, 1.9, 1.6],
                3.0 * v[2],
                ObjectClass::Vehicle,
            )
            .expect("valid box")
            .with_score(0.5 + 0.5 * v[3])
        })
        .collect()
}
