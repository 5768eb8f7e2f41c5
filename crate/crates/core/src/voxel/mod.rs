//! LiDAR branch: voxelization with mean features, furthest point sampling,
//! sparse 3×3×3 convolutions over four strides, and the BEV collapse.

mod bev;
mod conv;
mod fps;
mod grid;

pub use bev::bev_collapse;
pub use conv::{densify, init_backbone, init_conv, lidar_backbone, sparse_conv3, LidarFeatures, BACKBONE_PREFIX};
pub use fps::{fps, KeyPointSet};
pub use grid::{
    local_features, voxelize, voxelize_with_counts, BevReduce, GridGeometry, SparseVoxelGrid, VoxelConfig, VoxelIndex,
};
