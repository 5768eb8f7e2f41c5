//! Synthetic paired LiDAR/camera scenes and the geometric projection that
//! turns a point cloud into a sparse depth image.

mod bundle;
mod camera;
mod cloud;
mod depth;
mod synth;

pub use bundle::{
    read_bundle, read_labels, write_bundle, BOXES_FILE, CAMERA_FILE, CLOUD_FILE, IMAGE_FILE, LABELS_FILE,
};
pub use camera::CameraModel;
pub use cloud::{LidarPoint, PointCloud};
pub use depth::{depth_map, project_points, DepthMap, Projection, DEPTH_SENTINEL, FILL_MIN_NEIGHBORS};
pub use synth::{render_image, synth_scene, Scene, SceneConfig};
