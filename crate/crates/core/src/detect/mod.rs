//! Oriented boxes, rotated-BEV IoU, greedy NMS, the minimal anchor proposal
//! head and the RoI refinement head.

mod boxes;
mod iou;
mod nms;
mod propose;
mod refine;

pub use boxes::{
    decode_residual, encode_residual, format_box, format_boxes, normalize_yaw, parse_boxes, read_boxes, write_boxes,
    Box3D, Difficulty, GroundTruth, ObjectClass, Residual, BOX_HEADER,
};
pub use iou::{bev_intersection, bev_iou, clip_polygon, iou_3d, polygon_area, z_overlap};
pub use nms::{nms, nms_indices, score_order};
pub use propose::{
    cell_anchor, cell_of, init_proposal_head, propose, propose_masked, ProposalSet, HEAD_CHANNELS, PROPOSAL_HEAD,
};
pub use refine::{refine, refine_spec, REFINE_HEAD};

/// Anchor template of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTemplate {
    pub size: [f64; 3],
    /// Center height above the ground plane.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    /// `[x_min, x_max, y_min, y_max]` covered by the BEV map, meters.
    pub bev_range: [f64; 4],
    /// Indexed by [`ObjectClass::index`].
    pub anchors: [AnchorTemplate; 2],
    /// Candidates below this objectness are discarded before NMS.
    pub score_threshold: f64,
    /// Best candidates kept ahead of first-stage NMS.
    pub proposal_pool: usize,
    pub first_nms_iou: f64,
    /// Proposals forwarded to the refinement stage.
    pub proposals_top_n: usize,
    pub final_nms_iou: f64,
    pub max_detections: usize,
    pub refine_hidden: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            bev_range: [0.0, 64.0, -32.0, 32.0],
            anchors: [
                AnchorTemplate {
                    size: [4.5, 1.9, 1.6],
                    z: 0.8,
                },
                AnchorTemplate {
                    size: [0.8, 0.8, 1.8],
                    z: 0.9,
                },
            ],
            score_threshold: 0.0,
            proposal_pool: 64,
            first_nms_iou: 0.7,
            proposals_top_n: 8,
            final_nms_iou: 0.1,
            max_detections: 100,
            refine_hidden: 64,
        }
    }
}
