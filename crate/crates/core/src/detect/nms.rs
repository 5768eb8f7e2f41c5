use super::boxes::Box3D;
use super::iou::bev_iou;

/// Detection order used throughout: descending score, ties by input position.
pub fn score_order(dets: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy non-maximum suppression on BEV IoU. Returns input indices of the
/// kept boxes in score order; a box is dropped when its IoU with any kept box
/// exceeds `iou_thresh`. Stops after `top_n` boxes.
pub fn nms_indices(dets: &[Box3D], iou_thresh: f64, top_n: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        if kept.len() >= top_n {
            break;
        }
        if kept.iter().all(|&k| bev_iou(&dets[k], &dets[i]) <= iou_thresh) {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(dets: &[Box3D], iou_thresh: f64, top_n: usize) -> Vec<Box3D> {
    nms_indices(dets, iou_thresh, top_n)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}
