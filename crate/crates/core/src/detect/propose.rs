use super::boxes::{decode_residual, Box3D, ObjectClass, Residual};
use super::DetectConfig;
use crate::error::{Error, Result};
use crate::numerics::{linear, sigmoid_scalar, ParamSet, Tensor};

/// Outputs per class of the proposal head: objectness logit + 7 residuals.
pub const HEAD_CHANNELS: usize = 8;

pub const PROPOSAL_HEAD: &str = "detect.proposal_head";

/// Candidate boxes in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    boxes: Vec<Box3D>,
}

impl ProposalSet {
    /// Sorts `boxes` by descending score (stable) and truncates to `top_n`.
    pub fn from_boxes(mut boxes: Vec<Box3D>, top_n: usize) -> Self {
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        boxes.truncate(top_n);
        Self { boxes }
    }

    pub fn boxes(&self) -> &[Box3D] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn into_boxes(self) -> Vec<Box3D> {
        self.boxes
    }
}

pub fn init_proposal_head(params: &mut ParamSet, in_width: usize) {
    params.init_linear(PROPOSAL_HEAD, in_width, ObjectClass::ALL.len() * HEAD_CHANNELS);
}

/// Anchor of `class` centered on BEV cell `(row, col)` of an `h x w` grid.
/// Rows run along +x, columns along +y.
pub fn cell_anchor(cfg: &DetectConfig, class: ObjectClass, row: usize, col: usize, h: usize, w: usize) -> Box3D {
    let [x0, x1, y0, y1] = cfg.bev_range;
    let cx = x0 + (row as f64 + 0.5) * (x1 - x0) / h as f64;
    let cy = y0 + (col as f64 + 0.5) * (y1 - y0) / w as f64;
    let a = &cfg.anchors[class.index()];
    Box3D {
        center: [cx, cy, a.z],
        size: a.size,
        yaw: 0.0,
        class,
        score: 0.0,
    }
}

/// BEV cell containing the world point `(x, y)`, if inside the BEV range.
pub fn cell_of(cfg: &DetectConfig, x: f64, y: f64, h: usize, w: usize) -> Option<(usize, usize)> {
    let [x0, x1, y0, y1] = cfg.bev_range;
    let r = ((x - x0) / (x1 - x0) * h as f64).floor();
    let c = ((y - y0) / (y1 - y0) * w as f64).floor();
    (r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w).then_some((r as usize, c as usize))
}

/// Dense anchor head over a BEV feature map `H x W x C`.
///
/// Every (class, cell) pair yields one candidate, enumerated class-major then
/// row-major; candidates below `cfg.score_threshold` are dropped and the best
/// `cfg.proposal_pool` are kept (ties keep enumeration order).
pub fn propose(f_bev: &Tensor, params: &ParamSet, cfg: &DetectConfig) -> Result<ProposalSet> {
    propose_masked(f_bev, None, params, cfg)
}

/// As [`propose`], but only cells with `support[row * W + col]` set yield
/// candidates.
pub fn propose_masked(
    f_bev: &Tensor,
    support: Option<&[bool]>,
    params: &ParamSet,
    cfg: &DetectConfig,
) -> Result<ProposalSet> {
    if f_bev.rank() != 3 {
        return Err(Error::dim(
            "propose",
            format!("expected H x W x C, got {:?}", f_bev.shape()),
        ));
    }
    let (h, w) = (f_bev.shape()[0], f_bev.shape()[1]);
    if support.is_some_and(|m| m.len() != h * w) {
        return Err(Error::dim("propose", format!("support mask must have {} cells", h * w)));
    }
    let out = linear(
        f_bev,
        params.get(&format!("{PROPOSAL_HEAD}.weight"))?,
        Some(params.get(&format!("{PROPOSAL_HEAD}.bias"))?),
    )?;
    let mut candidates = Vec::new();
    for class in ObjectClass::ALL {
        let base = class.index() * HEAD_CHANNELS;
        for cell in 0..h * w {
            if support.is_some_and(|m| !m[cell]) {
                continue;
            }
            let o = &out.row(cell)[base..base + HEAD_CHANNELS];
            let score = sigmoid_scalar(o[0]);
            if score < cfg.score_threshold {
                continue;
            }
            let anchor = cell_anchor(cfg, class, cell / w, cell % w, h, w);
            let r: Residual = o[1..].try_into().unwrap();
            let mut b = decode_residual(&r, &anchor);
            if !b.size.iter().all(|s| s.is_finite() && *s > 0.0) || !b.center.iter().all(|c| c.is_finite()) {
                continue;
            }
            b.score = score;
            candidates.push(b);
        }
    }
    Ok(ProposalSet::from_boxes(candidates, cfg.proposal_pool))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_head(params: &mut ParamSet, c: usize) {
        init_proposal_head(params, c);
        params.zero_prefix(PROPOSAL_HEAD);
    }

    #[test]
    fn zero_weights_give_row_major_prefix() {
        let cfg = DetectConfig::default();
        let mut p = ParamSet::new(0);
        zero_head(&mut p, 3);
        let f = crate::numerics::testing::random_tensor(&[4, 5, 3], 1);
        let mut cfg2 = cfg.clone();
        cfg2.proposal_pool = 6;
        let props = propose(&f, &p, &cfg2).unwrap();
        assert_eq!(props.len(), 6);
        for (i, b) in props.boxes().iter().enumerate() {
            assert_eq!(b.score, 0.5);
            assert_eq!(b.class, ObjectClass::Vehicle);
            let want = cell_anchor(&cfg2, ObjectClass::Vehicle, i / 5, i % 5, 4, 5);
            assert_eq!(b.center, want.center);
        }
    }

    #[test]
    fn single_peak_wins() {
        let cfg = DetectConfig::default();
        let mut p = ParamSet::new(0);
        zero_head(&mut p, 1);
        // objectness logit of the vehicle class reads channel 0 directly
        p.get_mut(&format!("{PROPOSAL_HEAD}.weight")).unwrap().data_mut()[0] = 1.0;
        let mut f = Tensor::zeros(&[6, 6, 1]);
        f.data_mut()[2 * 6 + 4] = 5.0;
        let props = propose(&f, &p, &cfg).unwrap();
        let top = props.boxes()[0];
        let want = cell_anchor(&cfg, ObjectClass::Vehicle, 2, 4, 6, 6);
        assert_eq!(top.center, want.center);
        assert!(top.score > 0.99);
        assert!(props.boxes().windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn cell_lookup_matches_anchor_centers() {
        let cfg = DetectConfig::default();
        for (r, c) in [(0, 0), (3, 7), (15, 15)] {
            let a = cell_anchor(&cfg, ObjectClass::Pedestrian, r, c, 16, 16);
            assert_eq!(cell_of(&cfg, a.center[0], a.center[1], 16, 16), Some((r, c)));
        }
        assert_eq!(cell_of(&cfg, -1.0, 0.0, 16, 16), None);
    }

    #[test]
    fn support_mask_restricts_cells() {
        let cfg = DetectConfig::default();
        let mut p = ParamSet::new(0);
        zero_head(&mut p, 2);
        let f = crate::numerics::testing::random_tensor(&[3, 3, 2], 4);
        let mut mask = vec![false; 9];
        mask[4] = true;
        let props = propose_masked(&f, Some(&mask), &p, &cfg).unwrap();
        assert_eq!(props.len(), 2);
        for b in props.boxes() {
            assert_eq!(b.center[..2], cell_anchor(&cfg, b.class, 1, 1, 3, 3).center[..2]);
        }
        assert!(propose_masked(&f, Some(&mask[..4]), &p, &cfg).is_err());
    }
}
