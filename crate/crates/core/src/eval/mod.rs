//! Greedy detection matching and AP / heading-weighted APH with all-points
//! interpolation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::detect::{bev_iou, iou_3d, normalize_yaw, score_order, Box3D, Difficulty, GroundTruth, ObjectClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IouKind {
    Bev,
    #[default]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => bev_iou(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_vehicle: f64,
    pub iou_pedestrian: f64,
    pub iou_kind: IouKind,
    /// L2 counts every ground truth; L1 ignores L2 ground truths and the
    /// detections matched to them.
    pub level: Difficulty,
    /// Drop ground truths and detections whose BEV range exceeds this.
    pub max_range: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_vehicle: 0.7,
            iou_pedestrian: 0.5,
            iou_kind: IouKind::ThreeD,
            level: Difficulty::L2,
            max_range: None,
        }
    }
}

impl EvalConfig {
    pub fn threshold(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Vehicle => self.iou_vehicle,
            ObjectClass::Pedestrian => self.iou_pedestrian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.iou_vehicle, self.iou_pedestrian]
            .iter()
            .all(|t| (0.0..=1.0).contains(t))
        {
            return Err(Error::Config("eval IoU thresholds must be in [0, 1]".into()));
        }
        if self.max_range.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::Config("eval max_range must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of matching one scene's detections (of one class) to its
/// ground truths. Indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub tp: Vec<bool>,
    /// Matched to a ground truth outside the evaluated level: neither TP
    /// nor FP.
    pub ignored: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
    /// `|Δθ|` wrapped to `[0, π]` for matched detections.
    pub heading_error: Vec<f64>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn num_tp(&self) -> usize {
        self.tp.iter().filter(|&&t| t).count()
    }
}

pub fn heading_error(a: f64, b: f64) -> f64 {
    let d = normalize_yaw(a - b).abs();
    d.min(PI)
}

pub fn heading_weight(err: f64) -> f64 {
    (1.0 - err.abs() / PI).max(0.0)
}

/// Greedy by descending score (stable): each detection takes the unmatched
/// ground truth with the highest IoU `>= iou_thresh`, lowest index on ties.
pub fn match_detections(
    dets: &[Box3D],
    gts: &[GroundTruth],
    iou_thresh: f64,
    level: Difficulty,
    kind: IouKind,
) -> MatchResult {
    let mut m = MatchResult {
        tp: vec![false; dets.len()],
        ignored: vec![false; dets.len()],
        matched_gt: vec![None; dets.len()],
        heading_error: vec![0.0; dets.len()],
        gt_matched: vec![false; gts.len()],
    };
    for d in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if m.gt_matched[g] {
                continue;
            }
            let iou = kind.iou(&dets[d], &gt.bbox);
            if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            m.gt_matched[g] = true;
            m.matched_gt[d] = Some(g);
            m.heading_error[d] = heading_error(dets[d].yaw, gts[g].bbox.yaw);
            if gts[g].difficulty > level {
                m.ignored[d] = true;
            } else {
                m.tp[d] = true;
            }
        }
    }
    m
}

/// One ranked detection for curve construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDet {
    pub score: f64,
    pub tp: bool,
    /// Heading weight of a TP; ignored for FPs.
    pub weight: f64,
}

/// A point of the (heading-weighted) precision–recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
    pub precision_h: f64,
    pub recall_h: f64,
}

/// PR points after each group of equal scores, highest score first.
pub fn pr_curve(dets: &[RankedDet], num_gt: usize) -> Result<Vec<PrPoint>> {
    if num_gt == 0 {
        return Err(Error::Undefined(
            "precision/recall undefined without ground truths".into(),
        ));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let (mut tp, mut n, mut tp_h) = (0usize, 0usize, 0.0);
    let mut pts = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let d = dets[i];
        n += 1;
        if d.tp {
            tp += 1;
            tp_h += d.weight;
        }
        let group_end = order.get(k + 1).is_none_or(|&j| dets[j].score != d.score);
        if group_end {
            pts.push(PrPoint {
                score: d.score,
                precision: tp as f64 / n as f64,
                recall: tp as f64 / num_gt as f64,
                precision_h: tp_h / n as f64,
                recall_h: tp_h / num_gt as f64,
            });
        }
    }
    Ok(pts)
}

fn area(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let pts: Vec<(f64, f64)> = points.collect();
    let mut env = vec![0.0; pts.len()];
    let mut best: f64 = 0.0;
    for i in (0..pts.len()).rev() {
        best = best.max(pts[i].0);
        env[i] = best;
    }
    let mut prev_r = 0.0;
    let mut a = 0.0;
    for (i, &(_, r)) in pts.iter().enumerate() {
        a += (r - prev_r) * env[i];
        prev_r = r;
    }
    a
}

/// All-points interpolated AP: `Σ (r_i - r_{i-1}) · max_{j >= i} p_j`.
pub fn average_precision(dets: &[RankedDet], num_gt: usize) -> Result<f64> {
    let pts = pr_curve(dets, num_gt)?;
    Ok(area(pts.iter().map(|p| (p.precision, p.recall))).clamp(0.0, 1.0))
}

/// AP with each TP weighted by its heading accuracy in both precision and
/// recall.
pub fn average_precision_heading(dets: &[RankedDet], num_gt: usize) -> Result<f64> {
    let pts = pr_curve(dets, num_gt)?;
    Ok(area(pts.iter().map(|p| (p.precision_h, p.recall_h))).clamp(0.0, 1.0))
}

/// Per-class metrics; `ap`/`aph` are `None` without ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: ObjectClass,
    pub ap: Option<f64>,
    pub aph: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
    pub num_tp: usize,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
}

impl EvalReport {
    pub fn class(&self, class: ObjectClass) -> &ClassMetrics {
        &self.classes[class.index()]
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        for m in &self.classes {
            let n = m.class.name();
            let _ = writeln!(s, "ap.{n}={}", fmt(m.ap));
            let _ = writeln!(s, "aph.{n}={}", fmt(m.aph));
            let _ = writeln!(s, "gt.{n}={}", m.num_gt);
            let _ = writeln!(s, "det.{n}={}", m.num_det);
            let _ = writeln!(s, "tp.{n}={}", m.num_tp);
        }
        s
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("class,score,precision,recall,precision_h,recall_h\n");
        for m in &self.classes {
            for p in &m.curve {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    m.class.name(),
                    p.score,
                    p.precision,
                    p.recall,
                    p.precision_h,
                    p.recall_h
                );
            }
        }
        s
    }
}

fn in_range(b: &Box3D, max_range: Option<f64>) -> bool {
    max_range.is_none_or(|r| b.center[0].hypot(b.center[1]) <= r)
}

/// Evaluates `(detections, ground truths)` pairs, one per scene.
pub fn evaluate(scenes: &[(Vec<Box3D>, Vec<GroundTruth>)], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut classes = Vec::new();
    for class in ObjectClass::ALL {
        let mut ranked = Vec::new();
        let (mut num_gt, mut num_det, mut num_tp) = (0, 0, 0);
        for (dets, gts) in scenes {
            let d: Vec<Box3D> = dets
                .iter()
                .filter(|b| b.class == class && in_range(b, cfg.max_range))
                .copied()
                .collect();
            let g: Vec<GroundTruth> = gts
                .iter()
                .filter(|g| g.bbox.class == class && in_range(&g.bbox, cfg.max_range))
                .copied()
                .collect();
            let m = match_detections(&d, &g, cfg.threshold(class), cfg.level, cfg.iou_kind);
            num_gt += g.iter().filter(|g| g.difficulty <= cfg.level).count();
            for (i, b) in d.iter().enumerate() {
                if m.ignored[i] {
                    continue;
                }
                num_det += 1;
                ranked.push(RankedDet {
                    score: b.score,
                    tp: m.tp[i],
                    weight: heading_weight(m.heading_error[i]),
                });
            }
            num_tp += m.num_tp();
        }
        let (ap, aph, curve) = if num_gt == 0 {
            (None, None, Vec::new())
        } else {
            (
                Some(average_precision(&ranked, num_gt)?),
                Some(average_precision_heading(&ranked, num_gt)?),
                pr_curve(&ranked, num_gt)?,
            )
        };
        classes.push(ClassMetrics {
            class,
            ap,
            aph,
            num_gt,
            num_det,
            num_tp,
            curve,
        });
    }
    Ok(EvalReport { classes })
}
