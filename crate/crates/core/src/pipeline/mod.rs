//! End-to-end inference: depth projection, LiDAR backbone, image encoder,
//! BEV fusion, proposals, RoI grid fusion, refinement and final NMS.

mod config;
mod gradsuite;

pub use config::PipelineConfig;
pub use gradsuite::{grad_suite, GradSuiteOptions, GradSuiteReport, GRAD_STEP, GRAD_TOLERANCE};

use crate::detect::{
    cell_anchor, cell_of, encode_residual, init_proposal_head, nms, propose_masked, refine, refine_spec, Box3D,
    GroundTruth, ObjectClass, ProposalSet, HEAD_CHANNELS, PROPOSAL_HEAD, REFINE_HEAD,
};
use crate::error::{Error, Result, StageContext};
use crate::gcfat::{gcfat_forward, init_gcfat};
use crate::numerics::{linear, ParamSet, Tensor};
use crate::scene::{depth_map, Scene};
use crate::sffa::{init_sffa, sffa_forward};
use crate::vga::{init_vga, vga_forward};
use crate::voxel::{bev_collapse, init_backbone, lidar_backbone, SparseVoxelGrid};

/// Bias-free projection of the LiDAR BEV map to the fusion width.
pub const LIDAR_BEV_PROJ: &str = "pipeline.lidar_bev_proj";

/// Objectness logit magnitude written into the oracle BEV map.
pub const ORACLE_LOGIT: f64 = 12.0;

/// Score floor for first-stage candidates in oracle-assist mode.
pub const ORACLE_SCORE_THRESHOLD: f64 = 0.5;

/// Stride of the grid collapsed into the BEV map.
const BEV_STRIDE: usize = 8;

/// Every parameter the pipeline reads, randomly initialized from `cfg.seed`.
pub fn init_pipeline_params(cfg: &PipelineConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let mut p = ParamSet::new(cfg.seed);
    let bev_width = cfg.voxel.stage_widths[3];
    init_backbone(&mut p, &cfg.voxel);
    init_gcfat(&mut p, &cfg.gcfat);
    p.init_projection(LIDAR_BEV_PROJ, bev_width, cfg.gcfat.width);
    init_sffa(&mut p, &cfg.sffa);
    init_vga(&mut p, &cfg.vga);
    init_proposal_head(&mut p, bev_width);
    p.init_mlp(&refine_spec(cfg.vga.grid, cfg.vga.width, cfg.detect.refine_hidden));
    Ok(p)
}

/// Oracle-assist parameters: the proposal head copies the first
/// `2 * HEAD_CHANNELS` input channels through unchanged and the refinement
/// head is zeroed, so final boxes equal the proposals.
pub fn oracle_params(params: &ParamSet) -> Result<ParamSet> {
    let mut p = params.clone();
    p.zero_prefix(PROPOSAL_HEAD);
    p.zero_prefix(REFINE_HEAD);
    let w = p.get_mut(&format!("{PROPOSAL_HEAD}.weight"))?;
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    if rows < cols {
        return Err(Error::Config(format!(
            "oracle mode needs a BEV width of at least {cols}, got {rows}"
        )));
    }
    for i in 0..cols {
        w.data_mut()[i * cols + i] = 1.0;
    }
    Ok(p)
}

/// BEV map whose head outputs (under [`oracle_params`]) put a strong
/// objectness peak with exact residuals on each ground-truth center cell.
pub fn oracle_bev(gt: &[GroundTruth], cfg: &PipelineConfig) -> Tensor {
    let (h, w) = cfg.gcfat.out_hw;
    let width = cfg.voxel.stage_widths[3];
    let mut t = Tensor::zeros(&[h, w, width]);
    for cell in 0..h * w {
        for class in ObjectClass::ALL {
            t.row_mut(cell)[class.index() * HEAD_CHANNELS] = -ORACLE_LOGIT;
        }
    }
    for g in gt {
        let b = &g.bbox;
        let Some((r, c)) = cell_of(&cfg.detect, b.center[0], b.center[1], h, w) else {
            continue;
        };
        let anchor = cell_anchor(&cfg.detect, b.class, r, c, h, w);
        let base = b.class.index() * HEAD_CHANNELS;
        let row = t.row_mut(r * w + c);
        row[base] = ORACLE_LOGIT;
        row[base + 1..base + HEAD_CHANNELS].copy_from_slice(&encode_residual(b, &anchor));
    }
    t
}

/// Switches that change what a run does, as opposed to model shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep intermediate tensors and grids in the output.
    pub collect_stages: bool,
}

/// Detections plus, on request, named intermediate results.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub detections: Vec<Box3D>,
    pub proposals: ProposalSet,
    pub tensors: Vec<(String, Tensor)>,
    pub grids: Vec<(String, SparseVoxelGrid)>,
}

/// BEV cells of the `h x w` map that contain at least one LiDAR point.
fn bev_support(scene: &Scene, cfg: &PipelineConfig, h: usize, w: usize) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for p in scene.cloud.points() {
        if cfg.voxel.index_of(p.xyz()).is_none() {
            continue;
        }
        if let Some((r, c)) = cell_of(&cfg.detect, p.xyz()[0], p.xyz()[1], h, w) {
            mask[r * w + c] = true;
        }
    }
    mask
}

/// Runs the full pipeline on one scene. With `cfg.oracle_assist` the
/// proposal stage reads [`oracle_bev`] built from the scene's ground truth;
/// pass parameters from [`oracle_params`] for that mode.
pub fn run_scene(scene: &Scene, cfg: &PipelineConfig, params: &ParamSet, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate().in_module("config")?;
    let mut tensors = Vec::new();
    let mut grids = Vec::new();
    let keep = opts.collect_stages;

    let depth = depth_map(&scene.cloud, &scene.camera);
    if keep {
        let d = Tensor::new(vec![depth.height(), depth.width(), 1], depth.raw().to_vec()).in_module("scene")?;
        tensors.push(("depth".into(), d));
    }

    let lidar = lidar_backbone(&scene.cloud, &cfg.voxel, params).in_module("voxel")?;
    if keep {
        for g in &lidar.stages {
            grids.push((format!("voxel_stride{}", g.stride()), g.clone()));
        }
    }
    let bev_grid = lidar
        .stage(BEV_STRIDE)
        .ok_or_else(|| Error::Config("backbone has no stride-8 stage".into()))
        .in_module("voxel")?;
    let f_bev = bev_collapse(bev_grid, cfg.gcfat.out_hw, cfg.voxel.bev_reduce).in_module("voxel")?;

    let f_gcfat = if cfg.zero_image {
        let (h, w) = cfg.gcfat.out_hw;
        Tensor::zeros(&[h, w, cfg.gcfat.width])
    } else {
        gcfat_forward(&scene.image, &depth, &cfg.gcfat, params, cfg.seed).in_module("gcfat")?
    };
    let f_lidar = linear(&f_bev, params.get(&format!("{LIDAR_BEV_PROJ}.weight"))?, None)
        .and_then(|t| t.reshape(f_gcfat.shape()))
        .in_module("sffa")?;
    let f_sffa = sffa_forward(&f_lidar, &f_gcfat, &cfg.sffa, params).in_module("sffa")?;
    if keep {
        tensors.push(("f_lidar_bev".into(), f_bev.clone()));
        tensors.push(("f_gcfat".into(), f_gcfat.clone()));
        tensors.push(("f_sffa".into(), f_sffa.clone()));
    }

    let (h, w) = cfg.gcfat.out_hw;
    // without LiDAR evidence in a cell the learned head proposes nothing there
    let support = bev_support(scene, cfg, h, w);
    let mut det_cfg = cfg.detect.clone();
    let proposal_map = if cfg.oracle_assist {
        det_cfg.score_threshold = det_cfg.score_threshold.max(ORACLE_SCORE_THRESHOLD);
        oracle_bev(&scene.gt, cfg)
    } else {
        f_bev
    };
    let mask = (!cfg.oracle_assist).then_some(support.as_slice());
    let candidates = propose_masked(&proposal_map, mask, params, &det_cfg).in_module("detect")?;
    let proposals = ProposalSet::from_boxes(
        nms(candidates.boxes(), det_cfg.first_nms_iou, det_cfg.proposals_top_n),
        det_cfg.proposals_top_n,
    );

    let roi_grid = lidar
        .stage(cfg.vga.lidar_stride)
        .ok_or_else(|| Error::Config(format!("backbone has no stride-{} stage", cfg.vga.lidar_stride)))
        .in_module("vga")?;
    let feats = proposals
        .boxes()
        .iter()
        .map(|b| vga_forward(b, roi_grid, &f_sffa, &scene.camera, &cfg.vga, params))
        .collect::<Result<Vec<_>>>()
        .in_module("vga")?;
    if keep {
        for (i, f) in feats.iter().enumerate() {
            tensors.push((format!("vga_roi{i}"), f.clone()));
        }
    }

    let spec = refine_spec(cfg.vga.grid, cfg.vga.width, det_cfg.refine_hidden);
    let refined = refine(&proposals, &feats, params, &spec).in_module("detect")?;
    let detections = nms(&refined, det_cfg.final_nms_iou, det_cfg.max_detections);
    if detections
        .iter()
        .any(|b| !b.score.is_finite() || !b.center.iter().chain(&b.size).all(|x| x.is_finite()))
    {
        return Err(Error::Input("non-finite detection".into())).in_module("detect");
    }
    Ok(RunOutput {
        detections,
        proposals,
        tensors,
        grids,
    })
}
