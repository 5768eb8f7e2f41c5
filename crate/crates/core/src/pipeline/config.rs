use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::detect::{DetectConfig, Difficulty};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, IouKind};
use crate::gcfat::GcfatConfig;
use crate::numerics::DropoutMode;
use crate::scene::SceneConfig;
use crate::sffa::SffaConfig;
use crate::vga::{GateMode, VgaConfig};
use crate::voxel::{BevReduce, VoxelConfig};

/// Every knob of the pipeline, grouped by module.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Test-harness mode: proposals come from ground-truth peaks.
    pub oracle_assist: bool,
    /// Ablation: replace `F^GCFAT` by zeros.
    pub zero_image: bool,
    pub scene: SceneConfig,
    pub voxel: VoxelConfig,
    pub gcfat: GcfatConfig,
    pub sffa: SffaConfig,
    pub vga: VgaConfig,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            oracle_assist: false,
            zero_image: false,
            scene: SceneConfig::default(),
            voxel: VoxelConfig::default(),
            gcfat: GcfatConfig::default(),
            sffa: SffaConfig::default(),
            vga: VgaConfig::default(),
            detect: DetectConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn level_of(stride: usize) -> Option<usize> {
    [1, 2, 4, 8].iter().position(|&s| s == stride)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.voxel.validate()?;
        self.gcfat.validate()?;
        self.sffa.validate()?;
        self.vga.validate()?;
        self.eval.validate()?;
        let c = self.gcfat.width;
        if self.sffa.width != c || self.vga.width != c {
            return Err(Error::Config(format!(
                "fusion widths disagree: gcfat {c}, sffa {}, vga {}",
                self.sffa.width, self.vga.width
            )));
        }
        let level = level_of(self.vga.lidar_stride).expect("validated stride");
        if self.vga.lidar_width != self.voxel.stage_widths[level] {
            return Err(Error::Config(format!(
                "vga lidar_width {} != stride-{} stage width {}",
                self.vga.lidar_width, self.vga.lidar_stride, self.voxel.stage_widths[level]
            )));
        }
        let d = &self.detect;
        if !(d.bev_range[0] < d.bev_range[1] && d.bev_range[2] < d.bev_range[3]) {
            return Err(Error::Config("detect bev_range must be ordered".into()));
        }
        if ![d.first_nms_iou, d.final_nms_iou]
            .iter()
            .all(|t| (0.0..=1.0).contains(t))
        {
            return Err(Error::Config("NMS thresholds must be in [0, 1]".into()));
        }
        if d.proposals_top_n == 0 || d.proposal_pool == 0 || d.refine_hidden == 0 {
            return Err(Error::Config("detect counts must be >= 1".into()));
        }
        if d.anchors.iter().any(|a| a.size.iter().any(|s| !(*s > 0.0))) {
            return Err(Error::Config("anchor sizes must be positive".into()));
        }
        Ok(())
    }

    /// Sectioned `key = value` text; [`parse`](Self::parse) inverts it.
    pub fn to_ini(&self) -> String {
        let mut ini = Ini::new();
        for (section, entries) in self.sections() {
            let mut s = ini.with_section(Some(section));
            for (k, v) in entries {
                s.set(k, v);
            }
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    /// Parses config text over the defaults; unknown sections or keys are
    /// errors.
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(Error::Config("config keys must be inside a [section]".into()));
                }
                continue;
            };
            for (key, value) in props.iter() {
                cfg.apply(section, key, value.trim())
                    .map_err(|e| Error::Config(format!("[{section}] {key}: {e}")))?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn sections(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let (s, v, g, f, a, d, e) = (
            &self.scene,
            &self.voxel,
            &self.gcfat,
            &self.sffa,
            &self.vga,
            &self.detect,
            &self.eval,
        );
        vec![
            (
                "pipeline",
                vec![
                    ("seed", self.seed.to_string()),
                    ("out_dir", self.out_dir.display().to_string()),
                    ("oracle_assist", self.oracle_assist.to_string()),
                    ("zero_image", self.zero_image.to_string()),
                ],
            ),
            (
                "scene",
                vec![
                    ("num_boxes", s.num_boxes.to_string()),
                    ("min_range", fl(s.min_range)),
                    ("max_range", fl(s.max_range)),
                    ("max_azimuth", fl(s.max_azimuth)),
                    ("vehicle_fraction", fl(s.vehicle_fraction)),
                    ("box_points_at_10m", fl(s.box_points_at_10m)),
                    ("max_box_points", s.max_box_points.to_string()),
                    ("ground_points", s.ground_points.to_string()),
                    ("ground_min_range", fl(s.ground_min_range)),
                    ("range_noise", fl(s.range_noise)),
                    ("image_height", s.image_height.to_string()),
                    ("image_width", s.image_width.to_string()),
                    ("hfov", fl(s.hfov)),
                    ("mount_height", fl(s.mount_height)),
                    ("min_gap", fl(s.min_gap)),
                    ("max_attempts", s.max_attempts.to_string()),
                ],
            ),
            (
                "voxel",
                vec![
                    ("voxel_size", list(&v.voxel_size)),
                    ("range_min", list(&v.range_min)),
                    ("range_max", list(&v.range_max)),
                    ("stage_widths", ulist(&v.stage_widths)),
                    ("num_keypoints", v.num_keypoints.to_string()),
                    ("fps_seed", v.fps_seed.map_or("none".into(), |x| x.to_string())),
                    (
                        "bev_reduce",
                        match v.bev_reduce {
                            BevReduce::Mean => "mean",
                            BevReduce::Max => "max",
                        }
                        .into(),
                    ),
                ],
            ),
            (
                "gcfat",
                vec![
                    ("width", g.width.to_string()),
                    ("heads", g.heads.to_string()),
                    ("window", ulist(&[g.window.0, g.window.1])),
                    ("patch", g.patch.to_string()),
                    ("depths", ulist(&g.depths)),
                    ("mlp_ratio", g.mlp_ratio.to_string()),
                    ("attn_dropout", fl(g.attn_dropout)),
                    (
                        "dropout_mode",
                        match g.dropout_mode {
                            DropoutMode::Eval => "eval",
                            DropoutMode::Train => "train",
                        }
                        .into(),
                    ),
                    ("depth_scale", fl(g.depth_scale)),
                    ("out_hw", ulist(&[g.out_hw.0, g.out_hw.1])),
                ],
            ),
            (
                "sffa",
                vec![
                    ("width", f.width.to_string()),
                    ("heads", f.heads.to_string()),
                    ("scale", f.scale.map_or("none".into(), fl)),
                    ("eps", fl(f.eps)),
                    ("zero_affinity", f.zero_affinity.to_string()),
                ],
            ),
            (
                "vga",
                vec![
                    ("grid", a.grid.to_string()),
                    ("margin", fl(a.margin)),
                    ("hidden", a.hidden.to_string()),
                    ("width", a.width.to_string()),
                    ("lidar_width", a.lidar_width.to_string()),
                    ("lidar_stride", a.lidar_stride.to_string()),
                    ("radius", a.radius.map_or("none".into(), fl)),
                    (
                        "gate",
                        match a.gate {
                            GateMode::PerChannel => "per_channel",
                            GateMode::PerPoint => "per_point",
                        }
                        .into(),
                    ),
                ],
            ),
            (
                "detect",
                vec![
                    ("bev_range", list(&d.bev_range)),
                    ("vehicle_size", list(&d.anchors[0].size)),
                    ("vehicle_z", fl(d.anchors[0].z)),
                    ("pedestrian_size", list(&d.anchors[1].size)),
                    ("pedestrian_z", fl(d.anchors[1].z)),
                    ("score_threshold", fl(d.score_threshold)),
                    ("proposal_pool", d.proposal_pool.to_string()),
                    ("first_nms_iou", fl(d.first_nms_iou)),
                    ("proposals_top_n", d.proposals_top_n.to_string()),
                    ("final_nms_iou", fl(d.final_nms_iou)),
                    ("max_detections", d.max_detections.to_string()),
                    ("refine_hidden", d.refine_hidden.to_string()),
                ],
            ),
            (
                "eval",
                vec![
                    ("iou_vehicle", fl(e.iou_vehicle)),
                    ("iou_pedestrian", fl(e.iou_pedestrian)),
                    (
                        "iou_kind",
                        match e.iou_kind {
                            IouKind::Bev => "bev",
                            IouKind::ThreeD => "3d",
                        }
                        .into(),
                    ),
                    (
                        "level",
                        match e.level {
                            Difficulty::L1 => "L1",
                            Difficulty::L2 => "L2",
                        }
                        .into(),
                    ),
                    ("max_range", e.max_range.map_or("none".into(), fl)),
                ],
            ),
        ]
    }

    fn apply(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        match (section, key) {
            ("pipeline", "seed") => self.seed = num(v)?,
            ("pipeline", "out_dir") => self.out_dir = PathBuf::from(v),
            ("pipeline", "oracle_assist") => self.oracle_assist = num(v)?,
            ("pipeline", "zero_image") => self.zero_image = num(v)?,

            ("scene", "num_boxes") => self.scene.num_boxes = num(v)?,
            ("scene", "min_range") => self.scene.min_range = num(v)?,
            ("scene", "max_range") => self.scene.max_range = num(v)?,
            ("scene", "max_azimuth") => self.scene.max_azimuth = num(v)?,
            ("scene", "vehicle_fraction") => self.scene.vehicle_fraction = num(v)?,
            ("scene", "box_points_at_10m") => self.scene.box_points_at_10m = num(v)?,
            ("scene", "max_box_points") => self.scene.max_box_points = num(v)?,
            ("scene", "ground_points") => self.scene.ground_points = num(v)?,
            ("scene", "ground_min_range") => self.scene.ground_min_range = num(v)?,
            ("scene", "range_noise") => self.scene.range_noise = num(v)?,
            ("scene", "image_height") => self.scene.image_height = num(v)?,
            ("scene", "image_width") => self.scene.image_width = num(v)?,
            ("scene", "hfov") => self.scene.hfov = num(v)?,
            ("scene", "mount_height") => self.scene.mount_height = num(v)?,
            ("scene", "min_gap") => self.scene.min_gap = num(v)?,
            ("scene", "max_attempts") => self.scene.max_attempts = num(v)?,

            ("voxel", "voxel_size") => self.voxel.voxel_size = arr(v)?,
            ("voxel", "range_min") => self.voxel.range_min = arr(v)?,
            ("voxel", "range_max") => self.voxel.range_max = arr(v)?,
            ("voxel", "stage_widths") => self.voxel.stage_widths = arr(v)?,
            ("voxel", "num_keypoints") => self.voxel.num_keypoints = num(v)?,
            ("voxel", "fps_seed") => self.voxel.fps_seed = opt(v)?,
            ("voxel", "bev_reduce") => {
                self.voxel.bev_reduce = choice(v, &[("mean", BevReduce::Mean), ("max", BevReduce::Max)])?
            }

            ("gcfat", "width") => self.gcfat.width = num(v)?,
            ("gcfat", "heads") => self.gcfat.heads = num(v)?,
            ("gcfat", "window") => self.gcfat.window = pair(v)?,
            ("gcfat", "patch") => self.gcfat.patch = num(v)?,
            ("gcfat", "depths") => self.gcfat.depths = vlist(v)?,
            ("gcfat", "mlp_ratio") => self.gcfat.mlp_ratio = num(v)?,
            ("gcfat", "attn_dropout") => self.gcfat.attn_dropout = num(v)?,
            ("gcfat", "dropout_mode") => {
                self.gcfat.dropout_mode = choice(v, &[("eval", DropoutMode::Eval), ("train", DropoutMode::Train)])?
            }
            ("gcfat", "depth_scale") => self.gcfat.depth_scale = num(v)?,
            ("gcfat", "out_hw") => self.gcfat.out_hw = pair(v)?,

            ("sffa", "width") => self.sffa.width = num(v)?,
            ("sffa", "heads") => self.sffa.heads = num(v)?,
            ("sffa", "scale") => self.sffa.scale = opt(v)?,
            ("sffa", "eps") => self.sffa.eps = num(v)?,
            ("sffa", "zero_affinity") => self.sffa.zero_affinity = num(v)?,

            ("vga", "grid") => self.vga.grid = num(v)?,
            ("vga", "margin") => self.vga.margin = num(v)?,
            ("vga", "hidden") => self.vga.hidden = num(v)?,
            ("vga", "width") => self.vga.width = num(v)?,
            ("vga", "lidar_width") => self.vga.lidar_width = num(v)?,
            ("vga", "lidar_stride") => self.vga.lidar_stride = num(v)?,
            ("vga", "radius") => self.vga.radius = opt(v)?,
            ("vga", "gate") => {
                self.vga.gate = choice(
                    v,
                    &[("per_channel", GateMode::PerChannel), ("per_point", GateMode::PerPoint)],
                )?
            }

            ("detect", "bev_range") => self.detect.bev_range = arr(v)?,
            ("detect", "vehicle_size") => self.detect.anchors[0].size = arr(v)?,
            ("detect", "vehicle_z") => self.detect.anchors[0].z = num(v)?,
            ("detect", "pedestrian_size") => self.detect.anchors[1].size = arr(v)?,
            ("detect", "pedestrian_z") => self.detect.anchors[1].z = num(v)?,
            ("detect", "score_threshold") => self.detect.score_threshold = num(v)?,
            ("detect", "proposal_pool") => self.detect.proposal_pool = num(v)?,
            ("detect", "first_nms_iou") => self.detect.first_nms_iou = num(v)?,
            ("detect", "proposals_top_n") => self.detect.proposals_top_n = num(v)?,
            ("detect", "final_nms_iou") => self.detect.final_nms_iou = num(v)?,
            ("detect", "max_detections") => self.detect.max_detections = num(v)?,
            ("detect", "refine_hidden") => self.detect.refine_hidden = num(v)?,

            ("eval", "iou_vehicle") => self.eval.iou_vehicle = num(v)?,
            ("eval", "iou_pedestrian") => self.eval.iou_pedestrian = num(v)?,
            ("eval", "iou_kind") => self.eval.iou_kind = choice(v, &[("bev", IouKind::Bev), ("3d", IouKind::ThreeD)])?,
            ("eval", "level") => self.eval.level = choice(v, &[("L1", Difficulty::L1), ("L2", Difficulty::L2)])?,
            ("eval", "max_range") => self.eval.max_range = opt(v)?,
            _ => return Err(Error::Config("unknown key".into())),
        }
        Ok(())
    }
}

/// Shortest text that parses back to the same `f64`.
fn fl(x: f64) -> String {
    format!("{x:?}")
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fl(x)).collect::<Vec<_>>().join(", ")
}

fn ulist(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("cannot parse `{v}`")))
}

fn vlist<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn arr<T: FromStr, const N: usize>(v: &str) -> Result<[T; N]> {
    vlist(v)?
        .try_into()
        .map_err(|_| Error::Config(format!("expected {N} comma-separated values, got `{v}`")))
}

fn pair(v: &str) -> Result<(usize, usize)> {
    let [a, b] = arr(v)?;
    Ok((a, b))
}

fn opt<T: FromStr>(v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn choice<T: Copy>(v: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == v).map(|o| o.1).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|o| o.0).collect();
        Error::Config(format!("`{v}` is not one of {}", names.join(", ")))
    })
}
