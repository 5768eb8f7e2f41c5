use std::fmt::Write as _;

use crate::detect::{refine_spec, Box3D, ObjectClass};
use crate::error::{Result, StageContext};
use crate::gcfat::{gcfat_forward_t, gda_t, init_attention_block, init_gcfat, GcfatConfig};
use crate::numerics::testing::random_tensor;
use crate::numerics::{grad_check, GradCheckReport, GradTape, ParamSet, Var};
use crate::scene::{CameraModel, DepthMap};
use crate::sffa::{init_sffa, sffa_forward_t, SffaConfig};
use crate::vga::{init_vga, vga_forward_t, VgaConfig};
use crate::voxel::{SparseVoxelGrid, VoxelConfig};

/// Relative error every block must stay below.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Central-difference step.
pub const GRAD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradSuiteOptions {
    pub seed: u64,
    /// Test fixture: scale every matmul input gradient by this factor.
    pub corrupt_backward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSuiteReport {
    /// Keyed by block: `gda`, `sffa`, `vga`, `composed`.
    pub blocks: Vec<(String, GradCheckReport)>,
}

impl GradSuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.blocks.iter().all(|(_, r)| r.passes(GRAD_TOLERANCE))
    }

    /// `key=value` lines per block plus an overall verdict.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, r) in &self.blocks {
            let _ = writeln!(s, "{name}.max_rel_error={:e}", r.max_rel_error);
            let _ = writeln!(s, "{name}.worst={}", r.worst.as_deref().unwrap_or("none"));
            let _ = writeln!(s, "{name}.entries={}", r.checked_entries);
        }
        let _ = writeln!(s, "max_rel_error={:e}", self.max_rel_error());
        let _ = writeln!(s, "tolerance={GRAD_TOLERANCE:e}");
        let _ = writeln!(s, "pass={}", self.passes());
        s
    }
}

fn tiny_gcfat() -> GcfatConfig {
    GcfatConfig {
        width: 8,
        heads: 2,
        window: (2, 2),
        patch: 4,
        depths: vec![1, 1],
        mlp_ratio: 2,
        out_hw: (4, 4),
        ..GcfatConfig::default()
    }
}

fn tiny_vga(width: usize) -> VgaConfig {
    VgaConfig {
        grid: 2,
        hidden: 6,
        width,
        lidar_width: 5,
        ..VgaConfig::default()
    }
}

/// Stride-4 grid of random features around `(10, 0, 0.8)`.
fn roi_grid(width: usize, seed: u64) -> Result<SparseVoxelGrid> {
    let vc = VoxelConfig::default();
    let mut entries = Vec::new();
    let mut n = 0;
    for i in 4..7 {
        for j in 15..18 {
            for k in 0..2 {
                entries.push(([i, j, k], random_tensor(&[width], seed + n).into_data()));
                n += 1;
            }
        }
    }
    let ext = vc.stage_extents(2);
    SparseVoxelGrid::new(entries, width, ext, 4, vc.geometry())
}

fn roi_box() -> Result<Box3D> {
    Box3D::new([10.0, 0.3, 0.8], [4.2, 1.8, 1.5], 0.4, ObjectClass::Vehicle)
}

fn run(
    name: &str,
    params: &ParamSet,
    opts: &GradSuiteOptions,
    f: impl Fn(&mut GradTape, &ParamSet) -> Result<Var>,
) -> Result<(String, GradCheckReport)> {
    let report = grad_check(
        |t, p| {
            if let Some(k) = opts.corrupt_backward {
                t.corrupt_matmul_backward(k);
            }
            f(t, p)
        },
        params,
        GRAD_STEP,
    )?;
    Ok((name.to_string(), report))
}

fn check_gda(opts: &GradSuiteOptions) -> Result<(String, GradCheckReport)> {
    let cfg = tiny_gcfat();
    let mut p = ParamSet::new(opts.seed);
    init_attention_block(&mut p, "gda", &cfg, false);
    let x = random_tensor(&[16, 8], opts.seed + 1);
    let q = random_tensor(&[4, 8], opts.seed + 2);
    let head = random_tensor(&[16, 8], opts.seed + 3);
    run("gda", &p, opts, |t, p| {
        let (xv, qv) = (t.leaf(x.clone()), t.leaf(q.clone()));
        let y = gda_t(t, p, xv, (4, 4), qv, &cfg, "gda", 0)?;
        t.weighted_sum(y, &head)
    })
}

fn check_sffa(opts: &GradSuiteOptions) -> Result<(String, GradCheckReport)> {
    let cfg = SffaConfig {
        width: 8,
        ..SffaConfig::default()
    };
    let mut p = ParamSet::new(opts.seed);
    init_sffa(&mut p, &cfg);
    let l = random_tensor(&[16, 8], opts.seed + 4);
    let g = random_tensor(&[16, 8], opts.seed + 5);
    let head = random_tensor(&[16, 8], opts.seed + 6);
    run("sffa", &p, opts, |t, p| {
        let (a, b) = (t.leaf(l.clone()), t.leaf(g.clone()));
        let y = sffa_forward_t(t, p, a, b, &cfg)?;
        t.weighted_sum(y, &head)
    })
}

fn check_vga(opts: &GradSuiteOptions) -> Result<(String, GradCheckReport)> {
    let cfg = tiny_vga(4);
    let mut p = ParamSet::new(opts.seed);
    init_vga(&mut p, &cfg);
    let vox = roi_grid(cfg.lidar_width, opts.seed + 7)?;
    let img = random_tensor(&[16, 4], opts.seed + 8);
    let cam = CameraModel::forward_facing(16, 16, 1.0, 1.8)?;
    let bbox = roi_box()?;
    let head = random_tensor(&[cfg.points(), 4], opts.seed + 9);
    run("vga", &p, opts, |t, p| {
        let iv = t.leaf(img.clone());
        let y = vga_forward_t(t, p, &bbox, &vox, iv, (4, 4), &cam, &cfg)?;
        t.weighted_sum(y, &head)
    })
}

/// Image encoder, BEV fusion, RoI fusion and the refinement head on one
/// 16x16 frame, differentiated end to end.
fn check_composed(opts: &GradSuiteOptions) -> Result<(String, GradCheckReport)> {
    let gc = tiny_gcfat();
    let sc = SffaConfig {
        width: 8,
        ..SffaConfig::default()
    };
    let vc = tiny_vga(8);
    let spec = refine_spec(vc.grid, vc.width, 6);
    let mut p = ParamSet::new(opts.seed);
    init_gcfat(&mut p, &gc);
    init_sffa(&mut p, &sc);
    init_vga(&mut p, &vc);
    p.init_mlp(&spec);

    let img = random_tensor(&[16, 16, 3], opts.seed + 10).map(|v| 0.5 + 0.5 * v);
    let depth: Vec<f64> = (0..256)
        .map(|i| if i % 4 == 0 { 0.0 } else { 6.0 + (i % 11) as f64 })
        .collect();
    let depth = DepthMap::from_raw(16, 16, depth)?;
    let lidar = random_tensor(&[16, 8], opts.seed + 11);
    let vox = roi_grid(vc.lidar_width, opts.seed + 12)?;
    let cam = CameraModel::forward_facing(16, 16, 1.0, 1.8)?;
    let bbox = roi_box()?;
    let head = random_tensor(&[1, 8], opts.seed + 13);
    run("composed", &p, opts, |t, p| {
        let f_img = gcfat_forward_t(t, p, &img, &depth, &gc, 0)?;
        let l = t.leaf(lidar.clone());
        let f_sffa = sffa_forward_t(t, p, l, f_img, &sc)?;
        let roi = vga_forward_t(t, p, &bbox, &vox, f_sffa, (4, 4), &cam, &vc)?;
        let flat = t.reshape(roi, &[1, spec.input_width()])?;
        let out = t.mlp(p, flat, &spec)?;
        t.weighted_sum(out, &head)
    })
}

/// Finite-difference checks of every parameter in the GDA, SFFA and VGA
/// blocks and in a composed tiny head. Inputs are at most 16x16x8.
pub fn grad_suite(opts: &GradSuiteOptions) -> Result<GradSuiteReport> {
    let blocks = vec![
        check_gda(opts).in_module("gcfat")?,
        check_sffa(opts).in_module("sffa")?,
        check_vga(opts).in_module("vga")?,
        check_composed(opts).in_module("pipeline")?,
    ];
    Ok(GradSuiteReport { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        let r = grad_suite(&GradSuiteOptions::default()).unwrap();
        let keys: Vec<&str> = r.blocks.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["gda", "sffa", "vga", "composed"]);
        assert!(r.passes(), "{}", r.to_text());
    }

    #[test]
    fn corrupted_backward_fails_the_suite() {
        let r = grad_suite(&GradSuiteOptions {
            seed: 1,
            corrupt_backward: Some(1.5),
        })
        .unwrap();
        assert!(!r.passes());
        assert!(r.to_text().contains("pass=false"));
    }
}
