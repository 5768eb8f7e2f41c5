use super::attention::{gda_t, lmsa_t};
use super::embed::{make_global_query_t, patch_embed_t};
use super::{block_mlp, init_attention_block, GcfatConfig, GCFAT_PREFIX};
use crate::error::Result;
use crate::numerics::{GradTape, ParamSet, Tensor, Var, NORM_EPS};
use crate::scene::DepthMap;

fn block_prefix(stage: usize, block: usize, kind: &str) -> String {
    format!("{GCFAT_PREFIX}.s{stage}.b{block}.{kind}")
}

pub fn init_gcfat(params: &mut ParamSet, cfg: &GcfatConfig) {
    let c = cfg.width;
    let patch_in = cfg.patch * cfg.patch * 3;
    params.init_linear(&format!("{GCFAT_PREFIX}.patch_embed"), patch_in, c);
    params.init_linear(&format!("{GCFAT_PREFIX}.depth_embed"), patch_in, c);
    params.init_linear(&format!("{GCFAT_PREFIX}.query_proj"), c, c);
    for (s, &depth) in cfg.depths.iter().enumerate() {
        if s > 0 {
            params.init_layer_norm(&format!("{GCFAT_PREFIX}.merge{s}.norm"), 4 * c);
            params.init_projection(&format!("{GCFAT_PREFIX}.merge{s}.proj"), 4 * c, c);
        }
        for b in 0..depth {
            init_attention_block(params, &block_prefix(s, b, "lmsa"), cfg, true);
            init_attention_block(params, &block_prefix(s, b, "gda"), cfg, false);
        }
    }
    params.init_layer_norm(&format!("{GCFAT_PREFIX}.final_norm"), c);
}

/// 2×2 patch merge: concatenated neighbors (zero past the edge), norm,
/// projection back to `C`.
fn merge(
    t: &mut GradTape,
    params: &ParamSet,
    x: Var,
    hw: (usize, usize),
    stage: usize,
) -> Result<(Var, (usize, usize))> {
    let (h, w) = hw;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut parts = Vec::with_capacity(4);
    for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let idx: Vec<Option<usize>> = (0..oh * ow)
            .map(|o| {
                let (r, c) = (2 * (o / ow) + dy, 2 * (o % ow) + dx);
                (r < h && c < w).then_some(r * w + c)
            })
            .collect();
        parts.push(t.gather_rows(x, &idx)?);
    }
    let cat = t.concat_cols(&parts)?;
    let n = t.layer_norm_p(params, cat, &format!("{GCFAT_PREFIX}.merge{stage}.norm"), NORM_EPS)?;
    Ok((
        t.linear(params, n, &format!("{GCFAT_PREFIX}.merge{stage}.proj"), false)?,
        (oh, ow),
    ))
}

/// Nearest-neighbor resample of raster token rows.
pub(crate) fn resample_nearest(t: &mut GradTape, x: Var, from: (usize, usize), to: (usize, usize)) -> Result<Var> {
    if from == to {
        return Ok(x);
    }
    let idx: Vec<Option<usize>> = (0..to.0 * to.1)
        .map(|o| Some((o / to.1) * from.0 / to.0 * from.1 + (o % to.1) * from.1 / to.1))
        .collect();
    t.gather_rows(x, &idx)
}

/// `F^GCFAT` as `(out_h * out_w) x C` rows on the tape.
pub fn gcfat_forward_t(
    t: &mut GradTape,
    params: &ParamSet,
    img: &Tensor,
    depth: &DepthMap,
    cfg: &GcfatConfig,
    seed: u64,
) -> Result<Var> {
    cfg.validate()?;
    let (mut x, mut hw) = patch_embed_t(t, params, img, cfg.patch, &format!("{GCFAT_PREFIX}.patch_embed"))?;
    let q_g = make_global_query_t(t, params, depth, cfg)?;
    for (s, &depth) in cfg.depths.iter().enumerate() {
        if s > 0 {
            (x, hw) = merge(t, params, x, hw, s)?;
        }
        for b in 0..depth {
            x = lmsa_t(t, params, x, hw, cfg, &block_prefix(s, b, "lmsa"))?;
            let g = block_prefix(s, b, "gda");
            let block_seed = seed.wrapping_add(((s as u64) << 32) | b as u64);
            x = gda_t(t, params, x, hw, q_g, cfg, &g, block_seed)?;
            let m = t.mlp(params, x, &block_mlp(&g, cfg))?;
            x = t.add(x, m)?;
        }
    }
    let x = t.layer_norm_p(params, x, &format!("{GCFAT_PREFIX}.final_norm"), NORM_EPS)?;
    resample_nearest(t, x, hw, cfg.out_hw)
}

/// `F^GCFAT` as `out_h x out_w x C`.
pub fn gcfat_forward(
    img: &Tensor,
    depth: &DepthMap,
    cfg: &GcfatConfig,
    params: &ParamSet,
    seed: u64,
) -> Result<Tensor> {
    let mut t = GradTape::new();
    let y = gcfat_forward_t(&mut t, params, img, depth, cfg, seed)?;
    t.value(y).reshape(&[cfg.out_hw.0, cfg.out_hw.1, cfg.width])
}
