use super::{GcfatConfig, GCFAT_PREFIX};
use crate::error::{Error, Result};
use crate::numerics::{GradTape, ParamSet, RowWeights, Tensor, Var};
use crate::scene::DepthMap;

/// Non-overlapping `p x p` patches of an `H x W x C` image as rows of length
/// `p * p * C` in `(dy, dx, channel)` order. Images are zero-padded on the
/// right and bottom to a multiple of `p`.
pub fn unfold_patches(img: &Tensor, p: usize) -> Result<(Tensor, (usize, usize))> {
    let [h, w, c] = match img.shape() {
        [h, w, c] => [*h, *w, *c],
        s => {
            return Err(Error::dim(
                "patch embed",
                format!("expected H x W x C image, got {s:?}"),
            ))
        }
    };
    if p == 0 || h == 0 || w == 0 {
        return Err(Error::Config("patch size and image must be non-empty".into()));
    }
    let (hp, wp) = (h.div_ceil(p), w.div_ceil(p));
    let mut out = Tensor::zeros(&[hp * wp, p * p * c]);
    for pr in 0..hp {
        for pc in 0..wp {
            let row = out.row_mut(pr * wp + pc);
            for dy in 0..p {
                for dx in 0..p {
                    let (y, x) = (pr * p + dy, pc * p + dx);
                    if y < h && x < w {
                        let dst = (dy * p + dx) * c;
                        row[dst..dst + c].copy_from_slice(img.row(y * w + x));
                    }
                }
            }
        }
    }
    Ok((out, (hp, wp)))
}

pub fn patch_embed_t(
    t: &mut GradTape,
    params: &ParamSet,
    img: &Tensor,
    p: usize,
    prefix: &str,
) -> Result<(Var, (usize, usize))> {
    let (cols, hw) = unfold_patches(img, p)?;
    let x = t.leaf(cols);
    Ok((t.linear(params, x, prefix, true)?, hw))
}

/// RGB patch embedding to `H' x W' x C`.
pub fn patch_embed(img: &Tensor, cfg: &GcfatConfig, params: &ParamSet) -> Result<Tensor> {
    let mut t = GradTape::new();
    let (y, (h, w)) = patch_embed_t(&mut t, params, img, cfg.patch, &format!("{GCFAT_PREFIX}.patch_embed"))?;
    t.value(y).reshape(&[h, w, cfg.width])
}

/// Averaging weights mapping an `h x w` grid onto `oh x ow` bins; bins may
/// overlap when the grid does not divide evenly.
pub(crate) fn adaptive_pool_weights(h: usize, w: usize, oh: usize, ow: usize) -> RowWeights {
    let bin = |i: usize, n: usize, o: usize| (i * n / o, ((i + 1) * n).div_ceil(o));
    let mut weights = Vec::with_capacity(oh * ow);
    for a in 0..oh {
        let (r0, r1) = bin(a, h, oh);
        for b in 0..ow {
            let (c0, c1) = bin(b, w, ow);
            let k = 1.0 / ((r1 - r0) * (c1 - c0)) as f64;
            weights.push((r0..r1).flat_map(|r| (c0..c1).map(move |c| (r * w + c, k))).collect());
        }
    }
    weights
}

/// Global query `q_g` as `(h_p * w_p) x C` rows. Depth (scaled, replicated
/// to three channels) goes through its own patch embedder, is average-pooled
/// onto the window grid and projected. A map with no valid pixel yields zeros.
pub fn make_global_query_t(t: &mut GradTape, params: &ParamSet, depth: &DepthMap, cfg: &GcfatConfig) -> Result<Var> {
    cfg.validate()?;
    if depth.valid_count() == 0 {
        return Ok(t.leaf(Tensor::zeros(&[cfg.query_tokens(), cfg.width])));
    }
    let img = depth.to_tensor3(cfg.depth_scale);
    let (x, (h, w)) = patch_embed_t(t, params, &img, cfg.patch, &format!("{GCFAT_PREFIX}.depth_embed"))?;
    let pooled = t.combine_rows(x, adaptive_pool_weights(h, w, cfg.window.0, cfg.window.1))?;
    t.linear(params, pooled, &format!("{GCFAT_PREFIX}.query_proj"), true)
}

/// `h_p x w_p x C` global query.
pub fn make_global_query(depth: &DepthMap, cfg: &GcfatConfig, params: &ParamSet) -> Result<Tensor> {
    let mut t = GradTape::new();
    let q = make_global_query_t(&mut t, params, depth, cfg)?;
    t.value(q).reshape(&[cfg.window.0, cfg.window.1, cfg.width])
}
