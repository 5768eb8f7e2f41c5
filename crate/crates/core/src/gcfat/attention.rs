use super::{block_mlp, GcfatConfig, WindowPartition};
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, DropoutMode, GradTape, ParamSet, Tensor, Var, NORM_EPS};

fn mix_seed(seed: u64, window: usize, head: usize) -> u64 {
    seed ^ (window as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (head as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Per-head scaled dot-product attention, heads concatenated along columns.
/// `q` is `Tq x C`, `k` and `v` are `Tk x C`.
#[allow(clippy::too_many_arguments)]
fn multi_head(
    t: &mut GradTape,
    cfg: &GcfatConfig,
    q: Var,
    k: Var,
    v: Var,
    dropout: Option<(u64, usize)>,
    probe: &mut Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * d, (h + 1) * d);
        let qh = t.slice_cols(q, lo, hi)?;
        let kh = t.slice_cols(k, lo, hi)?;
        let vh = t.slice_cols(v, lo, hi)?;
        let kt = t.transpose(kh)?;
        let s = t.matmul(qh, kt)?;
        let s = t.scale(s, scale);
        let mut a = t.softmax_rows(s);
        if let Some(p) = probe.as_deref_mut() {
            p.push(t.value(a).clone());
        }
        if let Some((seed, window)) = dropout {
            if cfg.dropout_mode == DropoutMode::Train && cfg.attn_dropout > 0.0 {
                let m = dropout_mask(
                    t.value(a).shape(),
                    cfg.attn_dropout,
                    mix_seed(seed, window, h),
                    DropoutMode::Train,
                )?;
                let m = t.leaf(m);
                a = t.mul(a, m)?;
            }
        }
        heads.push(t.matmul(a, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        t.concat_cols(&heads)
    }
}

/// Concatenates per-window outputs (processed in `order`) and restores
/// raster token order.
fn unwindow(t: &mut GradTape, part: &WindowPartition, order: &[usize], outs: &[Var]) -> Result<Var> {
    let n = part.grid_hw.0 * part.grid_hw.1;
    let mut pos = vec![None; n];
    let mut k = 0;
    for &w in order {
        for tok in part.tokens(w) {
            pos[tok] = Some(k);
            k += 1;
        }
    }
    if k != n || pos.iter().any(Option::is_none) {
        return Err(Error::Input("window order must visit every window exactly once".into()));
    }
    let cat = t.concat_rows(outs)?;
    t.gather_rows(cat, &pos)
}

fn check_order(part: &WindowPartition, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; part.count()];
    for &w in order {
        if w >= seen.len() || std::mem::replace(&mut seen[w], true) {
            return Err(Error::Input(format!("invalid window order {order:?}")));
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::Input(format!("window order {order:?} misses windows")))
    }
}

fn tokens_of(t: &GradTape, x: Var, hw: (usize, usize), width: usize) -> Result<()> {
    let v = t.value(x);
    if v.rows() != hw.0 * hw.1 || v.last_dim() != width {
        return Err(Error::dim(
            "attention",
            format!("tokens {:?} vs grid {hw:?} width {width}", v.shape()),
        ));
    }
    Ok(())
}

/// Windowed multi-head self-attention output (before residual and norm).
#[allow(clippy::too_many_arguments)]
pub(crate) fn lmsa_attention_t(
    t: &mut GradTape,
    params: &ParamSet,
    x: Var,
    hw: (usize, usize),
    cfg: &GcfatConfig,
    prefix: &str,
    order: &[usize],
    mut probe: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    tokens_of(t, x, hw, cfg.width)?;
    let part = WindowPartition::new(hw, cfg.window)?;
    check_order(&part, order)?;
    let q = t.linear(params, x, &format!("{prefix}.q"), true)?;
    let k = t.linear(params, x, &format!("{prefix}.k"), true)?;
    let v = t.linear(params, x, &format!("{prefix}.v"), true)?;
    let mut outs = Vec::with_capacity(order.len());
    for &w in order {
        let idx: Vec<Option<usize>> = part.tokens(w).into_iter().map(Some).collect();
        let qw = t.gather_rows(q, &idx)?;
        let kw = t.gather_rows(k, &idx)?;
        let vw = t.gather_rows(v, &idx)?;
        outs.push(multi_head(t, cfg, qw, kw, vw, None, &mut probe)?);
    }
    unwindow(t, &part, order, &outs)
}

/// Full LMSA block: `x1 = LN(x + attn(x))`, output `x1 + MLP(x1)`.
pub fn lmsa_t(
    t: &mut GradTape,
    params: &ParamSet,
    x: Var,
    hw: (usize, usize),
    cfg: &GcfatConfig,
    prefix: &str,
) -> Result<Var> {
    let order: Vec<usize> = (0..WindowPartition::new(hw, cfg.window)?.count()).collect();
    let a = lmsa_attention_t(t, params, x, hw, cfg, prefix, &order, None)?;
    let r = t.add(x, a)?;
    let x1 = t.layer_norm_p(params, r, &format!("{prefix}.norm"), NORM_EPS)?;
    let m = t.mlp(params, x1, &block_mlp(prefix, cfg))?;
    t.add(x1, m)
}

/// GDA: the shared global query attends to each window's keys and values.
/// Returns `LN(x + αv)` with `αv` scattered back onto the token grid.
#[allow(clippy::too_many_arguments)]
fn gda_inner(
    t: &mut GradTape,
    params: &ParamSet,
    x: Var,
    hw: (usize, usize),
    q_g: Var,
    cfg: &GcfatConfig,
    prefix: &str,
    seed: u64,
    order: &[usize],
    mut probe: Option<&mut Vec<Tensor>>,
) -> Result<Var> {
    tokens_of(t, x, hw, cfg.width)?;
    let qs = t.value(q_g).shape().to_vec();
    if t.value(q_g).rows() != cfg.query_tokens() || t.value(q_g).last_dim() != cfg.width {
        return Err(Error::dim(
            "gda",
            format!("global query {qs:?}, expected {:?}x{}", cfg.window, cfg.width),
        ));
    }
    let q_g = if qs.len() == 2 {
        q_g
    } else {
        t.reshape(q_g, &[cfg.query_tokens(), cfg.width])?
    };
    let part = WindowPartition::new(hw, cfg.window)?;
    check_order(&part, order)?;
    let k = t.linear(params, x, &format!("{prefix}.k"), true)?;
    let v = t.linear(params, x, &format!("{prefix}.v"), true)?;
    let mut outs = Vec::with_capacity(order.len());
    for &w in order {
        let idx: Vec<Option<usize>> = part.tokens(w).into_iter().map(Some).collect();
        let kw = t.gather_rows(k, &idx)?;
        let vw = t.gather_rows(v, &idx)?;
        let o = multi_head(t, cfg, q_g, kw, vw, Some((seed, w)), &mut probe)?;
        let keep: Vec<Option<usize>> = part.valid_slots(w).into_iter().map(Some).collect();
        outs.push(t.gather_rows(o, &keep)?);
    }
    let av = unwindow(t, &part, order, &outs)?;
    let r = t.add(x, av)?;
    t.layer_norm_p(params, r, &format!("{prefix}.norm"), NORM_EPS)
}

#[allow(clippy::too_many_arguments)]
pub fn gda_t(
    t: &mut GradTape,
    params: &ParamSet,
    x: Var,
    hw: (usize, usize),
    q_g: Var,
    cfg: &GcfatConfig,
    prefix: &str,
    seed: u64,
) -> Result<Var> {
    let order: Vec<usize> = (0..WindowPartition::new(hw, cfg.window)?.count()).collect();
    gda_inner(t, params, x, hw, q_g, cfg, prefix, seed, &order, None)
}

fn grid_of(feat: &Tensor) -> Result<(usize, usize)> {
    match feat.shape() {
        [h, w, _] => Ok((*h, *w)),
        s => Err(Error::dim("gcfat", format!("expected H x W x C, got {s:?}"))),
    }
}

pub fn lmsa(feat: &Tensor, cfg: &GcfatConfig, params: &ParamSet, prefix: &str) -> Result<Tensor> {
    let hw = grid_of(feat)?;
    let mut t = GradTape::new();
    let x = t.leaf(feat.reshape(&[hw.0 * hw.1, feat.last_dim()])?);
    let y = lmsa_t(&mut t, params, x, hw, cfg, prefix)?;
    t.value(y).reshape(feat.shape())
}

/// Attention output only (no residual, norm or MLP), for inspection.
pub fn lmsa_attention(feat: &Tensor, cfg: &GcfatConfig, params: &ParamSet, prefix: &str) -> Result<Tensor> {
    let hw = grid_of(feat)?;
    let mut t = GradTape::new();
    let x = t.leaf(feat.reshape(&[hw.0 * hw.1, feat.last_dim()])?);
    let order: Vec<usize> = (0..WindowPartition::new(hw, cfg.window)?.count()).collect();
    let y = lmsa_attention_t(&mut t, params, x, hw, cfg, prefix, &order, None)?;
    t.value(y).reshape(feat.shape())
}

/// Softmax affinities per window then per head.
pub fn lmsa_affinities(feat: &Tensor, cfg: &GcfatConfig, params: &ParamSet, prefix: &str) -> Result<Vec<Tensor>> {
    let hw = grid_of(feat)?;
    let mut t = GradTape::new();
    let x = t.leaf(feat.reshape(&[hw.0 * hw.1, feat.last_dim()])?);
    let order: Vec<usize> = (0..WindowPartition::new(hw, cfg.window)?.count()).collect();
    let mut probe = Vec::new();
    lmsa_attention_t(&mut t, params, x, hw, cfg, prefix, &order, Some(&mut probe))?;
    Ok(probe)
}

pub fn gda(
    feat: &Tensor,
    q_g: &Tensor,
    cfg: &GcfatConfig,
    params: &ParamSet,
    prefix: &str,
    seed: u64,
) -> Result<Tensor> {
    let order: Vec<usize> = (0..WindowPartition::new(grid_of(feat)?, cfg.window)?.count()).collect();
    gda_ordered(feat, q_g, cfg, params, prefix, seed, &order)
}

/// [`gda`] with windows visited in `order`.
pub fn gda_ordered(
    feat: &Tensor,
    q_g: &Tensor,
    cfg: &GcfatConfig,
    params: &ParamSet,
    prefix: &str,
    seed: u64,
    order: &[usize],
) -> Result<Tensor> {
    let hw = grid_of(feat)?;
    let mut t = GradTape::new();
    let x = t.leaf(feat.reshape(&[hw.0 * hw.1, feat.last_dim()])?);
    let q = t.leaf(q_g.clone());
    let y = gda_inner(&mut t, params, x, hw, q, cfg, prefix, seed, order, None)?;
    t.value(y).reshape(feat.shape())
}

/// Pre-dropout affinities `α` per window then per head.
pub fn gda_affinities(
    feat: &Tensor,
    q_g: &Tensor,
    cfg: &GcfatConfig,
    params: &ParamSet,
    prefix: &str,
) -> Result<Vec<Tensor>> {
    let hw = grid_of(feat)?;
    let mut t = GradTape::new();
    let x = t.leaf(feat.reshape(&[hw.0 * hw.1, feat.last_dim()])?);
    let q = t.leaf(q_g.clone());
    let order: Vec<usize> = (0..WindowPartition::new(hw, cfg.window)?.count()).collect();
    let mut probe = Vec::new();
    gda_inner(&mut t, params, x, hw, q, cfg, prefix, 0, &order, Some(&mut probe))?;
    Ok(probe)
}
