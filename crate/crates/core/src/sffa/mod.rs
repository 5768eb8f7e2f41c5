//! Cross-modal attention with LiDAR BEV tokens as queries and image tokens
//! as keys and values. ReLU replaces softmax and the attended values are
//! RMS-normalized before being merged back onto the image features.

use crate::error::{Error, Result};
use crate::numerics::{GradTape, ParamSet, Tensor, Var, NORM_EPS};

pub const SFFA_PREFIX: &str = "sffa";

#[derive(Debug, Clone, PartialEq)]
pub struct SffaConfig {
    pub width: usize,
    /// Always 1.
    pub heads: usize,
    /// Affinity scale; `None` uses `1/√C`.
    pub scale: Option<f64>,
    pub eps: f64,
    /// Ablation switch: force `β = 0`, leaving only the residual path.
    pub zero_affinity: bool,
}

impl Default for SffaConfig {
    fn default() -> Self {
        Self {
            width: 32,
            heads: 1,
            scale: None,
            eps: NORM_EPS,
            zero_affinity: false,
        }
    }
}

impl SffaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads != 1 {
            return Err(Error::Config(format!("sffa uses exactly one head, got {}", self.heads)));
        }
        if self.width == 0 || !(self.eps > 0.0) || self.scale.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Config(
                "sffa width, eps and scale must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn affinity_scale(&self) -> f64 {
        self.scale.unwrap_or(1.0 / (self.width as f64).sqrt())
    }
}

pub fn init_sffa(params: &mut ParamSet, cfg: &SffaConfig) {
    let c = cfg.width;
    for part in ["q", "k", "v", "merge"] {
        params.init_linear(&format!("{SFFA_PREFIX}.{part}"), c, c);
    }
    params.init_constant(&format!("{SFFA_PREFIX}.norm.gain"), &[c], 1.0);
}

fn check(t: &GradTape, lidar: Var, image: Var, cfg: &SffaConfig) -> Result<()> {
    cfg.validate()?;
    let (a, b) = (t.value(lidar), t.value(image));
    if a.rows() != b.rows() || a.last_dim() != cfg.width || b.last_dim() != cfg.width {
        return Err(Error::dim(
            "sffa",
            format!(
                "lidar {:?} and image {:?} must both be N x {}",
                a.shape(),
                b.shape(),
                cfg.width
            ),
        ));
    }
    Ok(())
}

/// `β = ReLU(s · q kᵀ)`, `N x N`, on the tape.
pub fn sffa_affinity_t(t: &mut GradTape, params: &ParamSet, lidar: Var, image: Var, cfg: &SffaConfig) -> Result<Var> {
    check(t, lidar, image, cfg)?;
    let q = t.linear(params, lidar, &format!("{SFFA_PREFIX}.q"), true)?;
    let k = t.linear(params, image, &format!("{SFFA_PREFIX}.k"), true)?;
    let kt = t.transpose(k)?;
    let f = t.matmul(q, kt)?;
    let f = t.scale(f, cfg.affinity_scale());
    Ok(t.relu(f))
}

/// The merge rule: `RMSNorm(βv) ⊙ linear(x_img) + x_img`.
fn merge(t: &mut GradTape, params: &ParamSet, attended: Var, image: Var, cfg: &SffaConfig) -> Result<Var> {
    let g = t.param(params, &format!("{SFFA_PREFIX}.norm.gain"))?;
    let n = t.rms_norm(attended, g, cfg.eps)?;
    let m = t.linear(params, image, &format!("{SFFA_PREFIX}.merge"), true)?;
    let gated = t.mul(n, m)?;
    t.add(gated, image)
}

/// `F^SFFA` rows (`N x C`) from LiDAR and image token rows.
pub fn sffa_forward_t(t: &mut GradTape, params: &ParamSet, lidar: Var, image: Var, cfg: &SffaConfig) -> Result<Var> {
    let beta = sffa_affinity_t(t, params, lidar, image, cfg)?;
    let beta = if cfg.zero_affinity {
        let z = t.leaf(Tensor::zeros(t.value(beta).shape()));
        t.mul(beta, z)?
    } else {
        beta
    };
    let v = t.linear(params, image, &format!("{SFFA_PREFIX}.v"), true)?;
    let attended = t.matmul(beta, v)?;
    merge(t, params, attended, image, cfg)
}

fn leaves(t: &mut GradTape, f_lidar: &Tensor, f_gcfat: &Tensor) -> Result<(Var, Var)> {
    if f_lidar.shape() != f_gcfat.shape() {
        return Err(Error::dim(
            "sffa",
            format!("lidar {:?} vs image {:?}", f_lidar.shape(), f_gcfat.shape()),
        ));
    }
    let shape = [f_lidar.rows(), f_lidar.last_dim()];
    Ok((t.leaf(f_lidar.reshape(&shape)?), t.leaf(f_gcfat.reshape(&shape)?)))
}

/// `F^SFFA` with the input's `H x W x C` shape.
pub fn sffa_forward(f_lidar: &Tensor, f_gcfat: &Tensor, cfg: &SffaConfig, params: &ParamSet) -> Result<Tensor> {
    let mut t = GradTape::new();
    let (l, i) = leaves(&mut t, f_lidar, f_gcfat)?;
    let y = sffa_forward_t(&mut t, params, l, i, cfg)?;
    t.value(y).reshape(f_gcfat.shape())
}

/// `β` as an `(H·W) x (H·W)` matrix.
pub fn sffa_affinity(f_lidar: &Tensor, f_gcfat: &Tensor, cfg: &SffaConfig, params: &ParamSet) -> Result<Tensor> {
    let mut t = GradTape::new();
    let (l, i) = leaves(&mut t, f_lidar, f_gcfat)?;
    let b = sffa_affinity_t(&mut t, params, l, i, cfg)?;
    Ok(t.value(b).clone())
}
