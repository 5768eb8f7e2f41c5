//! Image branch: patch embedding, windowed self-attention (LMSA), and
//! cross-attention from a depth-derived global query onto the local windows
//! (GDA), stacked into a two-scale encoder.

mod attention;
mod embed;
mod encoder;
mod window;

pub use attention::{gda, gda_affinities, gda_ordered, gda_t, lmsa, lmsa_affinities, lmsa_attention, lmsa_t};
pub use embed::{make_global_query, make_global_query_t, patch_embed, patch_embed_t, unfold_patches};
pub use encoder::{gcfat_forward, gcfat_forward_t, init_gcfat};
pub use window::WindowPartition;

use crate::error::{Error, Result};
use crate::numerics::{DropoutMode, ParamSet};

pub const GCFAT_PREFIX: &str = "gcfat";

#[derive(Debug, Clone, PartialEq)]
pub struct GcfatConfig {
    /// Embedding width `C`.
    pub width: usize,
    pub heads: usize,
    /// Window size `(h_p, w_p)` in tokens; also the global query's grid.
    pub window: (usize, usize),
    /// Side of the square non-overlapping patches.
    pub patch: usize,
    /// Blocks per stage; a 2×2 patch merge sits between stages.
    pub depths: Vec<usize>,
    pub mlp_ratio: usize,
    /// Dropout on the GDA affinity matrix.
    pub attn_dropout: f64,
    pub dropout_mode: DropoutMode,
    /// Depth is divided by this before embedding.
    pub depth_scale: f64,
    /// Spatial size `F^GCFAT` is resampled to.
    pub out_hw: (usize, usize),
}

impl Default for GcfatConfig {
    fn default() -> Self {
        Self {
            width: 32,
            heads: 4,
            window: (4, 4),
            patch: 4,
            depths: vec![2, 2],
            mlp_ratio: 2,
            attn_dropout: 0.3,
            dropout_mode: DropoutMode::Eval,
            depth_scale: 80.0,
            out_hw: (16, 16),
        }
    }
}

impl GcfatConfig {
    /// Full-scale width, heads and window.
    pub fn large() -> Self {
        Self {
            width: 64,
            heads: 8,
            window: (7, 7),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "gcfat width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.window.0 == 0 || self.window.1 == 0 || self.patch == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("gcfat window, patch and mlp ratio must be >= 1".into()));
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(Error::Config("gcfat needs at least one stage of depth >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) || !(self.depth_scale > 0.0) {
            return Err(Error::Config(
                "gcfat dropout must be in [0, 1) and depth scale > 0".into(),
            ));
        }
        if self.out_hw.0 == 0 || self.out_hw.1 == 0 {
            return Err(Error::Config("gcfat output size must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn query_tokens(&self) -> usize {
        self.window.0 * self.window.1
    }
}

/// Parameters of one attention block (LMSA or GDA) under `prefix`.
pub fn init_attention_block(params: &mut ParamSet, prefix: &str, cfg: &GcfatConfig, with_query: bool) {
    let c = cfg.width;
    if with_query {
        params.init_linear(&format!("{prefix}.q"), c, c);
    }
    params.init_linear(&format!("{prefix}.k"), c, c);
    params.init_linear(&format!("{prefix}.v"), c, c);
    params.init_layer_norm(&format!("{prefix}.norm"), c);
    params.init_mlp(&block_mlp(prefix, cfg));
}

pub(crate) fn block_mlp(prefix: &str, cfg: &GcfatConfig) -> crate::numerics::MlpSpec {
    crate::numerics::MlpSpec::new(
        format!("{prefix}.mlp"),
        &[cfg.width, cfg.width * cfg.mlp_ratio, cfg.width],
    )
}
