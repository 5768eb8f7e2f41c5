//! RoI grid fusion: a regular lattice inside each proposal pools LiDAR voxel
//! features and image features, and a sigmoid-gated MLP fuses them.

mod pool;

pub use pool::{image_pool_weights, lidar_pool_weights, pool_image, pool_lidar, roi_grid_points};

use crate::detect::Box3D;
use crate::error::{Error, Result};
use crate::numerics::{GradTape, MlpSpec, ParamSet, Tensor, Var};
use crate::scene::CameraModel;
use crate::voxel::SparseVoxelGrid;

pub const VGA_PREFIX: &str = "vga";

/// Granularity of the fusion gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    /// One `(θ_lidar, θ_sffa)` pair per grid point and channel.
    #[default]
    PerChannel,
    /// One pair per grid point, shared by all channels.
    PerPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgaConfig {
    /// Lattice side `G`; `G³` points per proposal.
    pub grid: usize,
    /// Added on every side of the proposal before placing the lattice.
    pub margin: f64,
    pub hidden: usize,
    /// Fused width `C`.
    pub width: usize,
    /// Width of the pooled LiDAR stage.
    pub lidar_width: usize,
    /// Backbone stride the LiDAR features are pooled from.
    pub lidar_stride: usize,
    /// Pooling radius; `None` uses one voxel diagonal at `lidar_stride`.
    pub radius: Option<f64>,
    pub gate: GateMode,
}

impl Default for VgaConfig {
    fn default() -> Self {
        Self {
            grid: 6,
            margin: 0.2,
            hidden: 64,
            width: 32,
            lidar_width: 64,
            lidar_stride: 4,
            radius: None,
            gate: GateMode::PerChannel,
        }
    }
}

impl VgaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.hidden == 0 || self.width == 0 || self.lidar_width == 0 {
            return Err(Error::Config("vga grid and widths must be >= 1".into()));
        }
        if !matches!(self.lidar_stride, 1 | 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "vga lidar stride {} not in {{1, 2, 4, 8}}",
                self.lidar_stride
            )));
        }
        if !(self.margin >= 0.0) || self.radius.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::Config("vga margin must be >= 0 and radius > 0".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.grid.pow(3)
    }

    pub fn gate_spec(&self) -> MlpSpec {
        let out = match self.gate {
            GateMode::PerChannel => 2 * self.width,
            GateMode::PerPoint => 2,
        };
        MlpSpec::new(format!("{VGA_PREFIX}.gate"), &[2 * self.width, self.hidden, out])
    }

    pub fn fuse_spec(&self) -> MlpSpec {
        MlpSpec::new(format!("{VGA_PREFIX}.fuse"), &[2 * self.width, self.hidden, self.width])
    }

    pub fn radius_for(&self, grid: &SparseVoxelGrid) -> f64 {
        self.radius.unwrap_or_else(|| grid.diagonal())
    }
}

pub fn init_vga(params: &mut ParamSet, cfg: &VgaConfig) {
    params.init_projection(&format!("{VGA_PREFIX}.lidar_proj"), cfg.lidar_width, cfg.width);
    params.init_mlp(&cfg.gate_spec());
    params.init_mlp(&cfg.fuse_spec());
}

/// Gate logits, gates and fused output of one fusion call.
struct Fused {
    theta_lidar: Var,
    theta_sffa: Var,
    out: Var,
}

fn fuse_inner(t: &mut GradTape, params: &ParamSet, lidar: Var, image: Var, cfg: &VgaConfig) -> Result<Fused> {
    let (a, b) = (t.value(lidar), t.value(image));
    if a.last_dim() != cfg.width || b.last_dim() != cfg.width || a.rows() != b.rows() {
        return Err(Error::dim(
            "vga fuse",
            format!(
                "lidar {:?} and image {:?} must both be P x {}",
                a.shape(),
                b.shape(),
                cfg.width
            ),
        ));
    }
    let rows = a.rows();
    let cat = t.concat_cols(&[lidar, image])?;
    let logits = t.mlp(params, cat, &cfg.gate_spec())?;
    let theta = t.sigmoid(logits);
    let (theta_lidar, theta_sffa) = match cfg.gate {
        GateMode::PerChannel => (
            t.slice_cols(theta, 0, cfg.width)?,
            t.slice_cols(theta, cfg.width, 2 * cfg.width)?,
        ),
        GateMode::PerPoint => {
            let ones = t.leaf(Tensor::ones(&[1, cfg.width]));
            let l = t.slice_cols(theta, 0, 1)?;
            let s = t.slice_cols(theta, 1, 2)?;
            (t.matmul(l, ones)?, t.matmul(s, ones)?)
        }
    };
    let wl = t.mul(theta_lidar, lidar)?;
    let ws = t.mul(theta_sffa, image)?;
    let cat2 = t.concat_cols(&[wl, ws])?;
    let out = t.mlp(params, cat2, &cfg.fuse_spec())?;
    debug_assert_eq!(t.value(out).rows(), rows);
    Ok(Fused {
        theta_lidar,
        theta_sffa,
        out,
    })
}

/// `MLP_f(concat(θ_l ⊙ l, θ_s ⊙ s))` with `(θ_l, θ_s) = σ(MLP_g(concat(l, s)))`.
pub fn vga_fuse_t(t: &mut GradTape, params: &ParamSet, lidar: Var, image: Var, cfg: &VgaConfig) -> Result<Var> {
    Ok(fuse_inner(t, params, lidar, image, cfg)?.out)
}

pub fn vga_fuse(lidar: &Tensor, image: &Tensor, cfg: &VgaConfig, params: &ParamSet) -> Result<Tensor> {
    let mut t = GradTape::new();
    let (l, i) = (t.leaf(lidar.clone()), t.leaf(image.clone()));
    let y = vga_fuse_t(&mut t, params, l, i, cfg)?;
    Ok(t.value(y).clone())
}

/// `(θ_lidar, θ_sffa)`, each `P x C` (broadcast in per-point mode).
pub fn vga_gates(lidar: &Tensor, image: &Tensor, cfg: &VgaConfig, params: &ParamSet) -> Result<(Tensor, Tensor)> {
    let mut t = GradTape::new();
    let (l, i) = (t.leaf(lidar.clone()), t.leaf(image.clone()));
    let f = fuse_inner(&mut t, params, l, i, cfg)?;
    Ok((t.value(f.theta_lidar).clone(), t.value(f.theta_sffa).clone()))
}

/// Fused grid features (`G³ x C` rows) for one proposal. `image` holds
/// `F^SFFA` as raster rows of an `image_hw` feature map.
#[allow(clippy::too_many_arguments)]
pub fn vga_forward_t(
    t: &mut GradTape,
    params: &ParamSet,
    bbox: &Box3D,
    vox: &SparseVoxelGrid,
    image: Var,
    image_hw: (usize, usize),
    cam: &CameraModel,
    cfg: &VgaConfig,
) -> Result<Var> {
    cfg.validate()?;
    if vox.width() != cfg.lidar_width {
        return Err(Error::Config(format!(
            "vga expects {}-wide LiDAR features, got {}",
            cfg.lidar_width,
            vox.width()
        )));
    }
    let pts = roi_grid_points(&bbox.enlarged(cfg.margin), cfg.grid)?;
    let lw = lidar_pool_weights(&pts, vox, cfg.radius_for(vox));
    let vf = t.leaf(vox.features().clone());
    let pooled_l = t.combine_rows(vf, lw)?;
    let lidar = t.linear(params, pooled_l, &format!("{VGA_PREFIX}.lidar_proj"), false)?;
    let iw = image_pool_weights(&pts, image_hw, cam);
    let img = t.combine_rows(image, iw)?;
    vga_fuse_t(t, params, lidar, img, cfg)
}

/// `G x G x G x C` fused grid features.
pub fn vga_forward(
    bbox: &Box3D,
    vox: &SparseVoxelGrid,
    f_sffa: &Tensor,
    cam: &CameraModel,
    cfg: &VgaConfig,
    params: &ParamSet,
) -> Result<Tensor> {
    let [h, w, c] = match f_sffa.shape() {
        [h, w, c] => [*h, *w, *c],
        s => return Err(Error::dim("vga", format!("F^SFFA must be H x W x C, got {s:?}"))),
    };
    let mut t = GradTape::new();
    let img = t.leaf(f_sffa.reshape(&[h * w, c])?);
    let y = vga_forward_t(&mut t, params, bbox, vox, img, (h, w), cam, cfg)?;
    t.value(y).reshape(&[cfg.grid, cfg.grid, cfg.grid, cfg.width])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::random_tensor;
    use crate::numerics::{grad_check, mlp};

    fn setup(gate: GateMode, seed: u64) -> (VgaConfig, ParamSet) {
        let cfg = VgaConfig {
            width: 4,
            hidden: 6,
            lidar_width: 5,
            grid: 2,
            gate,
            ..VgaConfig::default()
        };
        let mut p = ParamSet::new(seed);
        init_vga(&mut p, &cfg);
        (cfg, p)
    }

    #[test]
    fn zero_gate_mlp_halves_inputs() {
        let (cfg, mut p) = setup(GateMode::PerChannel, 1);
        p.zero_prefix("vga.gate");
        let l = random_tensor(&[3, 4], 2);
        let s = random_tensor(&[3, 4], 3);
        let got = vga_fuse(&l, &s, &cfg, &p).unwrap();
        let mut cat = Tensor::zeros(&[3, 8]);
        for r in 0..3 {
            for c in 0..4 {
                cat.row_mut(r)[c] = l.row(r)[c] / 2.0;
                cat.row_mut(r)[4 + c] = s.row(r)[c] / 2.0;
            }
        }
        assert!(got.max_abs_diff(&mlp(&cat, &p, &cfg.fuse_spec()).unwrap()) < 1e-15);
    }

    #[test]
    fn zero_features_give_bias_path() {
        let (cfg, p) = setup(GateMode::PerChannel, 4);
        let z = Tensor::zeros(&[2, 4]);
        let got = vga_fuse(&z, &z, &cfg, &p).unwrap();
        let want = mlp(&Tensor::zeros(&[2, 8]), &p, &cfg.fuse_spec()).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn gates_strictly_inside_unit_interval() {
        for gate in [GateMode::PerChannel, GateMode::PerPoint] {
            let (cfg, p) = setup(gate, 5);
            let (tl, ts) = vga_gates(
                &random_tensor(&[4, 4], 6).scale(1e3),
                &random_tensor(&[4, 4], 7).scale(1e3),
                &cfg,
                &p,
            )
            .unwrap();
            assert_eq!(tl.shape(), &[4, 4]);
            assert!(tl.data().iter().chain(ts.data()).all(|&x| x > 0.0 && x < 1.0));
            if gate == GateMode::PerPoint {
                assert!(tl.data().chunks(4).all(|r| r.iter().all(|&x| x == r[0])));
            }
        }
    }

    #[test]
    fn raising_lidar_logit_raises_lidar_term() {
        let (cfg, p) = setup(GateMode::PerChannel, 8);
        let l = random_tensor(&[3, 4], 9);
        let s = random_tensor(&[3, 4], 10);
        let (before, _) = vga_gates(&l, &s, &cfg, &p).unwrap();
        let mut q = p.clone();
        let b = q.get_mut("vga.gate.1.bias").unwrap();
        for x in &mut b.data_mut()[..4] {
            *x += 0.5;
        }
        let (after, _) = vga_gates(&l, &s, &cfg, &q).unwrap();
        for i in 0..12 {
            if l.data()[i] != 0.0 {
                assert!((after.data()[i] * l.data()[i]).abs() > (before.data()[i] * l.data()[i]).abs());
            }
        }
    }

    #[test]
    fn gradients_through_fusion() {
        for gate in [GateMode::PerChannel, GateMode::PerPoint] {
            let (cfg, p) = setup(gate, 11);
            let l = random_tensor(&[8, 4], 12);
            let s = random_tensor(&[8, 4], 13);
            let head = random_tensor(&[8, 4], 14);
            let r = grad_check(
                |t, p| {
                    let (a, b) = (t.leaf(l.clone()), t.leaf(s.clone()));
                    let y = vga_fuse_t(t, p, a, b, &cfg)?;
                    t.weighted_sum(y, &head)
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{gate:?}: {r:?}");
        }
    }
}
