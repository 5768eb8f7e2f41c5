use super::boxes::{decode_residual, Box3D, Residual};
use super::propose::ProposalSet;
use crate::error::{Error, Result};
use crate::numerics::{mlp, sigmoid_scalar, MlpSpec, ParamSet, Tensor};

pub const REFINE_HEAD: &str = "detect.refine_head";

/// Head over a flattened `G^3 x C` RoI block: `[confidence logit, residual x7]`.
pub fn refine_spec(grid_size: usize, channels: usize, hidden: usize) -> MlpSpec {
    MlpSpec::new(REFINE_HEAD, &[grid_size.pow(3) * channels, hidden, 8])
}

/// Applies the refinement head to each proposal. Output boxes keep the
/// proposal's class; the score is the sigmoid of the confidence logit.
pub fn refine(proposals: &ProposalSet, feats: &[Tensor], params: &ParamSet, spec: &MlpSpec) -> Result<Vec<Box3D>> {
    if feats.len() != proposals.len() {
        return Err(Error::Input(format!(
            "{} feature blocks for {} proposals",
            feats.len(),
            proposals.len()
        )));
    }
    proposals
        .boxes()
        .iter()
        .zip(feats)
        .map(|(prop, f)| {
            if f.len() != spec.input_width() {
                return Err(Error::dim(
                    "refine",
                    format!(
                        "feature block of {} values, head expects {}",
                        f.len(),
                        spec.input_width()
                    ),
                ));
            }
            let flat = f.reshape(&[1, f.len()])?;
            let out = mlp(&flat, params, spec)?;
            let o = out.data();
            let r: Residual = o[1..8].try_into().unwrap();
            let mut b = decode_residual(&r, prop);
            b.score = sigmoid_scalar(o[0]);
            Ok(b)
        })
        .collect()
}
