use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Named, deterministically initialized model parameters.
///
/// Every tensor draws from its own generator keyed by `(seed, name)`, so the
/// value of a parameter does not depend on the order in which others were
/// created.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            tensors: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn merge(&mut self, other: ParamSet) {
        self.tensors.extend(other.tensors);
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = named_rng(self.seed, name);
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.tensors.insert(name.to_string(), t);
    }

    pub fn init_constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.tensors.insert(name.to_string(), Tensor::full(shape, value));
    }

    /// `{prefix}.weight` of shape `[fan_in, fan_out]` plus `{prefix}.bias`.
    pub fn init_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.init_uniform(&format!("{prefix}.weight"), &[fan_in, fan_out], fan_in);
        self.init_uniform(&format!("{prefix}.bias"), &[fan_out], fan_in);
    }

    /// Weight-only linear layer.
    pub fn init_projection(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.init_uniform(&format!("{prefix}.weight"), &[fan_in, fan_out], fan_in);
    }

    /// Unit gain and zero bias.
    pub fn init_layer_norm(&mut self, prefix: &str, width: usize) {
        self.init_constant(&format!("{prefix}.gain"), &[width], 1.0);
        self.init_constant(&format!("{prefix}.bias"), &[width], 0.0);
    }

    pub fn init_mlp(&mut self, spec: &MlpSpec) {
        for (i, w) in spec.widths.windows(2).enumerate() {
            self.init_linear(&spec.layer_prefix(i), w[0], w[1]);
        }
    }

    /// Overwrites every parameter whose name starts with `prefix` with zeros.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }
}

/// Layer widths of a fully connected stack, ReLU between layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub prefix: String,
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        Self {
            prefix: prefix.into(),
            widths: widths.to_vec(),
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn layer_prefix(&self, i: usize) -> String {
        format!("{}.{i}", self.prefix)
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Generator keyed by a seed and a label (FNV-1a of the label).
pub fn named_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_parameters() {
        let build = |seed| {
            let mut p = ParamSet::new(seed);
            p.init_linear("a", 4, 3);
            p.init_mlp(&MlpSpec::new("m", &[3, 5, 2]));
            p
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }

    #[test]
    fn init_is_order_independent() {
        let mut a = ParamSet::new(3);
        a.init_linear("x", 4, 4);
        a.init_linear("y", 4, 4);
        let mut b = ParamSet::new(3);
        b.init_linear("y", 4, 4);
        b.init_linear("x", 4, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_bound_respected() {
        let mut p = ParamSet::new(1);
        p.init_uniform("w", &[64, 16], 64);
        let w = p.get("w").unwrap();
        assert!(w.max_abs() <= 1.0 / 8.0);
    }

    #[test]
    fn missing_parameter_is_reported_by_name() {
        let p = ParamSet::new(0);
        match p.get("nope") {
            Err(Error::MissingParam(n)) => assert_eq!(n, "nope"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
