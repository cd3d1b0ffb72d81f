//! Named parameter storage and normalization running statistics.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to one normalization layer's running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BnId(usize);

impl BnId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter is, as far as the optimizer cares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Learnable scale/shift inside a batch-norm layer; frozen together with
    /// the running statistics.
    NormAffine,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Normal { std: f64 },
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    /// Unbiased running variance.
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamEntry>,
    norms: Vec<RunningStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        role: ParamRole,
        shape: [usize; 4],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let tensor = match init {
            Init::Constant(c) => Tensor::filled(shape, c),
            Init::KaimingNormal { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("valid std");
                Tensor::from_fn(shape, |_| normal.sample(rng))
            }
            Init::Normal { std } => {
                let normal = Normal::new(0.0, std).expect("valid std");
                Tensor::from_fn(shape, |_| normal.sample(rng))
            }
        };
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(ParamEntry { name, role, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn add_norm(&mut self, name: impl Into<String>, channels: usize) -> BnId {
        self.norms.push(RunningStats {
            name: name.into(),
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        });
        BnId(self.norms.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.params[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.params
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters (running statistics excluded).
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn norms(&self) -> &[RunningStats] {
        &self.norms
    }

    pub fn norm(&self, id: BnId) -> &RunningStats {
        &self.norms[id.0]
    }

    pub fn norm_mut(&mut self, id: BnId) -> &mut RunningStats {
        &mut self.norms[id.0]
    }

    pub fn norms_mut(&mut self) -> &mut [RunningStats] {
        &mut self.norms
    }
}
