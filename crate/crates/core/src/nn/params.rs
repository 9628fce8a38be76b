use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: Vec<ParamTensor>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    /// He normal with the given fan-in.
    He(usize),
    Const(f64),
}

impl ModelParams {
    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        self.tensors.push(ParamTensor { name, shape, data });
        ParamId(self.tensors.len() - 1)
    }

    /// All scalars in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.count() {
            return dim_err(format!("{} values for {} parameters", values.len(), self.count()));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Mutable access to scalar `i` of the flattened parameter vector.
    pub fn flat_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for t in &mut self.tensors {
            if i < t.data.len() {
                return t.data.get_mut(i);
            }
            i -= t.data.len();
        }
        None
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.tensors.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    /// Copy with every value rounded through `f32`, the checkpoint precision.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    /// Zero-filled buffers shaped like the parameters, for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }
}

/// Declares parameters in a fixed order and draws their initial values.
pub(crate) struct ParamBuilder {
    params: ModelParams,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self { params: ModelParams::default(), rng: ChaCha8Rng::seed_from_u64(seed), prefix: vec![] }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Const(c) => vec![c; n],
            Init::He(fan_in) => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                (0..n).map(|_| normal.sample(&mut self.rng)).collect()
            }
        };
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.params.push(full, shape, data)
    }

    pub fn finish(self) -> ModelParams {
        self.params
    }
}
