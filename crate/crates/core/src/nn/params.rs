//! Named parameter tensors.
//!
//! Layers are built in two steps. Construction records a [`ParamSpec`] per
//! weight (name, extents, initializer) in a [`ParamSpecs`] list and keeps the
//! returned [`ParamId`]s; [`ParamStore::materialize`] then allocates and
//! initializes the tensors. Cost analysis only needs the specs, so the largest
//! presets can be enumerated without allocating their weights.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::{shape_err, Result};

/// Index of a parameter within its [`ParamSpecs`] / [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    /// Tape handle of this parameter in a list produced by [`ParamStore::record`].
    #[inline]
    pub fn var(self, vars: &[Var]) -> Var {
        vars[self.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    /// `ln(1..=state)` repeated per row, so that `A = -exp(a_log) = -(1..=state)`.
    ALog,
    /// Inverse softplus of a timescale drawn log-uniformly from `[min, max]`.
    DtBias { min: f64, max: f64 },
}

impl Init {
    /// Default for weights with the given fan-in.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform(1.0 / Float::sqrt(fan_in as f64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Ordered parameter declarations of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSpecs {
    specs: Vec<ParamSpec>,
}

impl ParamSpecs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: String, dims: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, dims: dims.to_vec(), init });
        ParamId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamSpec> {
        self.specs.iter()
    }

    pub fn get(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    /// Element count summed over every declared tensor.
    pub fn total_numel(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

/// Materialized parameters, indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn materialize(specs: &ParamSpecs, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs.iter() {
            tensors.push(init_tensor(spec, &mut rng)?);
            names.push(spec.name.clone());
        }
        Ok(ParamStore { names, tensors })
    }

    /// Builds a store from named tensors, checking them against `specs`.
    pub fn from_named(specs: &ParamSpecs, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        if named.len() != specs.len() {
            return Err(shape_err!("expected {} parameter tensors, got {}", specs.len(), named.len()));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (spec, (name, t)) in specs.iter().zip(named) {
            if spec.name != name || spec.dims != t.dims() {
                return Err(shape_err!(
                    "parameter {name} {} does not match declaration {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.dims
                ));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ParamStore { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn total_numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a tape leaf; the result is indexed by [`ParamId`].
    pub fn record(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn into_named(self) -> Vec<(String, Tensor<T>)> {
        self.names.into_iter().zip(self.tensors).collect()
    }
}

fn init_tensor<T: Real>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    let dims = &spec.dims;
    match spec.init {
        Init::Zeros => Tensor::zeros(dims),
        Init::Ones => Tensor::full(dims, T::one()),
        Init::Uniform(bound) => Tensor::from_fn(dims, |_| T::from_f64(rng.random_range(-bound..=bound))),
        Init::ALog => {
            let state = *dims.last().ok_or_else(|| shape_err!("{} needs a state axis", spec.name))?;
            Tensor::from_fn(dims, |i| T::from_f64(((i % state) + 1) as f64).ln())
        }
        Init::DtBias { min, max } => Tensor::from_fn(dims, |_| {
            let u: f64 = rng.random();
            let (lo, hi) = (Float::ln(min), Float::ln(max));
            let dt = Float::exp(lo + u * (hi - lo));
            // softplus(x) = dt  <=>  x = dt + ln(1 - exp(-dt))
            T::from_f64(dt + Float::ln(-Float::exp_m1(-dt)))
        }),
    }
}
