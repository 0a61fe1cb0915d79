//! Named parameter storage.
//!
//! Layers hold [`ParamId`] handles into one [`ParamStore`]. Sharing a layer
//! between several call sites is sharing its handles, so the store always
//! holds exactly the unique storage and gradients from every use accumulate
//! on the same leaf.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every value, keeping names; shapes must match.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.tensors[i].shape() {
                return Err(Error::mismatch("assign", self.tensors[i].shape(), v.shape()));
            }
        }
        self.tensors = values;
        Ok(())
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant on `tape` (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// Parameters registered on a tape for one pass.
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    /// Wraps variables already on a tape, one per store entry in order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// He-style uniform initialisation bound `sqrt(6 / fan_in)`.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let b = he_bound(fan_in);
    Tensor::from_fn(shape, |_| rng.random_range(-b..b))
}

/// A 2-D convolution with a square 1×1 or 3×3 kernel, padded to keep the
/// spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Config(format!(
                "{name}: kernel size {kernel} not supported, expected 1 or 3"
            )));
        }
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = store.insert(
            format!("{name}.weight"),
            he_uniform(&shape, in_channels * kernel * kernel, rng),
        );
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn scalar_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
    }

    pub fn forward<'t>(&self, x: Var<'t>, bound: &BoundParams<'t>) -> Result<Var<'t>> {
        x.conv2d(bound.var(self.weight), bound.var(self.bias), self.padding())
    }
}

/// A fully connected layer `[N, in] -> [N, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(
            format!("{name}.weight"),
            he_uniform(&[out_features, in_features], in_features, rng),
        );
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }

    pub fn forward<'t>(&self, x: Var<'t>, bound: &BoundParams<'t>) -> Result<Var<'t>> {
        x.fully_connected(bound.var(self.weight), bound.var(self.bias))
    }
}
