//! Function approximators: plain MLPs and networks producing positive
//! (semi-)definite matrices through a lower-triangular factor.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::batch::BatchMat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Param { name: name.into(), value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Register every parameter as a differentiable leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.params.iter().map(|p| tape.var(p.value.clone())).collect()
    }

    /// Register every parameter as a constant (evaluation without gradients).
    pub fn bind_const<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    /// All parameter values concatenated in registration order.
    pub fn flatten(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Format(format!("expected {} values, got {}", self.count(), flat.len())));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

/// Fully connected network; hidden layers use `activation`, the output layer
/// is affine. Weights are stored `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<(usize, usize)>,
    activation: Activation,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidModel(format!("{name}: bad layer widths {widths:?}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<T> = (0..fan_in * fan_out).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
            let wi = store.push(format!("{name}.{l}.weight"), Tensor::matrix(fan_in, fan_out, w)?);
            let bi = store.push(format!("{name}.{l}.bias"), Tensor::zeros(&[fan_out]));
            layers.push((wi, bi));
        }
        Ok(Self { widths: widths.to_vec(), layers, activation: Activation::Tanh })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Indices of `(weight, bias)` in the owning store, one pair per layer.
    pub fn layers(&self) -> &[(usize, usize)] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `x` is `[in]` or `[batch, in]`.
    pub fn forward<'t, T: Scalar>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let got = x.shape().last().copied().unwrap_or(1);
        if got != self.input_width() {
            return Err(Error::WidthMismatch { expected: self.input_width(), got });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, &(wi, bi)) in self.layers.iter().enumerate() {
            h = h.matmul(params[wi])?.add(params[bi])?;
            if l < last {
                h = match self.activation {
                    Activation::Tanh => h.tanh()?,
                };
            }
        }
        Ok(h)
    }
}

/// Closed-form map recorded with tape primitives, `[batch, in] -> [batch, out]`.
pub type FixedMap<T> = Arc<dyn for<'t> Fn(Var<'t, T>) -> Result<Var<'t, T>> + Send + Sync>;

/// A learnable or prescribed function of the coordinates.
#[derive(Clone)]
pub enum Approximator<T> {
    Mlp(Mlp),
    /// Prescribed function with no parameters.
    Fixed { map: FixedMap<T>, input: usize, output: usize },
    /// Prescribed function plus a learnable correction.
    Residual { map: FixedMap<T>, mlp: Mlp },
}

impl<T> std::fmt::Debug for Approximator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Approximator::Mlp(m) => f.debug_tuple("Mlp").field(m).finish(),
            Approximator::Fixed { input, output, .. } => write!(f, "Fixed({input} -> {output})"),
            Approximator::Residual { mlp, .. } => f.debug_struct("Residual").field("mlp", mlp).finish(),
        }
    }
}

impl<T: Scalar> Approximator<T> {
    pub fn fixed(input: usize, output: usize, map: FixedMap<T>) -> Self {
        Approximator::Fixed { map, input, output }
    }

    pub fn input_width(&self) -> usize {
        match self {
            Approximator::Mlp(m) | Approximator::Residual { mlp: m, .. } => m.input_width(),
            Approximator::Fixed { input, .. } => *input,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Approximator::Mlp(m) | Approximator::Residual { mlp: m, .. } => m.output_width(),
            Approximator::Fixed { output, .. } => *output,
        }
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        match self {
            Approximator::Mlp(m) | Approximator::Residual { mlp: m, .. } => Some(m),
            Approximator::Fixed { .. } => None,
        }
    }

    pub fn forward<'t>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Approximator::Mlp(m) => m.forward(params, x),
            Approximator::Fixed { map, input, .. } => {
                let got = x.shape().last().copied().unwrap_or(1);
                if got != *input {
                    return Err(Error::WidthMismatch { expected: *input, got });
                }
                map(x)
            }
            Approximator::Residual { map, mlp } => map(x)?.add(mlp.forward(params, x)?),
        }
    }
}

impl<T: Scalar> From<Mlp> for Approximator<T> {
    fn from(m: Mlp) -> Self {
        Approximator::Mlp(m)
    }
}

/// Network producing `L Lᵀ + εI` with `L` lower triangular, filled row-major
/// from the `n(n+1)/2` outputs of an inner approximator.
#[derive(Clone, Debug)]
pub struct CholeskyNet<T> {
    inner: Approximator<T>,
    n: usize,
    epsilon: T,
}

pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl<T: Scalar> CholeskyNet<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: &[usize],
        n: usize,
        epsilon: T,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if epsilon < T::zero() {
            return Err(Error::InvalidModel(format!("{name}: negative epsilon")));
        }
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(n * (n + 1) / 2);
        Ok(Self { inner: Mlp::new(store, name, &widths, rng)?.into(), n, epsilon })
    }

    pub fn from_parts(inner: Approximator<T>, n: usize, epsilon: T) -> Result<Self> {
        if inner.output_width() != n * (n + 1) / 2 {
            return Err(Error::InvalidModel(format!(
                "factor network emits {} values, need {}",
                inner.output_width(),
                n * (n + 1) / 2
            )));
        }
        if epsilon < T::zero() {
            return Err(Error::InvalidModel("negative epsilon".into()));
        }
        Ok(Self { inner, n, epsilon })
    }

    pub fn inner(&self) -> &Approximator<T> {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Per-sample matrices for a `[batch, in]` input, one `[batch, 1]` column per entry.
    pub fn forward_batch<'t>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<BatchMat<'t, T>> {
        let tape = x.tape();
        let out = self.inner.forward(params, x)?;
        let l: Vec<Var<'t, T>> = (0..out.shape()[1]).map(|k| out.col(k)).collect::<Result<_>>()?;
        let n = self.n;
        let mut entries: Vec<Option<Var<'t, T>>> = vec![None; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = l[tri_index(i, 0)].mul(l[tri_index(j, 0)])?;
                for k in 1..=j {
                    acc = acc.add(l[tri_index(i, k)].mul(l[tri_index(j, k)])?)?;
                }
                if i == j && self.epsilon > T::zero() {
                    acc = acc.add(tape.scalar(self.epsilon))?;
                }
                entries[i * n + j] = Some(acc);
                entries[j * n + i] = Some(acc);
            }
        }
        Ok(BatchMat::new(n, n, entries.into_iter().map(|e| e.expect("filled")).collect()))
    }

    /// Single `[in]` input to an `[n, n]` matrix.
    pub fn forward<'t>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let width = x.shape().last().copied().unwrap_or(1);
        let batch = self.forward_batch(params, x.reshape(&[1, width])?)?;
        batch.to_matrix(0)
    }
}
