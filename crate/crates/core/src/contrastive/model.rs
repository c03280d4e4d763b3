//! Shared linear adapter followed by `K + 1` projection heads.
//!
//! Head 0 is the coarse head used on full-dataset batches; head `k ≥ 1` is
//! the expert head for sub-dataset `k - 1`. Every head is
//! `affine → GELU → affine → GELU → affine → L2-normalize`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Result, XconError};
use crate::scalar::Scalar;
use crate::seed::rng_from;

/// Rows whose pre-normalization norm falls below this are rejected.
pub const COLLAPSE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub proj: usize,
    /// Number of expert heads (partition count `K`).
    pub experts: usize,
}

/// Affine map `y = x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Scalar> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: Array2::from_shape_simple_fn((input, output), || T::of(dist.sample(rng))),
            bias: Array1::from_shape_simple_fn(output, || T::of(dist.sample(rng))),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &ArrayView2<'_, T>, dy: &Array2<T>, grad: &mut Linear<T>, need_dx: bool) -> Option<Array2<T>> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&self.weight.t()))
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T: Scalar> {
    pub layers: [Linear<T>; 3],
}

impl<T: Scalar> ProjectionHead<T> {
    pub fn uniform<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::uniform(dims.input, dims.hidden, rng),
                Linear::uniform(dims.hidden, dims.hidden, rng),
                Linear::uniform(dims.hidden, dims.proj, rng),
            ],
        }
    }

    fn zeros(dims: &ModelDims) -> Self {
        Self {
            layers: [
                Linear::zeros(dims.input, dims.hidden),
                Linear::zeros(dims.hidden, dims.hidden),
                Linear::zeros(dims.hidden, dims.proj),
            ],
        }
    }
}

/// Intermediates kept by [`TrainableModel::forward_head`] for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache<T: Scalar> {
    head: usize,
    input: Array2<T>,
    adapted: Array2<T>,
    pre1: Array2<T>,
    act1: Array2<T>,
    pre2: Array2<T>,
    act2: Array2<T>,
    out: Array2<T>,
    norms: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainableModel<T: Scalar> {
    pub dims: ModelDims,
    pub adapter: Linear<T>,
    pub heads: Vec<ProjectionHead<T>>,
}

impl<T: Scalar> TrainableModel<T> {
    /// Identity adapter, uniformly initialized heads.
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let heads = (0..=dims.experts).map(|_| ProjectionHead::uniform(&dims, &mut rng)).collect();
        Self {
            dims,
            adapter: Linear::identity(dims.input),
            heads,
        }
    }

    /// Parameter-shaped zeros, used for gradients and momentum buffers.
    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims,
            adapter: Linear::zeros(self.dims.input, self.dims.input),
            heads: (0..self.heads.len()).map(|_| ProjectionHead::zeros(&self.dims)).collect(),
        }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Adapter first, then each head's three layers in order.
    pub fn linears(&self) -> impl Iterator<Item = &Linear<T>> {
        std::iter::once(&self.adapter).chain(self.heads.iter().flat_map(|h| h.layers.iter()))
    }

    pub fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear<T>> {
        std::iter::once(&mut self.adapter).chain(self.heads.iter_mut().flat_map(|h| h.layers.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.linears().map(Linear::param_count).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.linears()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> TrainableModel<U> {
        let conv = |l: &Linear<T>| Linear {
            weight: l.weight.mapv(|x| U::of(x.as_f64())),
            bias: l.bias.mapv(|x| U::of(x.as_f64())),
        };
        TrainableModel {
            dims: self.dims,
            adapter: conv(&self.adapter),
            heads: self
                .heads
                .iter()
                .map(|h| ProjectionHead {
                    layers: [conv(&h.layers[0]), conv(&h.layers[1]), conv(&h.layers[2])],
                })
                .collect(),
        }
    }

    fn check_input(&self, v: &ArrayView2<'_, T>) -> Result<()> {
        if v.ncols() != self.adapter.input_dim() {
            return Err(XconError::Shape(format!(
                "input dimension {} does not match adapter dimension {}",
                v.ncols(),
                self.adapter.input_dim()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(XconError::InvalidArgument("non-finite input features".into()));
        }
        Ok(())
    }

    /// Adapter output: the representation used for final class assignment.
    pub fn adapt(&self, v: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(&v)?;
        Ok(self.adapter.forward(&v))
    }

    /// Unit-norm embeddings of `v` through head `head`.
    pub fn forward_head(&self, head: usize, v: ArrayView2<'_, T>) -> Result<(Array2<T>, HeadCache<T>)> {
        if head >= self.heads.len() {
            return Err(XconError::InvalidArgument(format!(
                "head index {head} outside [0, {})",
                self.heads.len()
            )));
        }
        self.check_input(&v)?;
        let layers = &self.heads[head].layers;
        let adapted = self.adapter.forward(&v);
        let pre1 = layers[0].forward(&adapted.view());
        let act1 = pre1.mapv(gelu);
        let pre2 = layers[1].forward(&act1.view());
        let act2 = pre2.mapv(gelu);
        let out = layers[2].forward(&act2.view());
        let norms = out.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some(row) = norms.iter().position(|n| !(n.as_f64() >= COLLAPSE_NORM)) {
            return Err(XconError::CollapsedEmbedding { row });
        }
        let z = &out / &norms.view().insert_axis(Axis(1));
        let cache = HeadCache {
            head,
            input: v.to_owned(),
            adapted,
            pre1,
            act1,
            pre2,
            act2,
            out,
            norms,
        };
        Ok((z, cache))
    }

    /// Backpropagates `dz = dL/dZ` through the head and adapter, adding the
    /// parameter gradients into `grads`.
    pub fn backward_head(&self, cache: &HeadCache<T>, dz: &Array2<T>, grads: &mut TrainableModel<T>) {
        let layers = &self.heads[cache.head].layers;
        let glayers = &mut grads.heads[cache.head].layers;

        // d/dy of y/|y|: (dz - z (z·dz)) / |y|
        let norms = cache.norms.view().insert_axis(Axis(1));
        let z = &cache.out / &norms;
        let proj = (&z * dz).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dout = (dz - &(&z * &proj)) / &norms;

        let dact2 = layers[2]
            .backward(&cache.act2.view(), &dout, &mut glayers[2], true)
            .expect("dx requested");
        let dpre2 = dact2 * &cache.pre2.mapv(gelu_grad);
        let dact1 = layers[1]
            .backward(&cache.act1.view(), &dpre2, &mut glayers[1], true)
            .expect("dx requested");
        let dpre1 = dact1 * &cache.pre1.mapv(gelu_grad);
        let dadapted = layers[0]
            .backward(&cache.adapted.view(), &dpre1, &mut glayers[0], true)
            .expect("dx requested");
        self.adapter
            .backward(&cache.input.view(), &dadapted, &mut grads.adapter, false);
    }
}
