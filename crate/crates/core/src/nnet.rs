//! Dense feed-forward networks with hand-derived reverse-mode gradients.
//!
//! The architecture family is deliberately closed: affine layers with ReLU
//! on hidden layers and a linear output. Gradients are written out
//! layer-by-layer rather than through a general autodiff graph, and every
//! backward rule is checked against central finite differences in the
//! tests.
//!
//! Batches are row-per-example [`Mat`] values. `forward_cached` records the
//! per-layer intermediates that `backward` consumes; the cache carries a
//! shape fingerprint so a cache from a different network or batch is
//! rejected.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::mat::{dot, Mat};
use crate::math;
use crate::rng::SeedStream;

/// Elementwise activation applied after the affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative as a function of the pre-activation. The ReLU
    /// subgradient at exactly 0 is taken to be 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One affine layer: `y = activation(W x + b)` with `W` of shape
/// `(out_dim, in_dim)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// A multi-layer perceptron. Hidden layers are ReLU, the output layer is
/// linear; adjacent layer dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Per-layer intermediates recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Mat>,
    /// Pre-activation of each layer.
    preacts: Vec<Mat>,
    /// Layer dimensions of the network that produced this cache.
    dims: Vec<usize>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }

    /// Post-activation output of the final layer.
    pub fn output(&self) -> &Mat {
        self.inputs.last().expect("cache has at least one entry")
    }

    /// Per-layer pre-activations, for kink-clearance diagnostics.
    pub fn preactivations(&self) -> &[Mat] {
        &self.preacts
    }
}

/// Gradients shaped like an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Mat,
    pub d_bias: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    d_weight: Mat::zeros(l.out_dim(), l.in_dim()),
                    d_bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// Adds `other` into `self` (same architecture).
    pub fn accumulate(&mut self, other: &MlpGrads) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a
                .d_weight
                .as_mut_slice()
                .iter_mut()
                .zip(b.d_weight.as_slice())
            {
                *x += y;
            }
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += y;
            }
        }
    }

    pub fn collect_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.d_weight.as_slice());
            out.extend_from_slice(&l.d_bias);
        }
    }
}

impl Mlp {
    /// Initializes a network with the given layer dimensions.
    ///
    /// Weights are uniform in `[-1/sqrt(a), 1/sqrt(a)]` with `a` the layer's
    /// input dimension; biases start at zero. Hidden layers are ReLU and the
    /// output layer is linear. Deterministic in `seed`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, Error> {
        if dims.len() < 2 {
            return Err(Error::InvalidArchitecture(String::from(
                "need at least an input and an output dimension",
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArchitecture(String::from(
                "layer dimensions must be positive",
            )));
        }
        let mut rng = SeedStream::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, pair) in dims.windows(2).enumerate() {
            let (a, out) = (pair[0], pair[1]);
            let s = 1.0 / math::sqrt(a as f64);
            let mut weight = Mat::zeros(out, a);
            for w in weight.as_mut_slice() {
                *w = rng.uniform_in(-s, s);
            }
            let activation = if k + 2 == dims.len() {
                Activation::Linear
            } else {
                Activation::ReLU
            };
            layers.push(DenseLayer {
                weight,
                bias: vec![0.0; out],
                activation,
            });
        }
        Ok(Mlp { layers })
    }

    /// Builds a network from explicit layers, checking that dimensions chain
    /// and the output layer is linear.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, Error> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture(String::from("no layers")));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidArchitecture(String::from(
                    "adjacent layer dimensions do not chain",
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(Error::InvalidArchitecture(String::from(
                "output layer must be linear",
            )));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        d.push(self.in_dim());
        d.extend(self.layers.iter().map(DenseLayer::out_dim));
        d
    }

    /// Forward pass for a batch (rows are examples).
    pub fn forward(&self, x: &Mat) -> Result<Mat, Error> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = affine(layer, &cur).0;
        }
        Ok(cur)
    }

    /// Forward pass that records per-layer intermediates for `backward`.
    pub fn forward_cached(&self, x: &Mat) -> Result<(Mat, ForwardCache), Error> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for layer in &self.layers {
            let (post, pre) = affine(layer, inputs.last().expect("nonempty"));
            preacts.push(pre);
            inputs.push(post);
        }
        let out = inputs.last().expect("nonempty").clone();
        Ok((
            out,
            ForwardCache {
                inputs,
                preacts,
                dims: self.dims(),
            },
        ))
    }

    /// Reverse-mode pass.
    ///
    /// `grad_out` is the gradient of some scalar with respect to the output
    /// batch; the result is that scalar's exact gradient with respect to
    /// every weight and bias, plus the gradient with respect to the input
    /// batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Mat) -> Result<(MlpGrads, Mat), Error> {
        if cache.dims != self.dims() {
            return Err(Error::CacheMismatch);
        }
        let batch = cache.batch_size();
        if grad_out.rows() != batch || grad_out.cols() != self.out_dim() {
            return Err(Error::ShapeMismatch {
                expected: batch * self.out_dim(),
                got: grad_out.rows() * grad_out.cols(),
            });
        }

        let mut grads = MlpGrads::zeros_like(self);
        let mut g = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            let z = &cache.preacts[l];
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
            let lg = &mut grads.layers[l];
            let mut g_in = Mat::zeros(batch, in_dim);
            for b in 0..batch {
                let g_row = g.row(b);
                let z_row = z.row(b);
                let x_row = x.row(b);
                let gi_row = g_in.row_mut(b);
                for o in 0..out_dim {
                    let gz = g_row[o] * layer.activation.derivative(z_row[o]);
                    if gz == 0.0 {
                        continue;
                    }
                    lg.d_bias[o] += gz;
                    let w_row = layer.weight.row(o);
                    let dw_row = lg.d_weight.row_mut(o);
                    for i in 0..in_dim {
                        dw_row[i] += x_row[i] * gz;
                        gi_row[i] += w_row[i] * gz;
                    }
                }
            }
            g = g_in;
        }
        Ok((grads, g))
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    /// Appends all parameters (per layer: weight row-major, then bias).
    pub fn collect_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters back in `collect_params` order, advancing `pos`.
    pub fn load_params(&mut self, src: &[f64], pos: &mut usize) {
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&src[*pos..*pos + w.len()]);
            *pos += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&src[*pos..*pos + n]);
            *pos += n;
        }
    }

    /// Sum of squared weight-matrix entries (biases excluded).
    pub fn weight_squared_sum(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    fn check_input(&self, x: &Mat) -> Result<(), Error> {
        if x.cols() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.in_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }
}

/// Applies one layer to a batch; returns (post-activation, pre-activation).
fn affine(layer: &DenseLayer, x: &Mat) -> (Mat, Mat) {
    let batch = x.rows();
    let out_dim = layer.out_dim();
    let mut pre = Mat::zeros(batch, out_dim);
    let mut post = Mat::zeros(batch, out_dim);
    for b in 0..batch {
        let x_row = x.row(b);
        let pre_row = pre.row_mut(b);
        for o in 0..out_dim {
            pre_row[o] = dot(layer.weight.row(o), x_row) + layer.bias[o];
        }
        let post_row = post.row_mut(b);
        for o in 0..out_dim {
            post_row[o] = layer.activation.apply(pre_row[o]);
        }
    }
    (post, pre)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    /// Fresh state with the optimizer's published defaults
    /// (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update, in place.
///
/// Moment estimates are bias-corrected; parameters move opposite
/// `m_hat / (sqrt(v_hat) + eps)` scaled by `lr`. Non-finite gradient entries
/// are reported as a divergence error before any state is touched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), Error> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            expected: state.m.len(),
            got: grads.len(),
        });
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    state.t += 1;
    state.beta1_pow *= state.beta1;
    state.beta2_pow *= state.beta2;
    let m_corr = 1.0 / (1.0 - state.beta1_pow);
    let v_corr = 1.0 / (1.0 - state.beta2_pow);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] * m_corr;
        let v_hat = state.v[i] * v_corr;
        params[i] -= lr * m_hat / (math::sqrt(v_hat) + state.eps);
    }
    Ok(())
}

/// Compares an analytic gradient against central finite differences.
///
/// Returns the worst discrepancy over all parameters, measured as
/// `|fd - analytic| / max(|fd|, |analytic|, 1)`. A non-finite loss value
/// propagates as NaN so callers see the failure.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        work[i] = orig + step;
        let up = loss_fn(&work);
        work[i] = orig - step;
        let down = loss_fn(&work);
        work[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let err = rel_gap(fd, analytic[i]);
        if err.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(err);
    }
    worst
}

#[inline]
fn rel_gap(a: f64, b: f64) -> f64 {
    math::abs(a - b) / math::abs(a).max(math::abs(b)).max(1.0)
}
