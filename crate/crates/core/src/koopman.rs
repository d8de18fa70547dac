//! The latent linear model: encoder, decoder, and the auxiliary networks
//! that parametrize the propagator's eigenvalues.
//!
//! Latent coordinates are grouped as `c` complex-conjugate pairs followed by
//! `r` real coordinates. For each pair the auxiliary network maps the pair's
//! squared radius `y_j^2 + y_{j+1}^2` to a growth rate `mu` and frequency
//! `omega`; for each real coordinate a separate network maps that coordinate
//! to a rate `lambda`. The discrete-time propagator is block diagonal: a
//! 2x2 scaled rotation `exp(mu dt) R(omega dt)` per pair and a scalar
//! `exp(lambda dt)` per real eigenvalue.
//!
//! Because a pair's eigenvalues depend only on the radius, the latent
//! dynamics are exactly invariant under rotations within each pair's plane.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::mat::Mat;
use crate::math;
use crate::nnet::Mlp;
use crate::rng::derive_seed;

/// How many complex-conjugate pairs and real eigenvalues the latent space
/// carries. The latent dimension is `2 * complex_pairs + real_eigs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectrumConfig {
    pub complex_pairs: usize,
    pub real_eigs: usize,
}

impl SpectrumConfig {
    pub fn new(complex_pairs: usize, real_eigs: usize) -> Result<Self, Error> {
        if 2 * complex_pairs + real_eigs == 0 {
            return Err(Error::InvalidArchitecture(String::from(
                "latent dimension must be at least 1",
            )));
        }
        Ok(SpectrumConfig {
            complex_pairs,
            real_eigs,
        })
    }

    /// Spectrum used for each benchmark system.
    pub fn for_system(kind: crate::dynamics::SystemKind) -> Self {
        use crate::dynamics::SystemKind::*;
        let (c, r) = match kind {
            DiscreteSpectrum => (0, 2),
            Pendulum => (1, 0),
            FluidFlowOnAttractor => (1, 0),
            FluidFlowOffAttractor => (1, 1),
        };
        SpectrumConfig {
            complex_pairs: c,
            real_eigs: r,
        }
    }

    #[inline]
    pub fn latent_dim(&self) -> usize {
        2 * self.complex_pairs + self.real_eigs
    }

    /// Latent index of the first coordinate of pair `j`.
    #[inline]
    pub fn pair_index(&self, j: usize) -> usize {
        2 * j
    }

    /// Latent index of real eigenvalue `j`.
    #[inline]
    pub fn real_index(&self, j: usize) -> usize {
        2 * self.complex_pairs + j
    }
}

/// Eigenvalues of the propagator at one latent point.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenvalues {
    /// `(mu, omega)` per complex pair.
    pub pairs: Vec<(f64, f64)>,
    /// `lambda` per real eigenvalue.
    pub reals: Vec<f64>,
}

/// Which latent states the per-step eigenvalues are evaluated on when a
/// rollout is compared against a known trajectory.
///
/// `Predicted` re-evaluates them on the rolled-out latents, so prediction
/// from an initial condition alone is well-defined; `Encoded` uses the
/// encoded true snapshots instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigSource {
    #[default]
    Predicted,
    Encoded,
}

/// 2x2 block `exp(mu dt) [[cos, -sin], [sin, cos]](omega dt)`, row-major.
#[inline]
pub fn pair_block(mu: f64, omega: f64, dt: f64) -> [f64; 4] {
    let scale = math::exp(mu * dt);
    let c = math::cos(omega * dt);
    let s = math::sin(omega * dt);
    [scale * c, -scale * s, scale * s, scale * c]
}

/// Assembles the block-diagonal propagator for one set of eigenvalues.
pub fn propagator(eigs: &Eigenvalues, dt: f64) -> Mat {
    let p = 2 * eigs.pairs.len() + eigs.reals.len();
    let mut k = Mat::zeros(p, p);
    for (j, &(mu, omega)) in eigs.pairs.iter().enumerate() {
        let b = pair_block(mu, omega, dt);
        let i = 2 * j;
        k[(i, i)] = b[0];
        k[(i, i + 1)] = b[1];
        k[(i + 1, i)] = b[2];
        k[(i + 1, i + 1)] = b[3];
    }
    for (j, &la) in eigs.reals.iter().enumerate() {
        let i = 2 * eigs.pairs.len() + j;
        k[(i, i)] = math::exp(la * dt);
    }
    k
}

/// Encoder, decoder, auxiliary eigenvalue networks, and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub aux_pairs: Vec<Mlp>,
    pub aux_reals: Vec<Mlp>,
    pub spectrum: SpectrumConfig,
    pub dt: f64,
}

/// Layer dimensions for every network of a [`KoopmanModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    /// Dimensions of one pair net (input 1, output 2).
    pub aux_pair: Vec<usize>,
    /// Dimensions of one real-eigenvalue net (input 1, output 1).
    pub aux_real: Vec<usize>,
}

impl ModelDims {
    /// Builds dimensions from state dim, hidden shapes, and the spectrum.
    /// The decoder mirrors the encoder's hidden layers.
    pub fn symmetric(
        state_dim: usize,
        hidden: &[usize],
        aux_hidden: &[usize],
        spectrum: SpectrumConfig,
    ) -> Self {
        let p = spectrum.latent_dim();
        let mut encoder = vec![state_dim];
        encoder.extend_from_slice(hidden);
        encoder.push(p);
        let mut decoder = vec![p];
        decoder.extend_from_slice(hidden);
        decoder.push(state_dim);
        let mut aux_pair = vec![1];
        aux_pair.extend_from_slice(aux_hidden);
        aux_pair.push(2);
        let mut aux_real = vec![1];
        aux_real.extend_from_slice(aux_hidden);
        aux_real.push(1);
        ModelDims {
            encoder,
            decoder,
            aux_pair,
            aux_real,
        }
    }
}

impl KoopmanModel {
    /// Validates network shapes against the spectrum and assembles a model.
    pub fn new(
        encoder: Mlp,
        decoder: Mlp,
        aux_pairs: Vec<Mlp>,
        aux_reals: Vec<Mlp>,
        spectrum: SpectrumConfig,
        dt: f64,
    ) -> Result<Self, Error> {
        let p = spectrum.latent_dim();
        if encoder.out_dim() != p || decoder.in_dim() != p {
            return Err(Error::InvalidArchitecture(String::from(
                "encoder output and decoder input must equal the latent dimension",
            )));
        }
        if encoder.in_dim() != decoder.out_dim() {
            return Err(Error::InvalidArchitecture(String::from(
                "encoder input and decoder output must agree",
            )));
        }
        if aux_pairs.len() != spectrum.complex_pairs || aux_reals.len() != spectrum.real_eigs {
            return Err(Error::InvalidArchitecture(String::from(
                "auxiliary network count must match the spectrum",
            )));
        }
        for net in &aux_pairs {
            if net.in_dim() != 1 || net.out_dim() != 2 {
                return Err(Error::InvalidArchitecture(String::from(
                    "pair networks map a scalar to (mu, omega)",
                )));
            }
        }
        for net in &aux_reals {
            if net.in_dim() != 1 || net.out_dim() != 1 {
                return Err(Error::InvalidArchitecture(String::from(
                    "real-eigenvalue networks map a scalar to lambda",
                )));
            }
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(String::from("dt must be positive")));
        }
        Ok(KoopmanModel {
            encoder,
            decoder,
            aux_pairs,
            aux_reals,
            spectrum,
            dt,
        })
    }

    /// Random initialization of all networks, fanned out from one seed.
    pub fn init(dims: &ModelDims, spectrum: SpectrumConfig, dt: f64, seed: u64) -> Result<Self, Error> {
        let encoder = Mlp::init(&dims.encoder, derive_seed(seed, 0))?;
        let decoder = Mlp::init(&dims.decoder, derive_seed(seed, 1))?;
        let aux_pairs = (0..spectrum.complex_pairs)
            .map(|j| Mlp::init(&dims.aux_pair, derive_seed(seed, 100 + j as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        let aux_reals = (0..spectrum.real_eigs)
            .map(|j| Mlp::init(&dims.aux_real, derive_seed(seed, 200 + j as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        KoopmanModel::new(encoder, decoder, aux_pairs, aux_reals, spectrum, dt)
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.spectrum.latent_dim()
    }

    /// Encodes a batch of states into latent coordinates.
    pub fn encode(&self, x: &Mat) -> Result<Mat, Error> {
        self.encoder.forward(x)
    }

    /// Decodes a batch of latent vectors back to states.
    pub fn decode(&self, y: &Mat) -> Result<Mat, Error> {
        self.decoder.forward(y)
    }

    /// Eigenvalues of the propagator at a single latent point.
    ///
    /// Pair `j`'s network sees the scalar `y[2j]^2 + y[2j+1]^2`; real
    /// eigenvalue `j`'s network sees the scalar `y[2c + j]`.
    pub fn eigenvalues_at(&self, y: &[f64]) -> Result<Eigenvalues, Error> {
        if y.len() != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.latent_dim(),
                got: y.len(),
            });
        }
        let mut pairs = Vec::with_capacity(self.spectrum.complex_pairs);
        for (j, net) in self.aux_pairs.iter().enumerate() {
            let i = self.spectrum.pair_index(j);
            let rho = math::hypot2(y[i], y[i + 1]);
            let out = net.forward(&Mat::from_vec(1, 1, vec![rho]))?;
            pairs.push((out[(0, 0)], out[(0, 1)]));
        }
        let mut reals = Vec::with_capacity(self.spectrum.real_eigs);
        for (j, net) in self.aux_reals.iter().enumerate() {
            let i = self.spectrum.real_index(j);
            let out = net.forward(&Mat::from_vec(1, 1, vec![y[i]]))?;
            reals.push(out[(0, 0)]);
        }
        Ok(Eigenvalues { pairs, reals })
    }

    /// One latent step: `y' = K(Lambda(y)) y`.
    pub fn advance(&self, y: &[f64]) -> Result<Vec<f64>, Error> {
        let eigs = self.eigenvalues_at(y)?;
        let mut out = vec![0.0; y.len()];
        apply_blocks(&self.spectrum, &eigs, self.dt, y, &mut out);
        Ok(out)
    }

    /// Iterates [`KoopmanModel::advance`] `m` times, re-evaluating the
    /// eigenvalues at each predicted latent state. Returns `y_1..y_m`.
    pub fn latent_rollout(&self, y0: &[f64], m: usize) -> Result<Vec<Vec<f64>>, Error> {
        assert!(m >= 1, "rollout length must be at least 1");
        let mut out = Vec::with_capacity(m);
        let mut cur = y0.to_vec();
        for _ in 0..m {
            cur = self.advance(&cur)?;
            if !cur.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("latent rollout"));
            }
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Predicts the next `m` states from a single initial state: encode,
    /// roll out, decode each step. Row `k` of the result is the prediction
    /// `k + 1` steps ahead.
    pub fn predict_states(&self, x0: &[f64], m: usize) -> Result<Mat, Error> {
        if x0.len() != self.state_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.state_dim(),
                got: x0.len(),
            });
        }
        let y0 = self.encode(&Mat::from_vec(1, x0.len(), x0.to_vec()))?;
        let latents = self.latent_rollout(y0.row(0), m)?;
        let mut out = Mat::zeros(m, self.state_dim());
        for (k, y) in latents.iter().enumerate() {
            let x = self.decode(&Mat::from_vec(1, y.len(), y.clone()))?;
            out.row_mut(k).copy_from_slice(x.row(0));
        }
        Ok(out)
    }

    /// Total number of scalar parameters across all networks.
    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.decoder.param_count()
            + self.aux_pairs.iter().map(Mlp::param_count).sum::<usize>()
            + self.aux_reals.iter().map(Mlp::param_count).sum::<usize>()
    }

    /// Flattens all parameters (encoder, decoder, pair nets, real nets).
    pub fn collect_params(&self, out: &mut Vec<f64>) {
        self.encoder.collect_params(out);
        self.decoder.collect_params(out);
        for net in &self.aux_pairs {
            net.collect_params(out);
        }
        for net in &self.aux_reals {
            net.collect_params(out);
        }
    }

    /// Loads parameters in `collect_params` order.
    pub fn load_params(&mut self, src: &[f64]) -> Result<(), Error> {
        if src.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: src.len(),
            });
        }
        let mut pos = 0;
        self.encoder.load_params(src, &mut pos);
        self.decoder.load_params(src, &mut pos);
        for net in &mut self.aux_pairs {
            net.load_params(src, &mut pos);
        }
        for net in &mut self.aux_reals {
            net.load_params(src, &mut pos);
        }
        Ok(())
    }

    /// Fixes the rotational gauge of each complex pair.
    ///
    /// Mirroring a pair's second coordinate while negating its frequency is
    /// an exact symmetry of the model, so either sign of omega can be
    /// learned. This flips every pair whose mean frequency over
    /// `reference_latents` is positive, making exported frequencies
    /// negative by convention. Returns which pairs were flipped.
    pub fn canonicalize_orientation(&mut self, reference_latents: &Mat) -> Result<Vec<bool>, Error> {
        let mut flipped = vec![false; self.spectrum.complex_pairs];
        if reference_latents.rows() == 0 {
            return Ok(flipped);
        }
        for j in 0..self.spectrum.complex_pairs {
            let mut mean_omega = 0.0;
            for r in 0..reference_latents.rows() {
                let eigs = self.eigenvalues_at(reference_latents.row(r))?;
                mean_omega += eigs.pairs[j].1;
            }
            mean_omega /= reference_latents.rows() as f64;
            if mean_omega > 0.0 {
                self.flip_pair(j);
                flipped[j] = true;
            }
        }
        Ok(flipped)
    }

    /// Negates latent coordinate `2j + 1` and the pair's frequency output.
    fn flip_pair(&mut self, j: usize) {
        let v = self.spectrum.pair_index(j) + 1;
        // Encoder: negate the output row producing coordinate v.
        let enc_last = self
            .encoder
            .layers()
            .len()
            .checked_sub(1)
            .expect("encoder has layers");
        negate_output_row(&mut self.encoder, enc_last, v);
        // Decoder: negate the input column consuming coordinate v.
        negate_input_col(&mut self.decoder, v);
        // Pair net: negate the omega output row.
        let net = &mut self.aux_pairs[j];
        let last = net.layers().len() - 1;
        negate_output_row(net, last, 1);
    }
}

fn negate_output_row(net: &mut Mlp, layer: usize, row: usize) {
    // Safe to mutate weights structurally: dims are untouched.
    let mut flat = Vec::new();
    net.collect_params(&mut flat);
    // Recompute offsets to the requested layer.
    let mut off = 0;
    for (l, d) in net.layers().iter().enumerate() {
        let w_len = d.in_dim() * d.out_dim();
        if l == layer {
            let start = off + row * d.in_dim();
            for w in &mut flat[start..start + d.in_dim()] {
                *w = -*w;
            }
            let b = off + w_len + row;
            flat[b] = -flat[b];
            break;
        }
        off += w_len + d.out_dim();
    }
    let mut pos = 0;
    net.load_params(&flat, &mut pos);
}

fn negate_input_col(net: &mut Mlp, col: usize) {
    let mut flat = Vec::new();
    net.collect_params(&mut flat);
    let first = &net.layers()[0];
    let in_dim = first.in_dim();
    for row in 0..first.out_dim() {
        let idx = row * in_dim + col;
        flat[idx] = -flat[idx];
    }
    let mut pos = 0;
    net.load_params(&flat, &mut pos);
}

/// Applies the block-diagonal propagator for `eigs` to `y`, writing `out`.
pub(crate) fn apply_blocks(
    spectrum: &SpectrumConfig,
    eigs: &Eigenvalues,
    dt: f64,
    y: &[f64],
    out: &mut [f64],
) {
    for (j, &(mu, omega)) in eigs.pairs.iter().enumerate() {
        let i = spectrum.pair_index(j);
        let b = pair_block(mu, omega, dt);
        let (u, v) = (y[i], y[i + 1]);
        out[i] = b[0] * u + b[1] * v;
        out[i + 1] = b[2] * u + b[3] * v;
    }
    for (j, &la) in eigs.reals.iter().enumerate() {
        let i = spectrum.real_index(j);
        out[i] = math::exp(la * dt) * y[i];
    }
}
