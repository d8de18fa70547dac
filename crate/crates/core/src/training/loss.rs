//! Forward evaluation and exact reverse-mode gradients of the composite
//! objective.
//!
//! Index conventions: `snap[t]` is the batch of `t`-th snapshots
//! (`t = 0..T-1`), `roll[m]` is the latent batch after `m` propagator
//! steps (`roll[0]` encodes `snap[0]`), and step `m`'s eigenvalues are
//! evaluated on the latent batch of index `m - 1` (rolled-out or encoded,
//! per [`EigSource`]).
//!
//! The backward pass walks the rollout in reverse, accumulating into the
//! latent gradient of the previous step through three channels: the
//! propagator blocks themselves, the growth-rate/frequency sensitivity of
//! each block (`d/dmu = dt * y'`, and the rotated analog for `omega`), and
//! the auxiliary networks' dependence on their scalar inputs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dynamics::Trajectory;
use crate::error::Error;
use crate::koopman::{EigSource, KoopmanModel};
use crate::mat::Mat;
use crate::math;
use crate::nnet::{ForwardCache, Mlp, MlpGrads};

use super::{KoopmanGrads, LossBreakdown, LossWeights};

/// Raw per-batch pieces of the objective, before weighting.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BatchTerms {
    pub recon: f64,
    pub pred: f64,
    pub lin: f64,
    pub inf_recon: f64,
    pub inf_pred: f64,
    pub reg: f64,
    pub batch: usize,
}

impl BatchTerms {
    pub(crate) fn breakdown(&self, w: &LossWeights) -> LossBreakdown {
        let inf = self.inf_recon + self.inf_pred;
        LossBreakdown {
            total: w.alpha1 * (self.recon + self.pred)
                + self.lin
                + w.alpha2 * inf
                + w.alpha3 * self.reg,
            recon: self.recon,
            pred: self.pred,
            lin: self.lin,
            inf,
            reg: self.reg,
        }
    }
}

struct Tape {
    snapshots: Vec<Mat>,
    enc_caches: Vec<ForwardCache>,
    enc_latents: Vec<Mat>,
    roll: Vec<Mat>,
    pair_caches: Vec<Vec<ForwardCache>>,
    real_caches: Vec<Vec<ForwardCache>>,
    pair_mu: Vec<Mat>,
    pair_om: Vec<Mat>,
    real_la: Vec<Mat>,
    dec_caches: Vec<ForwardCache>,
    recon_resid: Mat,
    pred_resids: Vec<Mat>,
    lin_resids: Vec<Mat>,
    /// Signed residual value and position of the worst reconstruction entry.
    inf_recon_at: ((usize, usize), f64),
    /// Same for the worst one-step-prediction entry.
    inf_pred_at: ((usize, usize), f64),
}

fn validate_batch(
    model: &KoopmanModel,
    batch: &[&Trajectory],
    w: &LossWeights,
) -> Result<(usize, usize), Error> {
    if batch.is_empty() {
        return Err(Error::Config(String::from("empty batch")));
    }
    if w.pred_steps < 1 {
        return Err(Error::Config(String::from("pred_steps must be at least 1")));
    }
    let t_len = batch[0].len();
    for traj in batch {
        if traj.len() != t_len {
            return Err(Error::Config(String::from(
                "trajectories in a batch must share their length",
            )));
        }
        if traj.state_dim() != model.state_dim() {
            return Err(Error::ShapeMismatch {
                expected: model.state_dim(),
                got: traj.state_dim(),
            });
        }
    }
    if t_len < w.pred_steps + 1 {
        return Err(Error::Config(String::from(
            "trajectory shorter than pred_steps + 1",
        )));
    }
    Ok((t_len, batch.len()))
}

/// Mean of squared entries, averaging over columns then rows.
pub(crate) fn msse(resid: &Mat) -> f64 {
    let denom = (resid.rows() * resid.cols()) as f64;
    resid.as_slice().iter().map(|v| v * v).sum::<f64>() / denom
}

pub(crate) fn sub(a: &Mat, b: &Mat) -> Mat {
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x -= y;
    }
    out
}

fn mat_add_scaled(dst: &mut Mat, src: &Mat, k: f64) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += k * s;
    }
}

/// Position and signed value of the largest-magnitude entry.
pub(crate) fn abs_argmax(m: &Mat) -> ((usize, usize), f64) {
    let mut best = ((0, 0), 0.0f64);
    let mut best_abs = -1.0f64;
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let v = m[(r, c)];
            let a = math::abs(v);
            if a > best_abs {
                best_abs = a;
                best = ((r, c), v);
            }
        }
    }
    best
}

/// Subgradient of `|x|` that is exactly zero at the origin.
#[inline]
pub(crate) fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn weight_squared_sum(model: &KoopmanModel) -> f64 {
    let mut reg = model.encoder.weight_squared_sum() + model.decoder.weight_squared_sum();
    for net in &model.aux_pairs {
        reg += net.weight_squared_sum();
    }
    for net in &model.aux_reals {
        reg += net.weight_squared_sum();
    }
    reg
}

fn forward_tape(
    model: &KoopmanModel,
    batch: &[&Trajectory],
    w: &LossWeights,
) -> Result<(BatchTerms, Tape), Error> {
    let (t_len, b) = validate_batch(model, batch, w)?;
    let n = model.state_dim();
    let p = model.latent_dim();
    let c = model.spectrum.complex_pairs;
    let r = model.spectrum.real_eigs;
    let sp = w.pred_steps;
    let dt = model.dt;

    // Batch of t-th snapshots, one per time index.
    let mut snapshots = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut x = Mat::zeros(b, n);
        for (bi, traj) in batch.iter().enumerate() {
            x.row_mut(bi).copy_from_slice(traj.states.row(t));
        }
        snapshots.push(x);
    }

    // Encode every snapshot.
    let mut enc_caches = Vec::with_capacity(t_len);
    let mut enc_latents = Vec::with_capacity(t_len);
    for x in &snapshots {
        let (y, cache) = model.encoder.forward_cached(x)?;
        enc_caches.push(cache);
        enc_latents.push(y);
    }

    // Roll the latent batch forward, re-evaluating eigenvalues per step.
    let mut roll = Vec::with_capacity(t_len);
    roll.push(enc_latents[0].clone());
    let mut pair_caches = Vec::with_capacity(t_len - 1);
    let mut real_caches = Vec::with_capacity(t_len - 1);
    let mut pair_mu = Vec::with_capacity(t_len - 1);
    let mut pair_om = Vec::with_capacity(t_len - 1);
    let mut real_la = Vec::with_capacity(t_len - 1);

    for m in 1..t_len {
        let mut step_pair_caches = Vec::with_capacity(c);
        let mut mu = Mat::zeros(b, c);
        let mut om = Mat::zeros(b, c);
        {
            let src = match w.eig_source {
                EigSource::Predicted => &roll[m - 1],
                EigSource::Encoded => &enc_latents[m - 1],
            };
            for j in 0..c {
                let i = model.spectrum.pair_index(j);
                let mut input = Mat::zeros(b, 1);
                for bi in 0..b {
                    let row = src.row(bi);
                    input[(bi, 0)] = math::hypot2(row[i], row[i + 1]);
                }
                let (out, cache) = model.aux_pairs[j].forward_cached(&input)?;
                for bi in 0..b {
                    mu[(bi, j)] = out[(bi, 0)];
                    om[(bi, j)] = out[(bi, 1)];
                }
                step_pair_caches.push(cache);
            }
        }
        let mut step_real_caches = Vec::with_capacity(r);
        let mut la = Mat::zeros(b, r);
        {
            let src = match w.eig_source {
                EigSource::Predicted => &roll[m - 1],
                EigSource::Encoded => &enc_latents[m - 1],
            };
            for j in 0..r {
                let i = model.spectrum.real_index(j);
                let mut input = Mat::zeros(b, 1);
                for bi in 0..b {
                    input[(bi, 0)] = src.row(bi)[i];
                }
                let (out, cache) = model.aux_reals[j].forward_cached(&input)?;
                for bi in 0..b {
                    la[(bi, j)] = out[(bi, 0)];
                }
                step_real_caches.push(cache);
            }
        }

        let prev = &roll[m - 1];
        let mut next = Mat::zeros(b, p);
        for bi in 0..b {
            for j in 0..c {
                let i = model.spectrum.pair_index(j);
                let blk = crate::koopman::pair_block(mu[(bi, j)], om[(bi, j)], dt);
                let (u, v) = (prev[(bi, i)], prev[(bi, i + 1)]);
                next[(bi, i)] = blk[0] * u + blk[1] * v;
                next[(bi, i + 1)] = blk[2] * u + blk[3] * v;
            }
            for j in 0..r {
                let i = model.spectrum.real_index(j);
                next[(bi, i)] = math::exp(la[(bi, j)] * dt) * prev[(bi, i)];
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite("latent rollout"));
        }
        roll.push(next);
        pair_caches.push(step_pair_caches);
        real_caches.push(step_real_caches);
        pair_mu.push(mu);
        pair_om.push(om);
        real_la.push(la);
    }

    // Decode the reconstruction and the first `sp` predicted steps.
    let mut dec_caches = Vec::with_capacity(sp + 1);
    let mut dec_outs = Vec::with_capacity(sp + 1);
    for latents in roll.iter().take(sp + 1) {
        let (out, cache) = model.decoder.forward_cached(latents)?;
        dec_caches.push(cache);
        dec_outs.push(out);
    }

    let recon_resid = sub(&dec_outs[0], &snapshots[0]);
    let pred_resids: Vec<Mat> = (1..=sp)
        .map(|m| sub(&dec_outs[m], &snapshots[m]))
        .collect();
    let lin_resids: Vec<Mat> = (1..t_len)
        .map(|m| sub(&roll[m], &enc_latents[m]))
        .collect();

    let recon = msse(&recon_resid);
    let pred = pred_resids.iter().map(msse).sum::<f64>() / sp as f64;
    let lin = lin_resids.iter().map(msse).sum::<f64>() / (t_len - 1) as f64;
    let inf_recon_at = abs_argmax(&recon_resid);
    let inf_pred_at = abs_argmax(&pred_resids[0]);
    let reg = weight_squared_sum(model);

    let terms = BatchTerms {
        recon,
        pred,
        lin,
        inf_recon: math::abs(inf_recon_at.1),
        inf_pred: math::abs(inf_pred_at.1),
        reg,
        batch: b,
    };
    let tape = Tape {
        snapshots,
        enc_caches,
        enc_latents,
        roll,
        pair_caches,
        real_caches,
        pair_mu,
        pair_om,
        real_la,
        dec_caches,
        recon_resid,
        pred_resids,
        lin_resids,
        inf_recon_at,
        inf_pred_at,
    };
    Ok((terms, tape))
}

pub(crate) fn batch_terms(
    model: &KoopmanModel,
    batch: &[&Trajectory],
    w: &LossWeights,
) -> Result<BatchTerms, Error> {
    forward_tape(model, batch, w).map(|(terms, _)| terms)
}

/// Evaluates the objective on a batch of whole trajectories.
pub fn compute_loss(
    model: &KoopmanModel,
    batch: &[Trajectory],
    w: &LossWeights,
) -> Result<LossBreakdown, Error> {
    let refs: Vec<&Trajectory> = batch.iter().collect();
    batch_terms(model, &refs, w).map(|t| t.breakdown(w))
}

fn add_reg_grads(grads: &mut MlpGrads, net: &Mlp, alpha3: f64) {
    for (lg, layer) in grads.layers.iter_mut().zip(net.layers()) {
        for (d, wv) in lg
            .d_weight
            .as_mut_slice()
            .iter_mut()
            .zip(layer.weight.as_slice())
        {
            *d += 2.0 * alpha3 * wv;
        }
    }
}

/// Regularization gradient `2 alpha3 W` for every network of the model.
pub(crate) fn add_reg_grads_all(grads: &mut KoopmanGrads, model: &KoopmanModel, alpha3: f64) {
    add_reg_grads(&mut grads.encoder, &model.encoder, alpha3);
    add_reg_grads(&mut grads.decoder, &model.decoder, alpha3);
    for (g, net) in grads.aux_pairs.iter_mut().zip(&model.aux_pairs) {
        add_reg_grads(g, net, alpha3);
    }
    for (g, net) in grads.aux_reals.iter_mut().zip(&model.aux_reals) {
        add_reg_grads(g, net, alpha3);
    }
}

pub(crate) fn compute_gradients_refs(
    model: &KoopmanModel,
    batch: &[&Trajectory],
    w: &LossWeights,
) -> Result<(LossBreakdown, KoopmanGrads), Error> {
    let (terms, tape) = forward_tape(model, batch, w)?;
    let b = terms.batch;
    let t_len = tape.snapshots.len();
    let n = model.state_dim();
    let p = model.latent_dim();
    let c = model.spectrum.complex_pairs;
    let r = model.spectrum.real_eigs;
    let sp = w.pred_steps;
    let dt = model.dt;

    let mut grads = KoopmanGrads::zeros_like(model);
    add_reg_grads_all(&mut grads, model, w.alpha3);

    // Gradients with respect to each rolled-out latent batch and each
    // encoded latent batch.
    let mut g_roll: Vec<Mat> = (0..t_len).map(|_| Mat::zeros(b, p)).collect();
    let mut g_enc: Vec<Mat> = (0..t_len).map(|_| Mat::zeros(b, p)).collect();

    // Decoder paths: reconstruction (m = 0) and prediction (m = 1..sp),
    // with the worst-entry penalty on m = 0 and m = 1.
    let recon_coef = 2.0 * w.alpha1 / ((b * n) as f64);
    let pred_coef = 2.0 * w.alpha1 / ((sp * b * n) as f64);
    for m in 0..=sp {
        let mut g_out = Mat::zeros(b, n);
        if m == 0 {
            mat_add_scaled(&mut g_out, &tape.recon_resid, recon_coef);
            let ((br, bc), val) = tape.inf_recon_at;
            g_out[(br, bc)] += w.alpha2 * sign0(val);
        } else {
            mat_add_scaled(&mut g_out, &tape.pred_resids[m - 1], pred_coef);
            if m == 1 {
                let ((br, bc), val) = tape.inf_pred_at;
                g_out[(br, bc)] += w.alpha2 * sign0(val);
            }
        }
        let (dg, g_latent) = model.decoder.backward(&tape.dec_caches[m], &g_out)?;
        grads.decoder.accumulate(&dg);
        mat_add_scaled(&mut g_roll[m], &g_latent, 1.0);
    }

    // Linearity residuals touch both the rollout and the encoded latents.
    let lin_coef = 2.0 / (((t_len - 1) * b * p) as f64);
    for m in 1..t_len {
        mat_add_scaled(&mut g_roll[m], &tape.lin_resids[m - 1], lin_coef);
        mat_add_scaled(&mut g_enc[m], &tape.lin_resids[m - 1], -lin_coef);
    }

    // Walk the rollout backwards.
    for m in (1..t_len).rev() {
        let (left, right) = g_roll.split_at_mut(m);
        let g_prev = &mut left[m - 1];
        let g_next = &right[0];
        let step = m - 1;

        for j in 0..c {
            let i = model.spectrum.pair_index(j);
            let mut aux_g_out = Mat::zeros(b, 2);
            for bi in 0..b {
                let gu = g_next[(bi, i)];
                let gv = g_next[(bi, i + 1)];
                let u_next = tape.roll[m][(bi, i)];
                let v_next = tape.roll[m][(bi, i + 1)];
                let mu = tape.pair_mu[step][(bi, j)];
                let om = tape.pair_om[step][(bi, j)];
                let scale = math::exp(mu * dt);
                let cth = math::cos(om * dt);
                let sth = math::sin(om * dt);
                // d(next)/d(mu) = dt * next; d(next)/d(omega) rotates it.
                aux_g_out[(bi, 0)] = dt * (gu * u_next + gv * v_next);
                aux_g_out[(bi, 1)] = dt * (gv * u_next - gu * v_next);
                // Transpose of the block itself.
                g_prev[(bi, i)] += scale * (cth * gu + sth * gv);
                g_prev[(bi, i + 1)] += scale * (-sth * gu + cth * gv);
            }
            let (pg, d_in) = model.aux_pairs[j].backward(&tape.pair_caches[step][j], &aux_g_out)?;
            grads.aux_pairs[j].accumulate(&pg);
            // Chain through the squared radius of the source latent.
            match w.eig_source {
                EigSource::Predicted => {
                    for bi in 0..b {
                        let d = d_in[(bi, 0)];
                        let us = tape.roll[step][(bi, i)];
                        let vs = tape.roll[step][(bi, i + 1)];
                        g_prev[(bi, i)] += 2.0 * us * d;
                        g_prev[(bi, i + 1)] += 2.0 * vs * d;
                    }
                }
                EigSource::Encoded => {
                    let ge = &mut g_enc[step];
                    for bi in 0..b {
                        let d = d_in[(bi, 0)];
                        let us = tape.enc_latents[step][(bi, i)];
                        let vs = tape.enc_latents[step][(bi, i + 1)];
                        ge[(bi, i)] += 2.0 * us * d;
                        ge[(bi, i + 1)] += 2.0 * vs * d;
                    }
                }
            }
        }

        for j in 0..r {
            let i = model.spectrum.real_index(j);
            let mut aux_g_out = Mat::zeros(b, 1);
            for bi in 0..b {
                let gw = g_next[(bi, i)];
                let w_next = tape.roll[m][(bi, i)];
                let la = tape.real_la[step][(bi, j)];
                aux_g_out[(bi, 0)] = dt * gw * w_next;
                g_prev[(bi, i)] += math::exp(la * dt) * gw;
            }
            let (rg, d_in) = model.aux_reals[j].backward(&tape.real_caches[step][j], &aux_g_out)?;
            grads.aux_reals[j].accumulate(&rg);
            match w.eig_source {
                EigSource::Predicted => {
                    for bi in 0..b {
                        g_prev[(bi, i)] += d_in[(bi, 0)];
                    }
                }
                EigSource::Encoded => {
                    let ge = &mut g_enc[step];
                    for bi in 0..b {
                        ge[(bi, i)] += d_in[(bi, 0)];
                    }
                }
            }
        }
    }

    // The rollout starts at the encoding of the first snapshot.
    let g_roll0 = g_roll[0].clone();
    mat_add_scaled(&mut g_enc[0], &g_roll0, 1.0);

    for t in 0..t_len {
        let (eg, _) = model.encoder.backward(&tape.enc_caches[t], &g_enc[t])?;
        grads.encoder.accumulate(&eg);
    }

    Ok((terms.breakdown(w), grads))
}

/// Gradients of the objective's total with respect to every parameter.
pub fn compute_gradients(
    model: &KoopmanModel,
    batch: &[Trajectory],
    w: &LossWeights,
) -> Result<(LossBreakdown, KoopmanGrads), Error> {
    let refs: Vec<&Trajectory> = batch.iter().collect();
    compute_gradients_refs(model, &refs, w)
}

/// Smallest pre-activation magnitude seen anywhere in one evaluation of the
/// objective.
///
/// Finite-difference checks perturb parameters by a small step; when a ReLU
/// pre-activation sits almost exactly at its kink the two-sided difference
/// straddles it and the comparison measures the kink, not the gradient.
/// Seed-selection in gradient test harnesses uses this clearance to skip
/// such configurations.
pub fn relu_clearance(
    model: &KoopmanModel,
    batch: &[Trajectory],
    w: &LossWeights,
) -> Result<f64, Error> {
    let refs: Vec<&Trajectory> = batch.iter().collect();
    let (_, tape) = forward_tape(model, &refs, w)?;
    let mut min_abs = f64::INFINITY;
    let mut scan = |net: &Mlp, caches: &[ForwardCache]| {
        for cache in caches {
            for (layer, z) in net.layers().iter().zip(cache.preactivations()) {
                if layer.activation != crate::nnet::Activation::ReLU {
                    continue;
                }
                for v in z.as_slice() {
                    min_abs = min_abs.min(math::abs(*v));
                }
            }
        }
    };
    scan(&model.encoder, &tape.enc_caches);
    scan(&model.decoder, &tape.dec_caches);
    for step in &tape.pair_caches {
        for (net, cache) in model.aux_pairs.iter().zip(step) {
            scan(net, core::slice::from_ref(cache));
        }
    }
    for step in &tape.real_caches {
        for (net, cache) in model.aux_reals.iter().zip(step) {
            scan(net, core::slice::from_ref(cache));
        }
    }
    Ok(min_abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Trajectory;
    use alloc::vec;
    use crate::koopman::{KoopmanModel, ModelDims, SpectrumConfig};
    use crate::nnet::{finite_diff_check, Activation, DenseLayer};
    use crate::rng::SeedStream;

    fn identity_mlp(n: usize) -> Mlp {
        Mlp::from_layers(vec![DenseLayer {
            weight: Mat::identity(n),
            bias: vec![0.0; n],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    fn zero_net(dims: &[usize]) -> Mlp {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, pair)| DenseLayer {
                weight: Mat::zeros(pair[1], pair[0]),
                bias: vec![0.0; pair[1]],
                activation: if k + 2 == dims.len() {
                    Activation::Linear
                } else {
                    Activation::ReLU
                },
            })
            .collect();
        Mlp::from_layers(layers).unwrap()
    }

    fn constant_traj(value: &[f64], t_len: usize, dt: f64) -> Trajectory {
        let mut states = Mat::zeros(t_len, value.len());
        for t in 0..t_len {
            states.row_mut(t).copy_from_slice(value);
        }
        Trajectory { states, dt }
    }

    fn random_traj(rng: &mut SeedStream, t_len: usize, dim: usize, dt: f64) -> Trajectory {
        let mut states = Mat::zeros(t_len, dim);
        for v in states.as_mut_slice() {
            *v = rng.uniform_in(-0.8, 0.8);
        }
        Trajectory { states, dt }
    }

    /// Identity autoencoder on R^2 with two frozen real eigenvalues of 0,
    /// i.e. the propagator is exactly the identity.
    fn trivial_model() -> KoopmanModel {
        let spectrum = SpectrumConfig::new(0, 2).unwrap();
        KoopmanModel::new(
            identity_mlp(2),
            identity_mlp(2),
            vec![],
            vec![zero_net(&[1, 3, 1]), zero_net(&[1, 3, 1])],
            spectrum,
            0.02,
        )
        .unwrap()
    }

    fn weights(alpha1: f64, alpha2: f64, alpha3: f64, sp: usize) -> LossWeights {
        LossWeights {
            alpha1,
            alpha2,
            alpha3,
            pred_steps: sp,
            eig_source: EigSource::Predicted,
        }
    }

    #[test]
    fn fixed_point_of_every_term() {
        let model = trivial_model();
        let batch = vec![
            constant_traj(&[0.3, -0.4], 6, 0.02),
            constant_traj(&[0.1, 0.2], 6, 0.02),
        ];
        let w = weights(0.5, 0.25, 0.125, 3);
        let out = compute_loss(&model, &batch, &w).unwrap();
        assert_eq!(out.recon, 0.0);
        assert_eq!(out.pred, 0.0);
        assert_eq!(out.lin, 0.0);
        assert_eq!(out.inf, 0.0);
        // reg: the two identity networks contribute 2 + 2.
        assert_eq!(out.reg, 4.0);
        assert_eq!(out.total, 0.125 * 4.0);
    }

    #[test]
    fn zero_weights_leave_only_linearity() {
        let spectrum = SpectrumConfig::new(1, 0).unwrap();
        let dims = ModelDims::symmetric(2, &[5], &[4], spectrum);
        let model = KoopmanModel::init(&dims, spectrum, 0.02, 3).unwrap();
        let mut rng = SeedStream::new(8);
        let batch = vec![
            random_traj(&mut rng, 6, 2, 0.02),
            random_traj(&mut rng, 6, 2, 0.02),
        ];
        let w = weights(0.0, 0.0, 0.0, 3);
        let out = compute_loss(&model, &batch, &w).unwrap();
        assert_eq!(out.total, out.lin);
        assert!(out.lin > 0.0);
    }

    #[test]
    fn breakdown_recomposes() {
        let spectrum = SpectrumConfig::new(1, 1).unwrap();
        let dims = ModelDims::symmetric(3, &[6], &[5], spectrum);
        let model = KoopmanModel::init(&dims, spectrum, 0.05, 21).unwrap();
        let mut rng = SeedStream::new(4);
        let batch = vec![
            random_traj(&mut rng, 7, 3, 0.05),
            random_traj(&mut rng, 7, 3, 0.05),
            random_traj(&mut rng, 7, 3, 0.05),
        ];
        let w = weights(0.1, 1e-7, 1e-13, 4);
        let out = compute_loss(&model, &batch, &w).unwrap();
        let recomposed =
            w.alpha1 * (out.recon + out.pred) + out.lin + w.alpha2 * out.inf + w.alpha3 * out.reg;
        assert!((out.total - recomposed).abs() < 1e-12);
    }

    #[test]
    fn too_short_trajectory_is_config_error() {
        let model = trivial_model();
        let batch = vec![constant_traj(&[0.1, 0.1], 3, 0.02)];
        let w = weights(0.1, 0.0, 0.0, 5);
        assert!(matches!(
            compute_loss(&model, &batch, &w),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trivial_minimum_leaves_only_reg_gradient() {
        let model = trivial_model();
        let batch = vec![
            constant_traj(&[0.3, -0.4], 6, 0.02),
            constant_traj(&[0.1, 0.2], 6, 0.02),
        ];
        let alpha3 = 0.125;
        let w = weights(0.5, 0.25, alpha3, 3);
        let (_, grads) = compute_gradients(&model, &batch, &w).unwrap();
        // Encoder/decoder gradient is exactly 2 * alpha3 * W.
        for (g, net) in [
            (&grads.encoder, &model.encoder),
            (&grads.decoder, &model.decoder),
        ] {
            for (lg, layer) in g.layers.iter().zip(net.layers()) {
                for (d, wv) in lg.d_weight.as_slice().iter().zip(layer.weight.as_slice()) {
                    assert_eq!(*d, 2.0 * alpha3 * wv);
                }
                assert!(lg.d_bias.iter().all(|&d| d == 0.0));
            }
        }
        // Aux nets have zero weights, so even their reg gradient vanishes.
        for g in grads.aux_reals.iter() {
            for lg in &g.layers {
                assert!(lg.d_weight.as_slice().iter().all(|&d| d == 0.0));
                assert!(lg.d_bias.iter().all(|&d| d == 0.0));
            }
        }
    }

    fn model_for(kind: crate::dynamics::SystemKind, seed: u64) -> (KoopmanModel, usize) {
        let spectrum = SpectrumConfig::for_system(kind);
        let state_dim = crate::dynamics::SystemSpec::new(kind).state_dim;
        let dims = ModelDims::symmetric(state_dim, &[8, 7], &[6], spectrum);
        (
            KoopmanModel::init(&dims, spectrum, 0.02, seed).unwrap(),
            state_dim,
        )
    }

    /// Finite differences straddle ReLU kinks; skip seeds whose forward
    /// pass has a pre-activation too close to one.
    fn gradient_gap(kind: crate::dynamics::SystemKind, base_seed: u64, source: EigSource) -> f64 {
        let mut w = weights(0.7, 0.4, 0.2, 3);
        w.eig_source = source;
        for seed in base_seed..base_seed + 64 {
            let (model, state_dim) = model_for(kind, seed);
            let mut rng = SeedStream::new(seed ^ 0xabcd);
            let batch = vec![
                random_traj(&mut rng, 6, state_dim, 0.02),
                random_traj(&mut rng, 6, state_dim, 0.02),
            ];
            if relu_clearance(&model, &batch, &w).unwrap() < 1e-3 {
                continue;
            }
            let (_, grads) = compute_gradients(&model, &batch, &w).unwrap();
            let mut params = Vec::new();
            model.collect_params(&mut params);
            let mut analytic = Vec::new();
            grads.collect_into(&mut analytic);

            let mut probe = model.clone();
            return finite_diff_check(
                |p| {
                    probe.load_params(p).unwrap();
                    compute_loss(&probe, &batch, &w).unwrap().total
                },
                &params,
                &analytic,
                1e-5,
            );
        }
        panic!("no seed with ReLU clearance found near {base_seed}");
    }

    #[test]
    fn gradients_match_finite_differences_all_spectra() {
        use crate::dynamics::SystemKind::*;
        for (kind, seed) in [
            (DiscreteSpectrum, 3u64),
            (Pendulum, 100),
            (FluidFlowOnAttractor, 200),
            (FluidFlowOffAttractor, 300),
        ] {
            let gap = gradient_gap(kind, seed, EigSource::Predicted);
            assert!(gap < 1e-5, "{kind:?} predicted-mode gap {gap}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_encoded_mode() {
        use crate::dynamics::SystemKind::*;
        for (kind, seed) in [(Pendulum, 400u64), (FluidFlowOffAttractor, 500)] {
            let gap = gradient_gap(kind, seed, EigSource::Encoded);
            assert!(gap < 1e-5, "{kind:?} encoded-mode gap {gap}");
        }
    }

    #[test]
    fn alpha1_scales_its_terms_linearly() {
        let (model, state_dim) = model_for(crate::dynamics::SystemKind::Pendulum, 9);
        let mut rng = SeedStream::new(10);
        let batch = vec![
            random_traj(&mut rng, 6, state_dim, 0.02),
            random_traj(&mut rng, 6, state_dim, 0.02),
        ];
        let flat = |a1: f64| {
            let w = weights(a1, 0.0, 0.0, 3);
            let (_, g) = compute_gradients(&model, &batch, &w).unwrap();
            let mut v = Vec::new();
            g.collect_into(&mut v);
            v
        };
        let g0 = flat(0.0);
        let g1 = flat(0.3);
        let g2 = flat(0.6);
        for i in 0..g0.len() {
            let lhs = g2[i] - g1[i];
            let rhs = g1[i] - g0[i];
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())),
                "index {i}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn regularizer_ignores_biases() {
        let (mut model, state_dim) = model_for(crate::dynamics::SystemKind::DiscreteSpectrum, 12);
        let mut rng = SeedStream::new(13);
        let batch = vec![random_traj(&mut rng, 6, state_dim, 0.02)];
        let w = weights(0.0, 0.0, 1.0, 3);
        let before = compute_loss(&model, &batch, &w).unwrap().reg;
        // Perturb a bias only.
        let mut flat = Vec::new();
        model.collect_params(&mut flat);
        let first_layer = &model.encoder.layers()[0];
        let bias_idx = first_layer.in_dim() * first_layer.out_dim();
        flat[bias_idx] += 7.5;
        model.load_params(&flat).unwrap();
        let after = compute_loss(&model, &batch, &w).unwrap().reg;
        assert_eq!(before, after);
    }

    #[test]
    fn batch_permutation_leaves_breakdown() {
        let (model, state_dim) = model_for(crate::dynamics::SystemKind::FluidFlowOffAttractor, 20);
        let mut rng = SeedStream::new(21);
        let batch: Vec<Trajectory> = (0..5)
            .map(|_| random_traj(&mut rng, 6, state_dim, 0.02))
            .collect();
        let mut permuted = batch.clone();
        permuted.reverse();
        permuted.swap(0, 2);
        let w = weights(0.1, 1e-2, 1e-4, 3);
        let a = compute_loss(&model, &batch, &w).unwrap();
        let b = compute_loss(&model, &permuted, &w).unwrap();
        for (x, y) in [
            (a.total, b.total),
            (a.recon, b.recon),
            (a.pred, b.pred),
            (a.lin, b.lin),
            (a.inf, b.inf),
            (a.reg, b.reg),
        ] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}
