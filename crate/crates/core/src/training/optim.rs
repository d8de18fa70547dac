//! Pretraining, the Adam training loop, and whole-split loss evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dynamics::{Dataset, Trajectory};
use crate::error::Error;
use crate::koopman::KoopmanModel;
use crate::mat::Mat;
use crate::math;
use crate::nnet::{adam_step, AdamState};
use crate::rng::{derive_seed, SeedStream};

use super::loss::{abs_argmax, add_reg_grads_all, batch_terms, compute_gradients_refs, msse, sign0, sub};
use super::{KoopmanGrads, LossBreakdown, LossWeights, TrainConfig, TrainReport};

/// Evaluates the objective over a whole split, batched in index order.
///
/// Mean terms are combined weighted by batch size; the worst-entry terms
/// take the maximum across batches; the result is exactly what one giant
/// batch would produce, up to summation order.
pub fn dataset_loss(
    model: &KoopmanModel,
    trajectories: &[Trajectory],
    w: &LossWeights,
    batch_size: usize,
) -> Result<LossBreakdown, Error> {
    if trajectories.is_empty() {
        return Err(Error::Config(String::from("empty dataset")));
    }
    assert!(batch_size > 0, "batch_size must be positive");
    let mut recon_sum = 0.0;
    let mut pred_sum = 0.0;
    let mut lin_sum = 0.0;
    let mut inf_recon = 0.0f64;
    let mut inf_pred = 0.0f64;
    let mut reg = 0.0;
    let total_n = trajectories.len() as f64;
    for chunk in trajectories.chunks(batch_size) {
        let refs: Vec<&Trajectory> = chunk.iter().collect();
        let terms = batch_terms(model, &refs, w)?;
        let b = terms.batch as f64;
        recon_sum += terms.recon * b;
        pred_sum += terms.pred * b;
        lin_sum += terms.lin * b;
        inf_recon = inf_recon.max(terms.inf_recon);
        inf_pred = inf_pred.max(terms.inf_pred);
        reg = terms.reg;
    }
    let recon = recon_sum / total_n;
    let pred = pred_sum / total_n;
    let lin = lin_sum / total_n;
    let inf = inf_recon + inf_pred;
    Ok(LossBreakdown {
        total: w.alpha1 * (recon + pred) + lin + w.alpha2 * inf + w.alpha3 * reg,
        recon,
        pred,
        lin,
        inf,
        reg,
    })
}

/// Shuffled whole-trajectory batches, reshuffled every epoch.
struct EpochBatches {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: SeedStream,
}

impl EpochBatches {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        EpochBatches {
            order: (0..n).collect(),
            pos: n, // force a shuffle before the first batch
            batch,
            rng: SeedStream::new(seed),
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let slice = &self.order[self.pos..end];
        self.pos = end;
        slice
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = SeedStream::new(seed);
        self.pos = self.order.len();
    }
}

/// Autoencoder-only gradients: reconstruction, its worst-entry penalty,
/// and regularization. The propagator never runs, so prediction and
/// linearity contribute exactly nothing.
fn pretrain_gradients(
    model: &KoopmanModel,
    batch: &[&Trajectory],
    w: &LossWeights,
) -> Result<(f64, KoopmanGrads), Error> {
    let b = batch.len();
    let n = model.state_dim();
    let mut x0 = Mat::zeros(b, n);
    for (bi, traj) in batch.iter().enumerate() {
        x0.row_mut(bi).copy_from_slice(traj.states.row(0));
    }
    let (y, enc_cache) = model.encoder.forward_cached(&x0)?;
    let (xhat, dec_cache) = model.decoder.forward_cached(&y)?;
    let resid = sub(&xhat, &x0);
    let recon = msse(&resid);
    let (pos, val) = abs_argmax(&resid);

    let mut reg = model.encoder.weight_squared_sum() + model.decoder.weight_squared_sum();
    for net in model.aux_pairs.iter().chain(&model.aux_reals) {
        reg += net.weight_squared_sum();
    }
    let loss = w.alpha1 * recon + w.alpha2 * math::abs(val) + w.alpha3 * reg;

    let mut g_out = Mat::zeros(b, n);
    let coef = 2.0 * w.alpha1 / ((b * n) as f64);
    for (g, rv) in g_out.as_mut_slice().iter_mut().zip(resid.as_slice()) {
        *g = coef * rv;
    }
    g_out[pos] += w.alpha2 * sign0(val);

    let mut grads = KoopmanGrads::zeros_like(model);
    add_reg_grads_all(&mut grads, model, w.alpha3);
    let (dg, g_latent) = model.decoder.backward(&dec_cache, &g_out)?;
    grads.decoder.accumulate(&dg);
    let (eg, _) = model.encoder.backward(&enc_cache, &g_latent)?;
    grads.encoder.accumulate(&eg);
    Ok((loss, grads))
}

/// Runs Adam on the autoencoder loss alone for `config.pretrain_steps`
/// steps. With zero steps the model is returned unchanged.
pub fn pretrain(
    model: KoopmanModel,
    dataset: &Dataset,
    config: &TrainConfig,
    w: &LossWeights,
) -> Result<KoopmanModel, Error> {
    let mut model = model;
    if config.pretrain_steps == 0 {
        return Ok(model);
    }
    validate_config(config, dataset.trajectories.len())?;
    let n_params = model.param_count();
    let mut params = Vec::with_capacity(n_params);
    model.collect_params(&mut params);
    let mut adam = AdamState::new(n_params);
    let mut batches = EpochBatches::new(
        dataset.trajectories.len(),
        config.batch_size,
        derive_seed(config.seed, 21),
    );
    let mut flat = Vec::with_capacity(n_params);
    for _ in 0..config.pretrain_steps {
        let idx = batches.next();
        let refs: Vec<&Trajectory> = idx.iter().map(|&i| &dataset.trajectories[i]).collect();
        let (_, grads) = pretrain_gradients(&model, &refs, w)?;
        flat.clear();
        grads.collect_into(&mut flat);
        adam_step(&mut params, &flat, &mut adam, config.learning_rate)?;
        model.load_params(&params)?;
    }
    Ok(model)
}

fn validate_config(config: &TrainConfig, n_train: usize) -> Result<(), Error> {
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config(String::from("learning rate must be positive")));
    }
    if config.batch_size == 0 || config.batch_size > n_train {
        return Err(Error::Config(String::from(
            "batch_size must be in 1..=n_train",
        )));
    }
    if config.validation_interval == 0 {
        return Err(Error::Config(String::from(
            "validation_interval must be positive",
        )));
    }
    Ok(())
}

/// Trains with Adam over shuffled whole-trajectory batches, evaluating the
/// validation split every `validation_interval` steps, and returns the
/// checkpoint with the lowest recorded validation loss.
///
/// A step that produces non-finite gradients is absorbed by restoring the
/// best checkpoint with fresh optimizer state and a reseeded shuffle, at
/// most `divergence_retries` times; after that the divergence error is
/// returned.
pub fn train(
    model: KoopmanModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    w: &LossWeights,
) -> Result<(KoopmanModel, TrainReport), Error> {
    if train_set.system != val_set.system {
        return Err(Error::Config(String::from(
            "train and validation sets come from different systems",
        )));
    }
    if train_set.trajectories.is_empty() || val_set.trajectories.is_empty() {
        return Err(Error::Config(String::from("empty split")));
    }
    validate_config(config, train_set.trajectories.len())?;

    let mut model = model;
    let n_params = model.param_count();
    let mut params = Vec::with_capacity(n_params);
    model.collect_params(&mut params);
    let mut adam = AdamState::new(n_params);
    let mut batches = EpochBatches::new(
        train_set.trajectories.len(),
        config.batch_size,
        derive_seed(config.seed, 22),
    );

    let mut train_trace = Vec::new();
    let mut val_trace = Vec::new();
    let initial_val = dataset_loss(&model, &val_set.trajectories, w, config.batch_size)?;
    val_trace.push((0u64, initial_val.total));
    let mut best_step = 0u64;
    let mut best_val = initial_val.total;
    let mut best_params = params.clone();

    let mut retries: u32 = 0;
    let mut step: u64 = 0;
    let mut flat = Vec::with_capacity(n_params);
    while step < config.max_steps {
        let refs: Vec<&Trajectory> = {
            let idx = batches.next();
            idx.iter().map(|&i| &train_set.trajectories[i]).collect()
        };
        let outcome = compute_gradients_refs(&model, &refs, w).and_then(|(bd, grads)| {
            flat.clear();
            grads.collect_into(&mut flat);
            adam_step(&mut params, &flat, &mut adam, config.learning_rate)?;
            Ok(bd)
        });
        match outcome {
            Ok(bd) => {
                model.load_params(&params)?;
                step += 1;
                train_trace.push(bd.total);
                if step % config.validation_interval == 0 || step == config.max_steps {
                    let vb = dataset_loss(&model, &val_set.trajectories, w, config.batch_size)?;
                    val_trace.push((step, vb.total));
                    if vb.total < best_val {
                        best_val = vb.total;
                        best_step = step;
                        best_params.copy_from_slice(&params);
                    }
                }
            }
            Err(Error::NonFinite(ctx)) => {
                if retries >= config.divergence_retries {
                    return Err(Error::NonFinite(ctx));
                }
                retries += 1;
                params.copy_from_slice(&best_params);
                model.load_params(&params)?;
                adam = AdamState::new(n_params);
                batches.reseed(derive_seed(config.seed, 1000 + retries as u64));
            }
            Err(e) => return Err(e),
        }
    }

    params.copy_from_slice(&best_params);
    model.load_params(&params)?;
    let final_train = dataset_loss(&model, &train_set.trajectories, w, config.batch_size)?;
    let final_val = dataset_loss(&model, &val_set.trajectories, w, config.batch_size)?;
    let report = TrainReport {
        train_trace,
        val_trace,
        best_step,
        final_train,
        final_val,
        final_test: None,
        steps_run: step,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_dataset, Split, SystemKind, SystemSpec};
    use crate::koopman::{ModelDims, SpectrumConfig};

    fn small_sets(kind: SystemKind, n: usize) -> (Dataset, Dataset) {
        let sys = SystemSpec::new(kind);
        let train = generate_dataset(&sys, Split::Train, n, 7).unwrap();
        let val = generate_dataset(&sys, Split::Validation, n / 2, 7).unwrap();
        (train, val)
    }

    fn small_model(kind: SystemKind, seed: u64) -> crate::koopman::KoopmanModel {
        let sys = SystemSpec::new(kind);
        let spectrum = SpectrumConfig::for_system(kind);
        let dims = ModelDims::symmetric(sys.state_dim, &[10], &[6], spectrum);
        crate::koopman::KoopmanModel::init(&dims, spectrum, sys.dt, seed).unwrap()
    }

    #[test]
    fn zero_steps_return_model_unchanged() {
        let (train_set, val_set) = small_sets(SystemKind::DiscreteSpectrum, 8);
        let model = small_model(SystemKind::DiscreteSpectrum, 1);
        let w = LossWeights::for_system(SystemKind::DiscreteSpectrum);
        let config = TrainConfig {
            max_steps: 0,
            pretrain_steps: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let pretrained = pretrain(model.clone(), &train_set, &config, &w).unwrap();
        assert_eq!(pretrained, model);
        let (out, report) = train(model.clone(), &train_set, &val_set, &config, &w).unwrap();
        assert_eq!(out, model);
        assert_eq!(report.best_step, 0);
        assert_eq!(report.val_trace.len(), 1);
    }

    #[test]
    fn best_checkpoint_reproduces_trace_minimum() {
        let (train_set, val_set) = small_sets(SystemKind::DiscreteSpectrum, 12);
        let model = small_model(SystemKind::DiscreteSpectrum, 2);
        let mut w = LossWeights::for_system(SystemKind::DiscreteSpectrum);
        w.pred_steps = 10;
        let config = TrainConfig {
            max_steps: 30,
            pretrain_steps: 0,
            batch_size: 6,
            validation_interval: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        let (best, report) = train(model, &train_set, &val_set, &config, &w).unwrap();
        let min_trace = report
            .val_trace
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::INFINITY, f64::min);
        let re_eval = dataset_loss(&best, &val_set.trajectories, &w, config.batch_size).unwrap();
        assert_eq!(re_eval.total, min_trace);
        assert_eq!(re_eval.total, report.final_val.total);
        let best_entry = report
            .val_trace
            .iter()
            .find(|&&(s, _)| s == report.best_step)
            .unwrap();
        assert_eq!(best_entry.1, min_trace);
    }

    #[test]
    fn training_is_deterministic() {
        let (train_set, val_set) = small_sets(SystemKind::Pendulum, 10);
        let mut w = LossWeights::for_system(SystemKind::Pendulum);
        w.pred_steps = 5;
        let config = TrainConfig {
            max_steps: 12,
            pretrain_steps: 4,
            batch_size: 5,
            validation_interval: 6,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let model = small_model(SystemKind::Pendulum, 3);
            let model = pretrain(model, &train_set, &config, &w).unwrap();
            train(model, &train_set, &val_set, &config, &w).unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn pretraining_reduces_reconstruction() {
        let (train_set, _) = small_sets(SystemKind::DiscreteSpectrum, 24);
        let model = small_model(SystemKind::DiscreteSpectrum, 4);
        let w = LossWeights::for_system(SystemKind::DiscreteSpectrum);
        let config = TrainConfig {
            pretrain_steps: 300,
            batch_size: 12,
            ..TrainConfig::default()
        };
        let before = dataset_loss(&model, &train_set.trajectories, &w, 12)
            .unwrap()
            .recon;
        let model = pretrain(model, &train_set, &config, &w).unwrap();
        let after = dataset_loss(&model, &train_set.trajectories, &w, 12)
            .unwrap()
            .recon;
        assert!(
            after < before / 5.0,
            "pretraining barely helped: {before} -> {after}"
        );
    }

    #[test]
    fn pretrain_aux_gradients_are_reg_only() {
        let (train_set, _) = small_sets(SystemKind::Pendulum, 6);
        let model = small_model(SystemKind::Pendulum, 8);
        let mut w = LossWeights::for_system(SystemKind::Pendulum);
        w.alpha3 = 0.25;
        let refs: Vec<&Trajectory> = train_set.trajectories.iter().collect();
        let (_, grads) = pretrain_gradients(&model, &refs, &w).unwrap();
        for (g, net) in grads.aux_pairs.iter().zip(&model.aux_pairs) {
            for (lg, layer) in g.layers.iter().zip(net.layers()) {
                for (d, wv) in lg.d_weight.as_slice().iter().zip(layer.weight.as_slice()) {
                    assert_eq!(*d, 2.0 * w.alpha3 * wv);
                }
                assert!(lg.d_bias.iter().all(|&d| d == 0.0));
            }
        }
    }

    #[test]
    fn mismatched_systems_are_rejected() {
        let (train_set, _) = small_sets(SystemKind::Pendulum, 6);
        let (_, other_val) = small_sets(SystemKind::DiscreteSpectrum, 6);
        let model = small_model(SystemKind::Pendulum, 8);
        let w = LossWeights::for_system(SystemKind::Pendulum);
        let config = TrainConfig {
            batch_size: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(model, &train_set, &other_val, &config, &w),
            Err(Error::Config(_))
        ));
    }
}
