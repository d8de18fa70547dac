//! The composite training objective, its exact gradients, and the training
//! protocol: autoencoder pretraining, Adam over whole-trajectory batches,
//! validation-based early stopping, and random hyperparameter search.
//!
//! The objective combines four ingredients evaluated per batch of
//! trajectories `x_1..x_T`:
//!
//! - reconstruction of the first snapshot through the autoencoder,
//! - state prediction over the first `pred_steps` steps through the
//!   propagator and decoder,
//! - linearity of the latent dynamics over all `T - 1` steps,
//! - a worst-entry penalty on the reconstruction and one-step-prediction
//!   residuals,
//!
//! plus squared-weight regularization. Mean-squared terms average over the
//! vector dimension first and the batch second. The propagator power is
//! the stepwise composition `K(lambda_1) K(lambda_2) ... K(lambda_m)` with
//! eigenvalues re-evaluated along the rollout.

mod loss;
mod optim;
mod search;

pub use loss::{compute_gradients, compute_loss, relu_clearance};
pub use optim::{dataset_loss, pretrain, train};
pub use search::{random_search, CandidateReport, SearchSpace};

use alloc::vec::Vec;

use crate::koopman::{EigSource, KoopmanModel};
use crate::nnet::MlpGrads;

/// Term weights and the prediction horizon of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of reconstruction + prediction.
    pub alpha1: f64,
    /// Weight of the worst-entry penalty.
    pub alpha2: f64,
    /// Weight of squared-weight regularization.
    pub alpha3: f64,
    /// Number of steps checked by the prediction term.
    pub pred_steps: usize,
    /// Where per-step eigenvalues are evaluated inside the linearity and
    /// prediction rollout.
    pub eig_source: EigSource,
}

impl LossWeights {
    /// Published defaults per benchmark system.
    pub fn for_system(kind: crate::dynamics::SystemKind) -> Self {
        use crate::dynamics::SystemKind::*;
        let (alpha1, alpha2, alpha3) = match kind {
            DiscreteSpectrum => (0.1, 1e-7, 1e-15),
            Pendulum => (0.001, 1e-9, 1e-14),
            FluidFlowOnAttractor => (0.1, 1e-7, 1e-13),
            FluidFlowOffAttractor => (0.1, 1e-9, 1e-13),
        };
        LossWeights {
            alpha1,
            alpha2,
            alpha3,
            pred_steps: 30,
            eig_source: EigSource::Predicted,
        }
    }
}

/// The objective split into its terms.
///
/// `total = alpha1 * (recon + pred) + lin + alpha2 * inf + alpha3 * reg`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub pred: f64,
    pub lin: f64,
    pub inf: f64,
    pub reg: f64,
}

/// Gradients for every network of a [`KoopmanModel`].
#[derive(Debug, Clone)]
pub struct KoopmanGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub aux_pairs: Vec<MlpGrads>,
    pub aux_reals: Vec<MlpGrads>,
}

impl KoopmanGrads {
    pub fn zeros_like(model: &KoopmanModel) -> Self {
        KoopmanGrads {
            encoder: MlpGrads::zeros_like(&model.encoder),
            decoder: MlpGrads::zeros_like(&model.decoder),
            aux_pairs: model.aux_pairs.iter().map(MlpGrads::zeros_like).collect(),
            aux_reals: model.aux_reals.iter().map(MlpGrads::zeros_like).collect(),
        }
    }

    /// Flattens in the same order as [`KoopmanModel::collect_params`].
    pub fn collect_into(&self, out: &mut Vec<f64>) {
        self.encoder.collect_into(out);
        self.decoder.collect_into(out);
        for g in &self.aux_pairs {
            g.collect_into(out);
        }
        for g in &self.aux_reals {
            g.collect_into(out);
        }
    }
}

/// Knobs of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Trajectories per batch.
    pub batch_size: usize,
    /// Adam steps of full training.
    pub max_steps: u64,
    /// Adam steps of autoencoder pretraining.
    pub pretrain_steps: u64,
    /// Validation cadence in steps.
    pub validation_interval: u64,
    pub seed: u64,
    /// How many times a divergence may be absorbed by restoring the best
    /// checkpoint before training fails.
    pub divergence_retries: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 128,
            max_steps: 5000,
            pretrain_steps: 1000,
            validation_interval: 250,
            seed: 0,
            divergence_retries: 2,
        }
    }
}

/// What the training loop observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch loss after every Adam step.
    pub train_trace: Vec<f64>,
    /// `(step, total validation loss)` at every evaluation point.
    pub val_trace: Vec<(u64, f64)>,
    /// Step whose checkpoint was returned.
    pub best_step: u64,
    pub final_train: LossBreakdown,
    pub final_val: LossBreakdown,
    /// Filled by callers that hold a test split.
    pub final_test: Option<LossBreakdown>,
    pub steps_run: u64,
}
