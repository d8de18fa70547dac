//! Random hyperparameter search over architecture and loss weights.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dynamics::Dataset;
use crate::error::Error;
use crate::koopman::{KoopmanModel, ModelDims, SpectrumConfig};
use crate::rng::{derive_seed, SeedStream};

use super::{pretrain, train, LossWeights, TrainConfig};

/// Lists of values each candidate draws from, one independent uniform
/// choice per list.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub hidden_depths: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub aux_depths: Vec<usize>,
    pub aux_widths: Vec<usize>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub alpha3: Vec<f64>,
}

impl SearchSpace {
    fn validate(&self) -> Result<(), Error> {
        let lists = [
            self.hidden_depths.len(),
            self.hidden_widths.len(),
            self.aux_depths.len(),
            self.aux_widths.len(),
            self.alpha1.len(),
            self.alpha2.len(),
            self.alpha3.len(),
        ];
        if lists.iter().any(|&l| l == 0) {
            return Err(Error::Config(String::from("empty search-space dimension")));
        }
        Ok(())
    }
}

/// What happened to one search candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub index: usize,
    pub seed: u64,
    pub dims: ModelDims,
    pub weights: LossWeights,
    /// Best validation loss, when training succeeded.
    pub val_loss: Option<f64>,
    pub best_step: u64,
    pub error: Option<String>,
}

fn pick<T: Copy>(rng: &mut SeedStream, list: &[T]) -> T {
    list[rng.below(list.len())]
}

/// Trains `budget` candidates sampled from `space` and returns the model
/// with the lowest validation loss plus a log of every candidate.
///
/// Individual candidate failures are recorded, not fatal; only when every
/// candidate fails does the search fail.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    config: &TrainConfig,
    base_weights: &LossWeights,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(KoopmanModel, Vec<CandidateReport>), Error> {
    if budget == 0 {
        return Err(Error::Config(String::from("search budget must be >= 1")));
    }
    space.validate()?;
    let spectrum = SpectrumConfig::for_system(train_set.system.kind);
    let state_dim = train_set.system.state_dim;
    let dt = train_set.system.dt;

    let mut rng = SeedStream::new(derive_seed(config.seed, 7777));
    let mut reports = Vec::with_capacity(budget);
    let mut winner: Option<(f64, KoopmanModel)> = None;

    for index in 0..budget {
        let depth = pick(&mut rng, &space.hidden_depths);
        let width = pick(&mut rng, &space.hidden_widths);
        let aux_depth = pick(&mut rng, &space.aux_depths);
        let aux_width = pick(&mut rng, &space.aux_widths);
        let mut weights = *base_weights;
        weights.alpha1 = pick(&mut rng, &space.alpha1);
        weights.alpha2 = pick(&mut rng, &space.alpha2);
        weights.alpha3 = pick(&mut rng, &space.alpha3);

        let hidden: Vec<usize> = core::iter::repeat(width).take(depth).collect();
        let aux_hidden: Vec<usize> = core::iter::repeat(aux_width).take(aux_depth).collect();
        let dims = ModelDims::symmetric(state_dim, &hidden, &aux_hidden, spectrum);
        let seed = derive_seed(config.seed, 9000 + index as u64);
        let candidate_config = TrainConfig {
            seed,
            ..config.clone()
        };

        let outcome = KoopmanModel::init(&dims, spectrum, dt, seed)
            .and_then(|model| pretrain(model, train_set, &candidate_config, &weights))
            .and_then(|model| train(model, train_set, val_set, &candidate_config, &weights));
        match outcome {
            Ok((model, report)) => {
                let val = report.final_val.total;
                reports.push(CandidateReport {
                    index,
                    seed,
                    dims,
                    weights,
                    val_loss: Some(val),
                    best_step: report.best_step,
                    error: None,
                });
                if winner.as_ref().map_or(true, |(best, _)| val < *best) {
                    winner = Some((val, model));
                }
            }
            Err(e) => {
                reports.push(CandidateReport {
                    index,
                    seed,
                    dims,
                    weights,
                    val_loss: None,
                    best_step: 0,
                    error: Some(format!("{e}")),
                });
            }
        }
    }

    match winner {
        Some((_, model)) => Ok((model, reports)),
        None => Err(Error::Config(String::from("all search candidates failed"))),
    }
}
