use crate::curriculum::Lambda;
use crate::families::CriticBank;
use crate::rng::{self, tags};

use super::{critic_optimizers, critic_step, Batch, DataSource, Generator, TrainConfig, TrainError};

/// Estimate the Wasserstein distance between `data` and a frozen
/// `generator` under the composite critic with weights `lambda`.
///
/// The active critics are freshly initialised from `seed`, trained for
/// `train_iters` critic updates, and the unpenalised objective is averaged
/// over the last tenth of those updates (at least one).
pub fn estimate_wasserstein(
    bank: &CriticBank,
    lambda: &Lambda,
    generator: &dyn Generator,
    data: &dyn DataSource,
    config: &TrainConfig,
    train_iters: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    config.validate()?;
    if train_iters == 0 {
        return Err(TrainError::Config("train_iters must be >= 1".into()));
    }
    let mut bank = bank.clone();
    let init = rng::derive_seed(seed, tags::ESTIMATE);
    for (i, _) in lambda.active() {
        bank.reinit_stage(i, rng::derive_seed(init, i as u64))?;
    }
    let mut opts = critic_optimizers(&bank, config.optimizer);
    let mut rng = rng::seeded(rng::derive_seed(seed, tags::TRAIN));
    let tail = train_iters.div_ceil(10).max(1);
    let mut total = 0.0;
    for step in 0..train_iters {
        let batch = Batch::sample(data, generator.z_dim(), config.batch_size, &mut rng);
        let report = critic_step(&mut bank, &mut opts, lambda, generator, &batch, config)
            .map_err(|e| e.at_iteration(step))?;
        if step >= train_iters - tail {
            total += report.objective;
        }
    }
    Ok(total / tail as f64)
}
