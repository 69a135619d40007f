//! Alternating critic/generator training over a curriculum of critic
//! weights, with a gradient-penalty Wasserstein objective or the original
//! logistic GAN objective.

mod data;
mod estimate;
mod metrics;

pub use data::{
    interpolate, sample_noise, Batch, DataSource, EmpiricalData, Generator, ReplayGenerator,
};
pub use estimate::estimate_wasserstein;
pub use metrics::{switch_jumps, MetricsRow, RunMetrics, METRICS_HEADER};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{backward, grad_as_graph, AutodiffError, Graph, NodeId, Tensor};
use crate::curriculum::{composite_critic, CurriculumError, Lambda, Schedule};
use crate::families::{CriticBank, FamilyError, SampleShape};
use crate::nn::{AdamConfig, AdamState, MlpParams, NnError};
use crate::rng::{self, tags};

/// Floor applied inside logarithms of the logistic objective.
pub const LOG_CLAMP: f64 = 1e-12;
/// Guard under the square root of interpolate gradient norms.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {phase} loss ({value}) at iteration {iteration}")]
    NonFinite {
        phase: &'static str,
        iteration: usize,
        value: f64,
    },
    #[error("generator output shape {got:?} does not match data shape {expected:?}")]
    SampleShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("output: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::NonFinite { .. })
    }

    fn at_iteration(self, iter: usize) -> Self {
        match self {
            TrainError::NonFinite { phase, value, .. } => TrainError::NonFinite {
                phase,
                iteration: iter,
                value,
            },
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyStyle {
    /// `max(0, |grad| - 1)^2`
    OneSided,
    /// `(|grad| - 1)^2`
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    WassersteinGp,
    VanillaGan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_critic: usize,
    /// Gradient-penalty coefficient.
    pub penalty: f64,
    pub penalty_style: PenaltyStyle,
    pub loss: LossMode,
    pub z_dim: usize,
    /// Outer iterations; defaults to the schedule length.
    pub iterations: Option<usize>,
    pub optimizer: AdamConfig,
    /// Record per-iteration wall-clock time in the metrics. Off by default
    /// so that metrics files are reproducible byte for byte.
    pub log_wall_clock: bool,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            n_critic: 5,
            penalty: 10.0,
            penalty_style: PenaltyStyle::OneSided,
            loss: LossMode::WassersteinGp,
            z_dim: 32,
            iterations: None,
            optimizer: AdamConfig::default(),
            log_wall_clock: false,
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if self.n_critic == 0 {
            return fail("n_critic must be >= 1");
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return fail("penalty must be finite and >= 0");
        }
        if self.z_dim == 0 {
            return fail("z_dim must be >= 1");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return fail("optimizer.lr must be positive");
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return fail("optimizer betas must lie in [0, 1)");
        }
        if !(o.eps > 0.0) {
            return fail("optimizer.eps must be positive");
        }
        Ok(())
    }
}

/// Values from one critic update, measured before the parameters move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStepReport {
    /// `mean f(x) - mean f(g(z))` for the Wasserstein loss, or the logistic
    /// log-likelihood `mean log D(x) + mean log(1 - D(g(z)))`.
    pub objective: f64,
    /// Mean penalty term (before multiplying by the coefficient).
    pub penalty: f64,
    /// The minimised loss.
    pub loss: f64,
}

/// One Adam state per critic in the bank.
pub fn critic_optimizers(bank: &CriticBank, config: AdamConfig) -> Vec<AdamState> {
    bank.entries()
        .iter()
        .map(|e| AdamState::new(config, &e.params))
        .collect()
}

fn shaped_like(t: Tensor, shape: &[usize]) -> Result<Tensor, TrainError> {
    if t.shape() == shape {
        return Ok(t);
    }
    if t.len() == shape.iter().product::<usize>() {
        return Ok(t.reshaped(shape.to_vec())?);
    }
    Err(TrainError::SampleShape {
        expected: shape.to_vec(),
        got: t.shape().to_vec(),
    })
}

fn finite(phase: &'static str, value: f64) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite {
            phase,
            iteration: 0,
            value,
        })
    }
}

/// `log(max(p, LOG_CLAMP))`
fn clamped_log(g: &mut Graph, p: NodeId) -> Result<NodeId, AutodiffError> {
    let c = g.max_const(p, LOG_CLAMP)?;
    g.log(c)
}

/// Mean penalty on the input-gradient norm of the composite critic at the
/// interpolates `x_hat` (a leaf).
pub fn gradient_penalty(
    g: &mut Graph,
    bank: &CriticBank,
    bound: &crate::families::BoundBank,
    lambda: &Lambda,
    x_hat: NodeId,
    style: PenaltyStyle,
) -> Result<NodeId, TrainError> {
    let out = composite_critic(g, bank, bound, lambda, x_hat)?;
    let total = g.sum(out)?;
    let grad = grad_as_graph(g, total, x_hat)?;
    let m = g.shape(grad)[0];
    let width = g.value(grad).len() / m;
    let flat = if g.shape(grad).len() == 2 {
        grad
    } else {
        g.reshape(grad, &[m, width])?
    };
    let norm = g.row_l2_norm(flat, NORM_EPS)?;
    let excess = g.affine(norm, 1.0, -1.0)?;
    let hinge = match style {
        PenaltyStyle::OneSided => g.max_const(excess, 0.0)?,
        PenaltyStyle::TwoSided => excess,
    };
    let sq = g.square(hinge)?;
    Ok(g.mean(sq)?)
}

/// One critic update on every critic with nonzero weight.
pub fn critic_step(
    bank: &mut CriticBank,
    optimizers: &mut [AdamState],
    lambda: &Lambda,
    generator: &dyn Generator,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<CriticStepReport, TrainError> {
    let fake = shaped_like(generator.generate(&batch.noise)?, batch.real.shape())?;
    let mut g = Graph::new();
    let active: Vec<usize> = lambda.active().map(|(i, _)| i).collect();
    let bound = bank.bind(&mut g, active.iter().copied(), true)?;
    let xr = g.constant(batch.real.clone());
    let xf = g.constant(fake.clone());
    let fr = composite_critic(&mut g, bank, &bound, lambda, xr)?;
    let ff = composite_critic(&mut g, bank, &bound, lambda, xf)?;

    let (objective, penalty, loss) = match config.loss {
        LossMode::WassersteinGp => {
            let mr = g.mean(fr)?;
            let mf = g.mean(ff)?;
            let objective = g.sub(mr, mf)?;
            let hat = interpolate(&batch.real, &fake, &batch.interpolation);
            let xh = g.constant(hat);
            let penalty = gradient_penalty(&mut g, bank, &bound, lambda, xh, config.penalty_style)?;
            let neg = g.neg(objective)?;
            let loss = if config.penalty != 0.0 {
                let weighted = g.scale(penalty, config.penalty)?;
                g.add(neg, weighted)?
            } else {
                neg
            };
            (objective, Some(penalty), loss)
        }
        LossMode::VanillaGan => {
            let dr = g.sigmoid(fr)?;
            let df = g.sigmoid(ff)?;
            let log_dr = clamped_log(&mut g, dr)?;
            let not_df = g.affine(df, -1.0, 1.0)?;
            let log_not_df = clamped_log(&mut g, not_df)?;
            let a = g.mean(log_dr)?;
            let b = g.mean(log_not_df)?;
            let objective = g.add(a, b)?;
            let loss = g.neg(objective)?;
            (objective, None, loss)
        }
    };

    let loss_value = finite("critic", g.value(loss).item())?;
    let grads = backward(&g, loss)?;
    for &i in &active {
        let net = bound.get(i).expect("active critic is bound");
        let gi = net.collect_grads(&grads)?;
        optimizers[i].step(&mut bank.critic_mut(i)?.params, &gi)?;
    }
    Ok(CriticStepReport {
        objective: g.value(objective).item(),
        penalty: penalty.map_or(0.0, |p| g.value(p).item()),
        loss: loss_value,
    })
}

/// Reshape a flat generator output to the bank's sample layout.
fn as_sample(g: &mut Graph, x: NodeId, input: SampleShape) -> Result<NodeId, TrainError> {
    match input {
        SampleShape::Sequence { .. } => Ok(x),
        SampleShape::Image { size, channels } => {
            let m = g.shape(x)[0];
            Ok(g.reshape(x, &[m, size, size, channels])?)
        }
    }
}

/// One generator update against the frozen composite critic. Returns the
/// generator loss before the update.
pub fn generator_step(
    bank: &CriticBank,
    lambda: &Lambda,
    generator: &mut MlpParams,
    optimizer: &mut AdamState,
    noise: &Tensor,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let gen = generator.bind(&mut g, true);
    let critics = bank.bind(&mut g, lambda.active().map(|(i, _)| i), false)?;
    let z = g.constant(noise.clone());
    let out = gen.forward(&mut g, z)?;
    let fake = as_sample(&mut g, out, bank.input())?;
    let f = composite_critic(&mut g, bank, &critics, lambda, fake)?;
    let loss = match config.loss {
        LossMode::WassersteinGp => {
            let m = g.mean(f)?;
            g.neg(m)?
        }
        LossMode::VanillaGan => {
            let d = g.sigmoid(f)?;
            let l = clamped_log(&mut g, d)?;
            let m = g.mean(l)?;
            g.neg(m)?
        }
    };
    let value = finite("generator", g.value(loss).item())?;
    let grads = backward(&g, loss)?;
    let gg = gen.collect_grads(&grads)?;
    optimizer.step(generator, &gg)?;
    Ok(value)
}

/// Hooks for streaming results out of [`train`].
pub trait TrainObserver {
    fn on_iteration(&mut self, _row: &MetricsRow) -> Result<(), TrainError> {
        Ok(())
    }

    /// Called when `stage` has completed, before the next stage begins.
    fn on_stage_end(
        &mut self,
        _stage: usize,
        _generator: &MlpParams,
        _bank: &CriticBank,
    ) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub generator: MlpParams,
    pub bank: CriticBank,
    pub metrics: RunMetrics,
}

/// Seed for the fresh critic introduced at `stage`.
pub fn reinit_seed(init: u64, stage: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(init, tags::REINIT), stage as u64)
}

/// Run the curriculum: `n_critic` critic updates then one generator update
/// per outer iteration, advancing through `schedule`.
///
/// Under a one-hot schedule, entering a new stage re-initialises the newly
/// active critic and resets its optimiser. On a numerical failure the rows
/// produced so far have already been passed to `observer`.
pub fn train(
    config: &TrainConfig,
    schedule: &Schedule,
    mut bank: CriticBank,
    mut generator: MlpParams,
    data: &dyn DataSource,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if schedule.dim() != bank.len() {
        return Err(CurriculumError::DimensionMismatch {
            left: bank.len(),
            right: schedule.dim(),
        }
        .into());
    }
    if generator.z_dim() != config.z_dim {
        return Err(TrainError::Config(format!(
            "generator input {} does not match z_dim {}",
            generator.z_dim(),
            config.z_dim
        )));
    }

    let total = config.iterations.unwrap_or_else(|| schedule.total_iterations());
    let reinit = schedule.is_one_hot();
    let mut rng = rng::seeded(rng::derive_seed(config.seeds.train, tags::TRAIN));
    let mut critic_opts = critic_optimizers(&bank, config.optimizer);
    let mut gen_opt = AdamState::new(config.optimizer, &generator);
    let mut metrics = Vec::with_capacity(total);
    let mut current: Option<usize> = None;

    for iter in 0..total {
        let (stage, lambda) = schedule.position(iter);
        if current != Some(stage) {
            if let Some(prev) = current {
                observer.on_stage_end(prev, &generator, &bank)?;
                if reinit {
                    let i = lambda.one_hot_index().expect("one-hot schedule");
                    bank.reinit_stage(i, reinit_seed(config.seeds.init, stage))?;
                    critic_opts[i] = AdamState::new(config.optimizer, &bank.critic(i)?.params);
                }
            }
            current = Some(stage);
        }

        let start = Instant::now();
        let mut objective = 0.0;
        let mut penalty = 0.0;
        for _ in 0..config.n_critic {
            let batch = Batch::sample(data, config.z_dim, config.batch_size, &mut rng);
            let report = critic_step(&mut bank, &mut critic_opts, lambda, &generator, &batch, config)
                .map_err(|e| e.at_iteration(iter))?;
            objective += report.objective;
            penalty += report.penalty;
        }
        let noise = sample_noise(&mut rng, config.batch_size, config.z_dim);
        let gen_loss = generator_step(&bank, lambda, &mut generator, &mut gen_opt, &noise, config)
            .map_err(|e| e.at_iteration(iter))?;

        let n = config.n_critic as f64;
        let row = MetricsRow {
            iter,
            stage,
            lambda: lambda.clone(),
            critic_objective: objective / n,
            gen_loss,
            penalty: penalty / n,
            ms: if config.log_wall_clock {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        observer.on_iteration(&row)?;
        metrics.push(row);
    }

    Ok(TrainOutcome {
        generator,
        bank,
        metrics,
    })
}
