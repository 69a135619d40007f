//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{blended_schedule, one_hot_schedule, CurriculumError, Lambda, Schedule, Stage};
use crate::families::{build_seq_bank, CriticBank, FamilyError};
use crate::nn::{init_mlp, Activation, MlpParams, MlpSpec};
use crate::rng::{self, tags};
use crate::sinusoid::{GridResolution, SineError, SineRanges};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<CurriculumError> for ConfigError {
    fn from(e: CurriculumError) -> Self {
        ConfigError::Invalid(format!("schedule: {e}"))
    }
}

impl From<FamilyError> for ConfigError {
    fn from(e: FamilyError) -> Self {
        ConfigError::Invalid(format!("critics: {e}"))
    }
}

impl From<SineError> for ConfigError {
    fn from(e: SineError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Which side of the comparison a run belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Follow the configured schedule.
    #[default]
    Curriculum,
    /// Train only the full-input critic for the same number of iterations.
    Baseline,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Curriculum => "curriculum",
            Arm::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Number of training waves.
    pub size: usize,
    /// Samples per wave.
    pub length: usize,
    pub amplitude: [f64; 2],
    pub frequency: [f64; 2],
    pub phase: [f64; 2],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let r = SineRanges::default();
        Self {
            size: 10_000,
            length: 64,
            amplitude: r.amplitude,
            frequency: r.frequency,
            phase: r.phase,
        }
    }
}

impl DatasetConfig {
    pub fn ranges(&self) -> SineRanges {
        SineRanges {
            amplitude: self.amplitude,
            frequency: self.frequency,
            phase: self.phase,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticsConfig {
    /// Strictly increasing; the last must equal the wave length.
    pub prefix_lengths: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Default for CriticsConfig {
    fn default() -> Self {
        Self {
            prefix_lengths: (1..=8).map(|i| 8 * i).collect(),
            hidden: vec![128],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub hidden: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { hidden: vec![128] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub lambda: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `e_1, e_2, ..., e_d`, each for `stage_iterations`.
    OneHot { stage_iterations: usize },
    /// One-hot stages joined by `ramp` single-iteration linear blends.
    Blended { stage_iterations: usize, ramp: usize },
    Explicit { stages: Vec<StageSpec> },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::OneHot {
            stage_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Generated waves written to samples.csv and scored.
    pub samples: usize,
    pub grid: GridResolution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            grid: GridResolution::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub arm: Arm,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub critics: CriticsConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let d = &self.dataset;
        if d.size == 0 || d.length == 0 {
            return Err(ConfigError::Invalid("dataset size and length must be >= 1".into()));
        }
        d.ranges().validate()?;
        self.eval.grid.validate()?;
        if self.eval.samples == 0 {
            return Err(ConfigError::Invalid("eval.samples must be >= 1".into()));
        }
        if self.critics.prefix_lengths.last() != Some(&d.length) {
            return Err(ConfigError::Invalid(format!(
                "the last prefix length must equal dataset.length ({}), got {:?}",
                d.length, self.critics.prefix_lengths
            )));
        }
        // builds and checks nesting, widths and schedule shape
        let bank = self.build_bank()?;
        let schedule = self.curriculum_schedule()?;
        if schedule.dim() != bank.len() {
            return Err(ConfigError::Invalid(format!(
                "schedule has {} weights per stage but there are {} critics",
                schedule.dim(),
                bank.len()
            )));
        }
        self.generator_spec()?;
        Ok(())
    }

    /// Replace the init and training seeds; the dataset is unchanged.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seeds.init = seed;
        self.train.seeds.train = seed;
        self
    }

    pub fn with_arm(mut self, arm: Arm) -> Self {
        self.arm = arm;
        self
    }

    pub fn curriculum_schedule(&self) -> Result<Schedule, ConfigError> {
        let d = self.critics.prefix_lengths.len();
        Ok(match &self.schedule {
            ScheduleSpec::OneHot { stage_iterations } => one_hot_schedule(d, *stage_iterations)?,
            ScheduleSpec::Blended {
                stage_iterations,
                ramp,
            } => blended_schedule(d, *stage_iterations, *ramp)?,
            ScheduleSpec::Explicit { stages } => Schedule::new(
                stages
                    .iter()
                    .map(|s| {
                        Ok(Stage {
                            lambda: Lambda::new(s.lambda.clone())?,
                            iterations: s.iterations,
                        })
                    })
                    .collect::<Result<Vec<_>, CurriculumError>>()?,
            )?,
        })
    }

    /// Outer iterations of the run.
    pub fn total_iterations(&self) -> Result<usize, ConfigError> {
        Ok(match self.train.iterations {
            Some(n) => n,
            None => self.curriculum_schedule()?.total_iterations(),
        })
    }

    /// The schedule for this run's arm. The baseline holds the full-input
    /// critic for as many iterations as the curriculum runs.
    pub fn schedule_for_arm(&self) -> Result<Schedule, ConfigError> {
        match self.arm {
            Arm::Curriculum => self.curriculum_schedule(),
            Arm::Baseline => {
                let d = self.critics.prefix_lengths.len();
                let total = self.total_iterations()?.max(1);
                Ok(Schedule::constant(Lambda::one_hot(d, d - 1), total)?)
            }
        }
    }

    pub fn build_bank(&self) -> Result<CriticBank, ConfigError> {
        Ok(build_seq_bank(
            self.dataset.length,
            &self.critics.prefix_lengths,
            &self.critics.hidden,
            self.train.seeds.init,
        )?)
    }

    pub fn generator_spec(&self) -> Result<MlpSpec, ConfigError> {
        MlpSpec::new(
            self.train.z_dim,
            self.generator.hidden.clone(),
            self.dataset.length,
            Activation::Tanh,
        )
        .map_err(|e| ConfigError::Invalid(format!("generator: {e}")))
    }

    pub fn build_generator(&self) -> Result<MlpParams, ConfigError> {
        let seed = rng::derive_seed(self.train.seeds.init, tags::GENERATOR);
        Ok(init_mlp(&self.generator_spec()?, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
        [train]
        batch_size = 16
        n_critic = 2
        z_dim = 4
        [train.seeds]
        data = 1
        init = 2
        train = 3
        [dataset]
        size = 50
        length = 8
        [critics]
        prefix_lengths = [4, 8]
        hidden = [6]
        [generator]
        hidden = [6]
        [schedule]
        recipe = "one_hot"
        stage_iterations = 5
        [eval]
        samples = 10
        grid = { amplitude = 3, frequency = 3, phase = 4 }
    "#;

    #[test]
    fn parse_small() {
        let c = RunConfig::from_toml(SMALL).unwrap();
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.penalty, 10.0);
        assert_eq!(c.total_iterations().unwrap(), 10);
        assert_eq!(c.arm, Arm::Curriculum);
        assert_eq!(c.eval.grid.phase, 4);
    }

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.critics.prefix_lengths, vec![8, 16, 24, 32, 40, 48, 56, 64]);
        assert_eq!(c.total_iterations().unwrap(), 800);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::from_toml(SMALL).unwrap().with_seed(99).with_arm(Arm::Baseline);
        c.output_dir = Some("runs/x".into());
        c.train.optimizer.lr = 1.0 / 3.0;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let explicit = SMALL.replace(
            "recipe = \"one_hot\"\n        stage_iterations = 5",
            "recipe = \"explicit\"\n        stages = [{ lambda = [0.5, 0.5], iterations = 3 }, { lambda = [0.0, 1.0], iterations = 2 }]",
        );
        let c = RunConfig::from_toml(&explicit).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.total_iterations().unwrap(), 5);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml("[train]\nbatch = 3"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[schedule]\nrecipe = \"one_hot\"\nstage_iterations = 5\nramp = 2"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[train]\nn_critic = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_toml("[critics]\nprefix_lengths = [8, 32]"),
            Err(ConfigError::Invalid(_))
        ));
        // explicit stages that step backwards in the order
        let backwards = "[critics]\nprefix_lengths = [32, 64]\n[schedule]\nrecipe = \"explicit\"\nstages = [{ lambda = [0.0, 1.0], iterations = 3 }, { lambda = [1.0, 0.0], iterations = 3 }]";
        assert!(matches!(RunConfig::from_toml(backwards), Err(ConfigError::Invalid(_))));
        let wrong_dim = "[schedule]\nrecipe = \"explicit\"\nstages = [{ lambda = [1.0], iterations = 3 }]";
        assert!(matches!(RunConfig::from_toml(wrong_dim), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn baseline_uses_full_critic_for_whole_budget() {
        let c = RunConfig::from_toml(SMALL).unwrap().with_arm(Arm::Baseline);
        let s = c.schedule_for_arm().unwrap();
        assert_eq!(s.stages().len(), 1);
        assert_eq!(s.total_iterations(), 10);
        assert_eq!(s.stages()[0].lambda, Lambda::one_hot(2, 1));
    }
}
