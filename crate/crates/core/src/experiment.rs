//! Sine-wave runs end to end: data, training, sampling, scoring, and the
//! files a run leaves behind.
//!
//! A run directory holds
//!
//! | file | contents |
//! |---|---|
//! | `config.toml` | the resolved config; rerunning it reproduces the run |
//! | `metrics.csv` | one row per outer iteration |
//! | `samples.csv` | generated waves |
//! | `eval.txt`, `eval.csv` | nearest-sine report |
//! | `checkpoints/stage<k>.ckpt`, `checkpoints/final.ckpt` | networks |
//! | `timing.txt` | wall-clock time (the only nondeterministic file) |
//!
//! Every file is written under a temporary name and renamed into place.
//! While training, metrics stream to `metrics.csv.partial`; if training
//! aborts that file is left behind with the rows completed so far.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::config::{Arm, ConfigError, RunConfig};
use crate::families::CriticBank;
use crate::nn::MlpParams;
use crate::rng::{self, tags};
use crate::samples::write_samples;
use crate::sinusoid::{make_dataset, nearest_sine_error, EvalReport, SineError};
use crate::trainer::{
    sample_noise, train, EmpiricalData, MetricsRow, NoopObserver, RunMetrics, TrainError, TrainObserver,
    METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] SineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// 2 for numerical aborts, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Train(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// `[n, length]` waves from the generator, with noise seeded by `seed`.
pub fn generate_samples(generator: &MlpParams, n: usize, seed: u64) -> Result<Tensor, TrainError> {
    let mut rng = rng::seeded(rng::derive_seed(seed, tags::SAMPLES));
    let z = sample_noise(&mut rng, n, generator.spec.input_dim);
    Ok(generator.forward(&z)?)
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub arm: Arm,
    pub metrics: RunMetrics,
    pub samples: Tensor,
    pub report: EvalReport,
    pub generator: MlpParams,
    pub bank: CriticBank,
    pub wall_ms: u128,
}

/// Train and score one arm as configured.
pub fn run_arm(config: &RunConfig, observer: &mut dyn TrainObserver) -> Result<ArmResult, RunError> {
    config.validate()?;
    let start = Instant::now();
    let ranges = config.dataset.ranges();
    let dataset = make_dataset(
        config.dataset.size,
        config.dataset.length,
        ranges,
        config.train.seeds.data,
    )?;
    let data = EmpiricalData::new(dataset.waves);
    let schedule = config.schedule_for_arm()?;
    let mut train_config = config.train.clone();
    train_config.iterations = Some(config.total_iterations()?);
    let outcome = train(
        &train_config,
        &schedule,
        config.build_bank()?,
        config.build_generator()?,
        &data,
        observer,
    )?;
    let samples = generate_samples(&outcome.generator, config.eval.samples, config.train.seeds.train)?;
    let report = nearest_sine_error(&samples, &ranges, config.eval.grid)?;
    Ok(ArmResult {
        arm: config.arm,
        metrics: outcome.metrics,
        samples,
        report,
        generator: outcome.generator,
        bank: outcome.bank,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Streams metrics rows and writes a checkpoint at each stage boundary.
struct DirRecorder {
    dir: PathBuf,
    partial: PathBuf,
    metrics: BufWriter<File>,
    done: usize,
}

impl DirRecorder {
    fn new(dir: &Path) -> Result<Self, RunError> {
        let partial = dir.join("metrics.csv.partial");
        let file = File::create(&partial).map_err(io_err(&partial))?;
        let mut metrics = BufWriter::new(file);
        writeln!(metrics, "{METRICS_HEADER}").map_err(io_err(&partial))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            partial,
            metrics,
            done: 0,
        })
    }

    fn finish(mut self) -> Result<(), RunError> {
        self.metrics.flush().map_err(io_err(&self.partial))?;
        let target = self.dir.join("metrics.csv");
        std::fs::rename(&self.partial, &target).map_err(io_err(&target))
    }
}

fn to_train_err(e: RunError) -> TrainError {
    TrainError::Io(e.to_string())
}

impl TrainObserver for DirRecorder {
    fn on_iteration(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        writeln!(self.metrics, "{}", row.to_csv())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| TrainError::Io(format!("{}: {e}", self.partial.display())))?;
        self.done = row.iter + 1;
        Ok(())
    }

    fn on_stage_end(&mut self, stage: usize, generator: &MlpParams, bank: &CriticBank) -> Result<(), TrainError> {
        let ck = Checkpoint::from_run(self.done, generator, bank);
        let path = self.dir.join("checkpoints").join(format!("stage{stage}.ckpt"));
        write_atomic(&path, ck.to_text().as_bytes()).map_err(to_train_err)
    }
}

/// [`run_arm`], writing every artifact into `dir`.
pub fn run_to_dir(config: &RunConfig, dir: &Path) -> Result<ArmResult, RunError> {
    config.validate()?;
    create_dir(&dir.join("checkpoints"))?;
    write_atomic(&dir.join("config.toml"), config.to_toml().as_bytes())?;
    let mut recorder = DirRecorder::new(dir)?;
    let result = run_arm(config, &mut recorder);
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = recorder.metrics.flush();
            return Err(e);
        }
    };
    recorder.finish()?;
    write_atomic(&dir.join("samples.csv"), write_samples(&result.samples).as_bytes())?;
    write_atomic(&dir.join("eval.txt"), result.report.to_text().as_bytes())?;
    write_atomic(
        &dir.join("eval.csv"),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, result.report.to_csv()).as_bytes(),
    )?;
    let final_ck = Checkpoint::from_run(result.metrics.len(), &result.generator, &result.bank);
    write_atomic(&dir.join("checkpoints").join("final.ckpt"), final_ck.to_text().as_bytes())?;
    write_atomic(&dir.join("timing.txt"), format!("wall_ms = {}\n", result.wall_ms).as_bytes())?;
    Ok(result)
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub curriculum: ArmResult,
    pub baseline: ArmResult,
}

impl Comparison {
    pub fn improvement(&self) -> f64 {
        improvement(self.baseline.report.mean, self.curriculum.report.mean)
    }
}

/// `(baseline - curriculum) / baseline`
pub fn improvement(baseline: f64, curriculum: f64) -> f64 {
    (baseline - curriculum) / baseline
}

/// Both arms with the same seeds, data, architectures and budget. With
/// `dir`, artifacts go to `dir/curriculum` and `dir/baseline`.
pub fn run_comparison(config: &RunConfig, dir: Option<&Path>) -> Result<Comparison, RunError> {
    let run = |arm: Arm| {
        let c = config.clone().with_arm(arm);
        match dir {
            Some(d) => run_to_dir(&c, &d.join(arm.name())),
            None => run_arm(&c, &mut NoopObserver),
        }
    };
    Ok(Comparison {
        curriculum: run(Arm::Curriculum)?,
        baseline: run(Arm::Baseline)?,
    })
}

pub const SUMMARY_HEADER: &str =
    "seed,curriculum_mean,curriculum_std_err,baseline_mean,baseline_std_err,improvement,curriculum_ms,baseline_ms";

/// One row per seed, then an `all` row with per-arm means over seeds and
/// the improvement of those means.
pub fn summary_csv(runs: &[(u64, Comparison)]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (seed, c) in runs {
        out.push_str(&format!(
            "{seed},{},{},{},{},{},{},{}\n",
            c.curriculum.report.mean,
            c.curriculum.report.std_err,
            c.baseline.report.mean,
            c.baseline.report.std_err,
            c.improvement(),
            c.curriculum.wall_ms,
            c.baseline.wall_ms
        ));
    }
    if !runs.is_empty() {
        let n = runs.len() as f64;
        let mean = |f: &dyn Fn(&Comparison) -> f64| runs.iter().map(|(_, c)| f(c)).sum::<f64>() / n;
        let cm = mean(&|c| c.curriculum.report.mean);
        let bm = mean(&|c| c.baseline.report.mean);
        let cs = mean(&|c| c.curriculum.report.std_err);
        let bs = mean(&|c| c.baseline.report.std_err);
        let ct: u128 = runs.iter().map(|(_, c)| c.curriculum.wall_ms).sum();
        let bt: u128 = runs.iter().map(|(_, c)| c.baseline.wall_ms).sum();
        out.push_str(&format!("all,{cm},{cs},{bm},{bs},{},{ct},{bt}\n", improvement(bm, cm)));
    }
    out
}
