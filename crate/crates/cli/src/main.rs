use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wganc::config::{Arm, ConfigError, RunConfig};
use wganc::experiment::{create_dir, run_comparison, run_to_dir, summary_csv, write_atomic, Comparison, RunError};
use wganc::samples::parse_samples;
use wganc::sinusoid::{nearest_sine_error, EvalReport};

#[derive(Parser)]
#[command(name = "wganc", version, about = "Curriculum Wasserstein GAN on sine waves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one arm and write its artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the init and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Train only the full-length critic for the same budget.
        #[arg(long)]
        baseline: bool,
    },
    /// Score a samples file against the configured sine family.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to write eval.csv; defaults to the samples file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both arms for each seed and summarise.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Run seeds on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

fn out_dir(out: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, RunError> {
    out.or_else(|| config.output_dir.clone()).ok_or_else(|| {
        RunError::Config(ConfigError::Invalid(
            "no output directory: pass --out or set output_dir".into(),
        ))
    })
}

fn cmd_train(config: &Path, out: Option<PathBuf>, seed: Option<u64>, baseline: bool) -> Result<(), RunError> {
    let mut c = RunConfig::load(config)?;
    let dir = out_dir(out, &c)?;
    if let Some(s) = seed {
        c = c.with_seed(s);
    }
    if baseline {
        c = c.with_arm(Arm::Baseline);
    }
    let result = run_to_dir(&c, &dir)?;
    println!("{} run: {} iterations", c.arm.name(), result.metrics.len());
    print_report(&result.report);
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("nearest-sine error {} ± {} (n = {}, grid {})", r.mean, r.std_err, r.n, r.grid);
}

fn cmd_eval(samples: &Path, config: &Path, out: Option<PathBuf>) -> Result<(), RunError> {
    let c = RunConfig::load(config)?;
    let bytes = std::fs::read(samples).map_err(|source| RunError::Io {
        path: samples.to_path_buf(),
        source,
    })?;
    let data = parse_samples(&bytes).map_err(|e| {
        RunError::Config(ConfigError::Invalid(format!("{}: {e}", samples.display())))
    })?;
    let width = data.shape()[1];
    if width != c.dataset.length {
        return Err(RunError::Config(ConfigError::Invalid(format!(
            "{}: waves have length {width}, config expects {}",
            samples.display(),
            c.dataset.length
        ))));
    }
    let report = nearest_sine_error(&data, &c.dataset.ranges(), c.eval.grid)?;
    print!("{}", report.to_text());
    print_report(&report);
    let dir = out.unwrap_or_else(|| samples.parent().map(Path::to_path_buf).unwrap_or_default());
    create_dir(&dir)?;
    write_atomic(
        &dir.join("eval.csv"),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, report.to_csv()).as_bytes(),
    )?;
    Ok(())
}

fn cmd_compare(config: &Path, out: Option<PathBuf>, seeds: &[u64], parallel: bool) -> Result<(), RunError> {
    let c = RunConfig::load(config)?;
    let dir = out_dir(out, &c)?;
    create_dir(&dir)?;
    let one = |seed: u64| -> Result<Comparison, RunError> {
        run_comparison(&c.clone().with_seed(seed), Some(&dir.join(format!("seed{seed}"))))
    };
    let results: Vec<Result<Comparison, RunError>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || one(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect()
        })
    } else {
        seeds.iter().map(|&seed| one(seed)).collect()
    };
    let mut runs = Vec::with_capacity(seeds.len());
    for (&seed, r) in seeds.iter().zip(results) {
        let r = r?;
        println!(
            "seed {seed}: curriculum {:.4} baseline {:.4} improvement {:.1}%",
            r.curriculum.report.mean,
            r.baseline.report.mean,
            100.0 * r.improvement()
        );
        runs.push((seed, r));
    }
    let summary = summary_csv(&runs);
    write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;
    if let Some(all) = summary.lines().last() {
        println!("summary: {all}");
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage errors exit 1; 2 is reserved for numerical aborts
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seed,
            baseline,
        } => cmd_train(&config, out, seed, baseline),
        Command::Eval { samples, config, out } => cmd_eval(&samples, &config, out),
        Command::Compare {
            config,
            out,
            seeds,
            parallel,
        } => cmd_compare(&config, out, &seeds, parallel),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
