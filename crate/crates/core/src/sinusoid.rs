//! Sine-wave data and the nearest-sine distance metric.
//!
//! Every training wave is `x_t = A sin(w t + b)` for `t = 0..T`. A generated
//! wave is scored by its smallest Euclidean distance to any wave on a
//! discretised `(A, w, b)` grid.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SineError {
    #[error("invalid {axis} range [{lo}, {hi}]")]
    Range { axis: &'static str, lo: f64, hi: f64 },
    #[error("grid resolution must be >= 2 on every axis, got {0:?}")]
    Grid([usize; 3]),
    #[error("no samples to evaluate")]
    Empty,
    #[error("samples have length {got}, expected {expected}")]
    Width { expected: usize, got: usize },
    #[error("wave length must be >= 1")]
    Length,
}

/// Bounds of the generating parameters. Amplitude and frequency are closed
/// intervals, phase is `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineRanges {
    pub amplitude: [f64; 2],
    /// Radians per step.
    pub frequency: [f64; 2],
    pub phase: [f64; 2],
}

impl Default for SineRanges {
    fn default() -> Self {
        Self {
            amplitude: [0.5, 1.5],
            frequency: [PI / 16.0, PI / 4.0],
            phase: [0.0, 2.0 * PI],
        }
    }
}

impl SineRanges {
    pub fn validate(&self) -> Result<(), SineError> {
        for (axis, [lo, hi]) in [
            ("amplitude", self.amplitude),
            ("frequency", self.frequency),
            ("phase", self.phase),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SineError::Range { axis, lo, hi });
            }
        }
        if self.amplitude[0] < 0.0 {
            let [lo, hi] = self.amplitude;
            return Err(SineError::Range {
                axis: "amplitude",
                lo,
                hi,
            });
        }
        Ok(())
    }

    /// Largest `|x_t|` any wave can reach.
    pub fn max_abs(&self) -> f64 {
        self.amplitude[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl SineParams {
    pub fn value(&self, t: usize) -> f64 {
        self.amplitude * (self.frequency * t as f64 + self.phase).sin()
    }

    pub fn wave(&self, len: usize) -> Vec<f64> {
        (0..len).map(|t| self.value(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SineDataset {
    /// `[n, len]`
    pub waves: Tensor,
    pub params: Vec<SineParams>,
    pub ranges: SineRanges,
    pub seed: u64,
}

fn uniform(rng: &mut rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `n` waves of length `len` with parameters drawn uniformly from `ranges`.
pub fn make_dataset(n: usize, len: usize, ranges: SineRanges, seed: u64) -> Result<SineDataset, SineError> {
    ranges.validate()?;
    if len == 0 {
        return Err(SineError::Length);
    }
    if n == 0 {
        return Err(SineError::Empty);
    }
    let mut rng = rng::seeded(seed);
    let mut params = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * len);
    for _ in 0..n {
        let p = SineParams {
            amplitude: uniform(&mut rng, ranges.amplitude),
            frequency: uniform(&mut rng, ranges.frequency),
            phase: uniform(&mut rng, ranges.phase),
        };
        data.extend(p.wave(len));
        params.push(p);
    }
    Ok(SineDataset {
        waves: Tensor::from_parts(vec![n, len], data),
        params,
        ranges,
        seed,
    })
}

/// Points per axis of the evaluation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridResolution {
    pub amplitude: usize,
    pub frequency: usize,
    pub phase: usize,
}

impl GridResolution {
    pub fn uniform(n: usize) -> Self {
        Self {
            amplitude: n,
            frequency: n,
            phase: n,
        }
    }

    /// A grid containing every point of `self`.
    pub fn refined(&self) -> Self {
        Self {
            amplitude: 2 * self.amplitude - 1,
            frequency: 2 * self.frequency - 1,
            phase: 2 * self.phase,
        }
    }

    pub fn validate(&self) -> Result<(), SineError> {
        let r = [self.amplitude, self.frequency, self.phase];
        if r.iter().any(|&n| n < 2) {
            return Err(SineError::Grid(r));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.amplitude * self.frequency * self.phase
    }
}

/// 50 amplitudes, 200 frequencies, 200 phases. Phase and frequency steps
/// dominate the discretisation error over 64 steps.
impl Default for GridResolution {
    fn default() -> Self {
        Self {
            amplitude: 50,
            frequency: 200,
            phase: 200,
        }
    }
}

impl std::fmt::Display for GridResolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.amplitude, self.frequency, self.phase)
    }
}

/// `n` points from `lo` to `hi` inclusive.
pub fn closed_axis([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

/// `n` points from `lo` up to but excluding `hi`.
pub fn open_axis([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    (0..n).map(|j| lo + (hi - lo) * j as f64 / n as f64).collect()
}

/// The grid's three axes `(amplitudes, frequencies, phases)`.
pub fn grid_axes(ranges: &SineRanges, grid: GridResolution) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        closed_axis(ranges.amplitude, grid.amplitude),
        closed_axis(ranges.frequency, grid.frequency),
        open_axis(ranges.phase, grid.phase),
    )
}

struct Basis {
    /// `sin(w t + b)` for every `(w, b)` pair, concatenated.
    waves: Vec<f64>,
    norms: Vec<f64>,
    len: usize,
}

impl Basis {
    fn new(freqs: &[f64], phases: &[f64], len: usize) -> Self {
        let mut waves = Vec::with_capacity(freqs.len() * phases.len() * len);
        let mut norms = Vec::with_capacity(freqs.len() * phases.len());
        for &w in freqs {
            for &b in phases {
                let start = waves.len();
                waves.extend((0..len).map(|t| (w * t as f64 + b).sin()));
                norms.push(waves[start..].iter().map(|s| s * s).sum());
            }
        }
        Self { waves, norms, len }
    }
}

fn squared_distance(x: &[f64], a: f64, s: &[f64]) -> f64 {
    x.iter()
        .zip(s)
        .map(|(&xt, &st)| {
            let d = xt - a * st;
            d * d
        })
        .sum()
}

/// Smallest squared distance from `x` to `a * s` over the amplitude axis,
/// or `None` when it certainly exceeds `bound`. The distance is a convex
/// quadratic in `a`, so the best grid amplitude is one of the two
/// neighbours of the unconstrained optimum. The expanded quadratic screens
/// candidates; survivors are measured exactly so on-grid waves give 0.
fn best_over_amplitudes(x: &[f64], xx: f64, s: &[f64], norm: f64, amps: &[f64], bound: f64) -> Option<f64> {
    let n = amps.len();
    let (lo, hi) = (amps[0], amps[n - 1]);
    let dot: f64 = x.iter().zip(s).map(|(a, b)| a * b).sum();
    let candidates = if norm > 0.0 && hi > lo {
        let u = (dot / norm - lo) / (hi - lo) * (n - 1) as f64;
        let k = u.floor().clamp(0.0, (n - 1) as f64) as usize;
        [k, (k + 1).min(n - 1)]
    } else {
        [0, 0]
    };
    let slack = SCREEN_SLACK * (xx + norm * lo.abs().max(hi.abs()).powi(2) + 1.0);
    let mut best: Option<f64> = None;
    for (i, &k) in candidates.iter().enumerate() {
        if i == 1 && k == candidates[0] {
            break;
        }
        let a = amps[k];
        let approx = xx - 2.0 * a * dot + a * a * norm;
        if approx - slack > bound.min(best.unwrap_or(f64::INFINITY)) {
            continue;
        }
        let d = squared_distance(x, a, s);
        best = Some(best.map_or(d, |b: f64| b.min(d)));
    }
    best
}

/// Relative rounding allowance of the expanded quadratic.
const SCREEN_SLACK: f64 = 1e-9;

/// Distance from one wave to the nearest grid sinusoid.
pub fn nearest_sine_distance(x: &[f64], ranges: &SineRanges, grid: GridResolution) -> f64 {
    let (amps, freqs, phases) = grid_axes(ranges, grid);
    let basis = Basis::new(&freqs, &phases, x.len());
    nearest_with_basis(x, &amps, &basis)
}

fn nearest_with_basis(x: &[f64], amps: &[f64], basis: &Basis) -> f64 {
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let mut best = f64::INFINITY;
    for (k, s) in basis.waves.chunks_exact(basis.len).enumerate() {
        if let Some(d) = best_over_amplitudes(x, xx, s, basis.norms[k], amps, best) {
            if d < best {
                best = d;
            }
        }
    }
    best.sqrt()
}

/// Mean nearest-sine distance of a sample set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub n: usize,
    pub grid: GridResolution,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mean,std_err,n,grid";

    pub fn from_distances(distances: &[f64], grid: GridResolution) -> Result<Self, SineError> {
        let n = distances.len();
        if n == 0 {
            return Err(SineError::Empty);
        }
        let mean = distances.iter().sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std_err,
            n,
            grid,
        })
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "mean = {}", self.mean).unwrap();
        writeln!(s, "std_err = {}", self.std_err).unwrap();
        writeln!(s, "n = {}", self.n).unwrap();
        writeln!(s, "grid = {}", self.grid).unwrap();
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.mean, self.std_err, self.n, self.grid)
    }
}

/// Per-sample nearest-sine distances for the rows of `samples` (`[n, T]`).
pub fn nearest_sine_distances(
    samples: &Tensor,
    ranges: &SineRanges,
    grid: GridResolution,
) -> Result<Vec<f64>, SineError> {
    ranges.validate()?;
    grid.validate()?;
    if samples.rank() != 2 || samples.len() == 0 {
        return Err(SineError::Empty);
    }
    let [n, len] = [samples.shape()[0], samples.shape()[1]];
    let (amps, freqs, phases) = grid_axes(ranges, grid);
    let basis = Basis::new(&freqs, &phases, len);
    Ok((0..n)
        .map(|i| nearest_with_basis(samples.row(i), &amps, &basis))
        .collect())
}

/// Mean and standard error of the nearest-sine distance over `samples`.
pub fn nearest_sine_error(
    samples: &Tensor,
    ranges: &SineRanges,
    grid: GridResolution,
) -> Result<EvalReport, SineError> {
    let d = nearest_sine_distances(samples, ranges, grid)?;
    EvalReport::from_distances(&d, grid)
}
