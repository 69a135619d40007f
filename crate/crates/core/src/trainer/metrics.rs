use std::fmt::Write as _;

use crate::curriculum::Lambda;

pub const METRICS_HEADER: &str = "iter,stage,lambda,critic_objective,gen_loss,penalty,ms";

/// One outer iteration of training.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub stage: usize,
    pub lambda: Lambda,
    /// Mean unpenalised critic objective over the inner critic steps; the
    /// running Wasserstein estimate under the current curriculum weights.
    pub critic_objective: f64,
    pub gen_loss: f64,
    pub penalty: f64,
    /// Wall-clock milliseconds, or 0 when timing is not recorded.
    pub ms: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let lambda: Vec<String> = self.lambda.weights().iter().map(|w| w.to_string()).collect();
        write!(
            s,
            "{},{},{},{},{},{},{}",
            self.iter,
            self.stage,
            lambda.join(";"),
            self.critic_objective,
            self.gen_loss,
            self.penalty,
            self.ms
        )
        .unwrap();
        s
    }
}

pub type RunMetrics = Vec<MetricsRow>;

/// Mean critic objective over the `window` iterations after each stage
/// switch minus the mean over the `window` before it. Switches without a
/// full window on both sides are skipped.
pub fn switch_jumps(metrics: &[MetricsRow], window: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for i in 1..metrics.len() {
        if metrics[i].stage == metrics[i - 1].stage {
            continue;
        }
        if i < window || i + window > metrics.len() {
            continue;
        }
        let mean = |rows: &[MetricsRow]| {
            rows.iter().map(|r| r.critic_objective).sum::<f64>() / rows.len() as f64
        };
        let before = mean(&metrics[i - window..i]);
        let after = mean(&metrics[i..i + window]);
        out.push((metrics[i].iter, after - before));
    }
    out
}
