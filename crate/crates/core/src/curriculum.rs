//! Curriculum weights over a bank of nested critics.
//!
//! A [`Lambda`] is a point on the probability simplex. The composite critic
//! is `sum_i lambda_i f_i(x)`, and one weight vector dominates another when
//! every backwards cumulative sum is at least as large: shifting mass toward
//! later, larger function classes can only enlarge the set of representable
//! critics.

use std::fmt;

use thiserror::Error;

use crate::autodiff::{Graph, NodeId};
use crate::families::{BoundBank, CriticBank, FamilyError};

/// Tolerance on the simplex constraint.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Tolerance on backwards-cumulative-sum comparisons.
pub const ORDER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurriculumError {
    #[error("lambda must have at least one entry")]
    Empty,
    #[error("lambda entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("lambda entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("lambda sums to {0}, expected 1")]
    SumNotOne(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("stage {stage} has zero duration")]
    ZeroDuration { stage: usize },
    #[error("stage {stage} does not dominate its predecessor ({order:?})")]
    NotMonotone { stage: usize, order: OrderResult },
    #[error("schedule has no stages")]
    EmptySchedule,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

/// Validate simplex membership.
pub fn check_valid(weights: &[f64]) -> Result<(), CurriculumError> {
    if weights.is_empty() {
        return Err(CurriculumError::Empty);
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(CurriculumError::NonFinite { index });
        }
        if value < 0.0 {
            return Err(CurriculumError::NegativeEntry { index, value });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(CurriculumError::SumNotOne(sum));
    }
    Ok(())
}

/// Nonnegative weights summing to one.
#[derive(Clone, PartialEq)]
pub struct Lambda(Vec<f64>);

impl Lambda {
    pub fn new(weights: Vec<f64>) -> Result<Self, CurriculumError> {
        check_valid(&weights)?;
        Ok(Self(weights))
    }

    /// The `i`-th standard basis vector of dimension `d`.
    pub fn one_hot(d: usize, i: usize) -> Self {
        assert!(i < d, "one_hot index {i} out of range for dimension {d}");
        let mut w = vec![0.0; d];
        w[i] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Index of the single unit entry, if this is a basis vector.
    pub fn one_hot_index(&self) -> Option<usize> {
        let mut hit = None;
        for (i, &w) in self.0.iter().enumerate() {
            if w == 1.0 && hit.is_none() {
                hit = Some(i);
            } else if w != 0.0 {
                return None;
            }
        }
        hit
    }

    /// Indices with nonzero weight.
    pub fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().copied().enumerate().filter(|&(_, w)| w != 0.0)
    }

    /// `sum_{i >= k} lambda_i` for every `k`.
    pub fn backward_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.0.len()];
        let mut acc = 0.0;
        for (i, &w) in self.0.iter().enumerate().rev() {
            acc += w;
            out[i] = acc;
        }
        out
    }
}

impl fmt::Debug for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lambda{:?}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderResult {
    Dominates,
    DominatedBy,
    Equal,
    Incomparable,
}

/// Order `a` against `b` by their backwards cumulative sums.
///
/// This certifies domination through a sufficient condition; an
/// `Incomparable` result does not prove that neither function class
/// contains the other.
pub fn compare(a: &Lambda, b: &Lambda) -> Result<OrderResult, CurriculumError> {
    if a.dim() != b.dim() {
        return Err(CurriculumError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (sa, sb) = (a.backward_sums(), b.backward_sums());
    let a_over_b = sa.iter().zip(&sb).all(|(x, y)| *x >= y - ORDER_TOLERANCE);
    let b_over_a = sb.iter().zip(&sa).all(|(x, y)| *x >= y - ORDER_TOLERANCE);
    Ok(match (a_over_b, b_over_a) {
        (true, true) => OrderResult::Equal,
        (true, false) => OrderResult::Dominates,
        (false, true) => OrderResult::DominatedBy,
        (false, false) => OrderResult::Incomparable,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub lambda: Lambda,
    /// Length of the stage in generator (outer) iterations.
    pub iterations: usize,
}

/// Monotone sequence of curriculum stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    stages: Vec<Stage>,
}

impl Schedule {
    /// Validate durations, dimensions and monotonicity.
    pub fn new(stages: Vec<Stage>) -> Result<Self, CurriculumError> {
        let first = stages.first().ok_or(CurriculumError::EmptySchedule)?;
        let d = first.lambda.dim();
        for (i, stage) in stages.iter().enumerate() {
            if stage.iterations == 0 {
                return Err(CurriculumError::ZeroDuration { stage: i });
            }
            if stage.lambda.dim() != d {
                return Err(CurriculumError::DimensionMismatch {
                    left: d,
                    right: stage.lambda.dim(),
                });
            }
            if i > 0 {
                let order = compare(&stage.lambda, &stages[i - 1].lambda)?;
                if !matches!(order, OrderResult::Dominates | OrderResult::Equal) {
                    return Err(CurriculumError::NotMonotone { stage: i, order });
                }
            }
        }
        Ok(Self { stages })
    }

    /// A single stage holding `lambda` for `iterations`.
    pub fn constant(lambda: Lambda, iterations: usize) -> Result<Self, CurriculumError> {
        Self::new(vec![Stage { lambda, iterations }])
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn dim(&self) -> usize {
        self.stages[0].lambda.dim()
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    /// True when every stage activates exactly one critic.
    pub fn is_one_hot(&self) -> bool {
        self.stages.iter().all(|s| s.lambda.one_hot_index().is_some())
    }

    /// Stage active at outer iteration `iter`. Iterations past the end stay
    /// on the final stage.
    pub fn position(&self, iter: usize) -> (usize, &Lambda) {
        let mut end = 0;
        for (i, stage) in self.stages.iter().enumerate() {
            end += stage.iterations;
            if iter < end {
                return (i, &stage.lambda);
            }
        }
        let last = self.stages.len() - 1;
        (last, &self.stages[last].lambda)
    }

    /// First outer iteration of every stage after the first.
    pub fn switch_points(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut at = 0;
        for stage in &self.stages[..self.stages.len() - 1] {
            at += stage.iterations;
            out.push(at);
        }
        out
    }
}

/// `e_1, e_2, ..., e_d`, each held for `iterations_per_stage`.
pub fn one_hot_schedule(d: usize, iterations_per_stage: usize) -> Result<Schedule, CurriculumError> {
    if d == 0 || iterations_per_stage == 0 {
        return Err(CurriculumError::InvalidArgument(format!(
            "one-hot schedule needs d >= 1 and stage length >= 1 (got {d}, {iterations_per_stage})"
        )));
    }
    Schedule::new(
        (0..d)
            .map(|i| Stage {
                lambda: Lambda::one_hot(d, i),
                iterations: iterations_per_stage,
            })
            .collect(),
    )
}

/// One-hot stages of `stage_len` iterations joined by linear ramps.
///
/// Between `e_i` and `e_{i+1}` the ramp emits `ramp_len` single-iteration
/// stages at `t = j / (ramp_len + 1)`, `j = 1..=ramp_len`, of
/// `(1 - t) e_i + t e_{i+1}`; the ramp endpoints are the one-hot stages
/// themselves.
pub fn blended_schedule(
    d: usize,
    stage_len: usize,
    ramp_len: usize,
) -> Result<Schedule, CurriculumError> {
    if d == 0 || stage_len == 0 {
        return Err(CurriculumError::InvalidArgument(format!(
            "blended schedule needs d >= 1 and stage length >= 1 (got {d}, {stage_len})"
        )));
    }
    let mut stages = Vec::with_capacity(d + (d - 1) * ramp_len);
    for i in 0..d {
        stages.push(Stage {
            lambda: Lambda::one_hot(d, i),
            iterations: stage_len,
        });
        if i + 1 < d {
            for j in 1..=ramp_len {
                let t = j as f64 / (ramp_len + 1) as f64;
                let mut w = vec![0.0; d];
                w[i] = 1.0 - t;
                w[i + 1] = t;
                stages.push(Stage {
                    lambda: Lambda::new(w)?,
                    iterations: 1,
                });
            }
        }
    }
    // Schedule::new re-checks every adjacent pair.
    Schedule::new(stages)
}

/// `sum_i lambda_i f_i(x)` over the critics with nonzero weight; critics
/// with zero weight are neither evaluated nor differentiated. Returns a
/// `[batch, 1]` node.
pub fn composite_critic(
    graph: &mut Graph,
    bank: &CriticBank,
    bound: &BoundBank,
    lambda: &Lambda,
    x: NodeId,
) -> Result<NodeId, CurriculumError> {
    if lambda.dim() != bank.len() {
        return Err(CurriculumError::DimensionMismatch {
            left: bank.len(),
            right: lambda.dim(),
        });
    }
    let mut total: Option<NodeId> = None;
    for (i, w) in lambda.active() {
        let out = bank.critic_forward(graph, bound, i, x)?;
        let term = if w == 1.0 {
            out
        } else {
            graph.scale(out, w).map_err(FamilyError::from)?
        };
        total = Some(match total {
            Some(acc) => graph.add(acc, term).map_err(FamilyError::from)?,
            None => term,
        });
    }
    total.ok_or(CurriculumError::Empty)
}
