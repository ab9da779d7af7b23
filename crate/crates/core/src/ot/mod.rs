//! Discrete optimal transport between two weighted point sets.
//!
//! Two solvers share one contract: [`solve_exact`] runs a transportation
//! simplex and is exact up to floating point; [`solve_sinkhorn`] solves the
//! entropic problem with log-domain scaling. Both return a [`TransportPlan`]
//! whose row sums equal the source marginal.

mod exact;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use exact::{solve_exact, EXACT_CELL_LIMIT};
pub use sinkhorn::solve_sinkhorn;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_dot, Matrix, Vector};

/// Absolute tolerance on every row and column sum of a returned plan.
pub const TOL_MARGINAL: f64 = 1e-6;
/// Tolerance on the total mass of each marginal.
pub const TOL_MASS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtMode {
    Exact,
    Sinkhorn,
}

/// Entropic regularization strength, either absolute or as a multiple of the
/// mean cost entry of each instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Epsilon {
    Relative(f64),
    Absolute(f64),
}

impl Epsilon {
    /// Resolves against a cost matrix. A zero-mean cost falls back to the raw
    /// factor, since every plan is optimal there anyway.
    pub fn resolve(self, cost: &Matrix) -> f64 {
        match self {
            Epsilon::Absolute(e) => e,
            Epsilon::Relative(f) => {
                let mean = cost.mean();
                if mean > 0.0 {
                    f * mean
                } else {
                    f
                }
            }
        }
    }

    fn factor(self) -> f64 {
        match self {
            Epsilon::Absolute(e) | Epsilon::Relative(e) => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    pub mode: OtMode,
    pub epsilon: Epsilon,
    pub max_iters: usize,
    pub convergence_tol: f64,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            mode: OtMode::Sinkhorn,
            epsilon: Epsilon::Relative(0.05),
            max_iters: 2000,
            convergence_tol: 1e-8,
        }
    }
}

impl OtConfig {
    pub fn exact() -> Self {
        Self {
            mode: OtMode::Exact,
            ..Self::default()
        }
    }

    pub fn sinkhorn(epsilon: Epsilon) -> Self {
        Self {
            mode: OtMode::Sinkhorn,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.epsilon.factor();
        if self.mode == OtMode::Sinkhorn && !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "ot.epsilon",
                reason: format!("must be > 0, got {eps}"),
            });
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig {
                field: "ot.max_iters",
                reason: "must be >= 1".into(),
            });
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig {
                field: "ot.convergence_tol",
                reason: format!("must be > 0, got {}", self.convergence_tol),
            });
        }
        Ok(())
    }
}

/// A coupling between `row_marginal` (sources) and `col_marginal` (targets).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub row_marginal: Vector,
    pub col_marginal: Vector,
    /// Largest absolute column-sum error left by the solver.
    pub col_violation: f64,
    /// Solver iterations (simplex pivots or Sinkhorn sweeps).
    pub iterations: usize,
}

impl TransportPlan {
    pub fn objective(&self, cost: &Matrix) -> Result<f64> {
        frobenius_dot(cost, &self.plan)
    }

    pub fn row_violation(&self) -> f64 {
        max_abs_diff(&self.plan.row_sums(), self.row_marginal.as_slice())
    }

    pub fn measured_col_violation(&self) -> f64 {
        max_abs_diff(&self.plan.col_sums(), self.col_marginal.as_slice())
    }

    /// Plan scaled so every column sums to one.
    pub fn column_normalized(&self) -> Result<Matrix> {
        column_normalize(&self.plan)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves with whichever solver `cfg.mode` selects.
pub fn solve(cost: &Matrix, mu: &Vector, nu: &Vector, cfg: &OtConfig) -> Result<TransportPlan> {
    match cfg.mode {
        OtMode::Exact => solve_exact(cost, mu, nu),
        OtMode::Sinkhorn => solve_sinkhorn(cost, mu, nu, cfg),
    }
}

/// Uniform-marginal solve, the only case the alignment procedures use.
pub fn solve_uniform(cost: &Matrix, cfg: &OtConfig) -> Result<TransportPlan> {
    solve(
        cost,
        &Vector::uniform(cost.rows()),
        &Vector::uniform(cost.cols()),
        cfg,
    )
}

/// `T ⊙ (1 / 1ᵀT)`: divides each column by its sum so that `T̂ᵀ` maps rows to
/// convex combinations.
pub fn column_normalize(plan: &Matrix) -> Result<Matrix> {
    let sums = plan.col_sums();
    if let Some(column) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::EmptyColumn { column });
    }
    Ok(Matrix::from_fn(plan.rows(), plan.cols(), |i, j| {
        plan[(i, j)] / sums[j]
    }))
}

/// Divides each row by its sum.
pub fn row_normalize(plan: &Matrix) -> Result<Matrix> {
    column_normalize(&plan.transpose()).map(|m| m.transpose())
}

pub(crate) fn validate_marginals(
    cost: &Matrix,
    mu: &Vector,
    nu: &Vector,
    strictly_positive: bool,
) -> Result<()> {
    if cost.shape() != (mu.len(), nu.len()) {
        return Err(Error::InvalidMarginals(format!(
            "cost is {:?} but marginals have lengths ({}, {})",
            cost.shape(),
            mu.len(),
            nu.len()
        )));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidMarginals("empty marginal".into()));
    }
    for (name, m) in [("mu", mu), ("nu", nu)] {
        if m.0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidMarginals(format!(
                "{name} has negative or non-finite entries"
            )));
        }
        if strictly_positive && m.0.iter().any(|v| *v == 0.0) {
            return Err(Error::InvalidMarginals(format!("{name} has zero entries")));
        }
        if (m.sum() - 1.0).abs() > TOL_MASS {
            return Err(Error::InvalidMarginals(format!(
                "{name} sums to {}, expected 1",
                m.sum()
            )));
        }
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("transport cost"));
    }
    Ok(())
}
