use serde::{Deserialize, Serialize};
use vpc_forward::ControlField;

use crate::{invalid, project_admissible, FixedPointMode, OptimizeError, Problem};

/// Line-search and iteration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Initial step α₀ along the negative Riesz gradient.
    pub step_size: f64,
    /// Armijo factor c₁.
    #[serde(default = "default_armijo")]
    pub armijo: f64,
    /// Backtracking ratio in (0, 1).
    #[serde(default = "default_backtrack")]
    pub backtrack: f64,
    pub max_iters: usize,
    /// Stop once the relative decrease of J drops below this.
    pub tol: f64,
    /// Fixed-point damping θ ∈ (0, 1].
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// How the fixed-point map recovers B from the costate density.
    #[serde(default)]
    pub fixed_point_map: FixedPointMode,
}

fn default_armijo() -> f64 {
    1e-4
}

fn default_backtrack() -> f64 {
    0.5
}

fn default_damping() -> f64 {
    0.5
}

/// Consecutive rejected trial steps before the line search gives up.
pub const MAX_BACKTRACKS: usize = 30;

impl OptimizeConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size", "must be positive"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(invalid("armijo", "must lie in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(invalid("backtrack", "must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tol", "must be nonnegative"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("damping", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One row of an iterate history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub tracking: f64,
    pub reg: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// Sup-norm of the control update that produced this iterate.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentStatus {
    /// Relative decrease fell below the tolerance, or J vanished.
    Converged,
    /// The gradient vanished at an iterate.
    Stationary,
    MaxIters,
    /// The line search failed `MAX_BACKTRACKS` times in a row.
    LineSearchStall,
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub control: ControlField,
    pub history: Vec<IterRecord>,
    pub status: DescentStatus,
}

/// Projected gradient descent with Armijo backtracking:
/// accept B⁺ = P(B − αG) once J(B⁺) ≤ J(B) + c₁⟨G, B⁺ − B⟩.
pub fn run_projected_gd(problem: &Problem, initial: &ControlField, cfg: &OptimizeConfig) -> Result<DescentOutcome, OptimizeError> {
    cfg.validate()?;
    let spec = problem.cfg.admissible;
    let mut b = project_admissible(initial, &spec);
    let mut ev = problem.evaluate(&b)?;
    let mut history = vec![IterRecord {
        iter: 0,
        j: ev.cost.total,
        tracking: ev.cost.tracking,
        reg: ev.cost.regularization,
        grad_norm: ev.gradient.norm(),
        step: 0.0,
        residual: 0.0,
    }];
    if ev.cost.total <= 0.0 {
        // J is a squared distance plus a nonnegative penalty
        return Ok(DescentOutcome { control: b, history, status: DescentStatus::Converged });
    }
    let mut alpha = cfg.step_size;
    for iter in 1..=cfg.max_iters {
        if ev.gradient.max_abs() == 0.0 {
            return Ok(DescentOutcome { control: b, history, status: DescentStatus::Stationary });
        }
        let j0 = ev.cost.total;
        let mut failures = 0;
        let trial = loop {
            let trial = project_admissible(&b.axpy(-alpha, &ev.gradient), &spec);
            let predicted = ev.gradient.inner(&trial.axpy(-1.0, &b));
            let j = problem.cost(&trial)?.total;
            if j <= j0 + cfg.armijo * predicted && j <= j0 {
                break trial;
            }
            failures += 1;
            if failures >= MAX_BACKTRACKS {
                log::warn!("line search stalled at iteration {iter}");
                return Ok(DescentOutcome { control: b, history, status: DescentStatus::LineSearchStall });
            }
            alpha *= cfg.backtrack;
        };
        let change = trial.axpy(-1.0, &b).max_abs();
        b = trial;
        ev = problem.evaluate(&b)?;
        history.push(IterRecord {
            iter,
            j: ev.cost.total,
            tracking: ev.cost.tracking,
            reg: ev.cost.regularization,
            grad_norm: ev.gradient.norm(),
            step: alpha,
            residual: change,
        });
        log::info!("iteration {iter}: J = {:.6e}, step {alpha:.3e}", ev.cost.total);
        let decrease = (j0 - ev.cost.total) / j0.abs().max(f64::MIN_POSITIVE);
        if decrease < cfg.tol {
            return Ok(DescentOutcome { control: b, history, status: DescentStatus::Converged });
        }
        alpha /= cfg.backtrack;
    }
    Ok(DescentOutcome { control: b, history, status: DescentStatus::MaxIters })
}
