//! Tracking-type optimal control of the particle system.
//!
//! J(B) = ½∥f(T) − f_d∥₂² + λ/2·∥D_xB∥₂², minimized over the ball
//! ∥B∥_V ≤ K by projected gradient descent, or solved through its
//! optimality system by a damped fixed-point iteration.

mod cost;
mod descent;
mod fixedpoint;
mod gradient;
pub mod io;
mod norms;

pub use cost::{eval_cost, fd_directional, regularization, CostBreakdown, Evaluation, Problem};
pub use descent::{run_projected_gd, DescentOutcome, DescentStatus, IterRecord, OptimizeConfig};
pub use fixedpoint::{first_order_residual, fixed_point_iterate, FixedPointMode, FixedPointOutcome, FixedPointSettings, FixedPointStatus};
pub use gradient::{assemble_gradient, deposit_sources, neg_laplacian, GradientField};
pub use norms::{discrete_v_norm, h1_norm, project_admissible, w2_norm};

use thiserror::Error;
use vpc_forward::ForwardError;
use vpc_sensitivity::SensitivityError;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid parameter `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },
    #[error("inconsistent inputs: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> OptimizeError {
    OptimizeError::Invalid { name, reason: reason.into() }
}
