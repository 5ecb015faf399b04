//! Linearized and adjoint transport along a stored forward run.
//!
//! Both passes are the exact linearization of the lockstep RK4 map of the
//! forward solver: they revisit the stored stage states, so the tangent
//! pairing and the adjoint pairing agree to rounding, and both agree with
//! finite differences of the discrete cost up to O(δ²).

mod costate;
pub mod io;
mod stages;
mod tangent;

pub use costate::{run_backward, run_backward_via_h, run_backward_with, terminal_costate, BackwardOptions, CostateStore, TerminalSlice};
pub use stages::{ControlSource, StageStates};
pub use tangent::{run_tangent, tangent_pairing, TangentStore};

use thiserror::Error;
use vpc_kernels::KernelError;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("the forward run carries no flow Jacobians")]
    MissingMatrices,
    #[error("inconsistent inputs: {0}")]
    Mismatch(String),
    #[error("non-finite costate or tangent at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}
