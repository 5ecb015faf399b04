//! Forward solver for the magnetized Vlasov-Poisson system in particle form.
//!
//! The initial datum is sampled on a lattice; every sample carries a fixed
//! weight and moves along its characteristic in the self-consistent
//! repulsive field E = Σ ω_q K_ε(x − x_q) plus the trilinear control B.

mod control;
mod diagnostics;
mod ensemble;
pub mod io;
mod target;
mod trajectory;

pub use control::{ControlField, StencilEntry};
pub use diagnostics::{det_deviation, inverse_deviation, redeposited_l2_norm, support_radius};
pub use ensemble::{lp_norm, sample_ensemble, ParticleEnsemble};
pub use target::{Target, TransportedDatum};
pub use trajectory::{run_forward, run_forward_picard, run_forward_with, ForwardOptions, PicardHistory, TrajectoryStore};

use thiserror::Error;
use vpc_charflow::FieldProviders;
use vpc_kernels::{eval_e, eval_e_jacobian, KernelError, Softening, WeightedSource};
use vpc_model::{Mat3, Vec3};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("non-finite state for particle {particle} at step {step}")]
    NonFinite { particle: usize, step: usize },
    #[error("Picard iteration did not converge; distances {0:?}")]
    PicardNoConvergence(Vec<f64>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent inputs: {0}")]
    Mismatch(String),
    #[error("initial datum produced no particles")]
    EmptyEnsemble,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Self-consistent field of fixed source positions together with a control.
///
/// Lets a single test characteristic be pushed through the field that a
/// frozen particle cloud generates.
pub struct FrozenFields<'a> {
    pub positions: &'a [Vec3],
    pub weights: &'a [f64],
    pub softening: Softening,
    pub control: &'a ControlField,
}

impl FrozenFields<'_> {
    fn source(&self) -> WeightedSource<'_, f64> {
        WeightedSource::new(self.positions, self.weights).expect("positions and weights have equal length")
    }
}

impl FieldProviders for FrozenFields<'_> {
    fn electric(&self, _: f64, x: &Vec3) -> Vec3 {
        eval_e(&self.source(), x, self.softening)
    }
    fn electric_jacobian(&self, _: f64, x: &Vec3) -> Mat3 {
        eval_e_jacobian(&self.source(), x, self.softening)
    }
    fn magnetic(&self, t: f64, x: &Vec3) -> Vec3 {
        self.control.value(t, x)
    }
    fn magnetic_jacobian(&self, t: f64, x: &Vec3) -> Mat3 {
        self.control.jacobian(t, x)
    }
}
