use vpc_forward::TrajectoryStore;
use vpc_model::{Vec3, Vec6};

/// RK4 nodes and weights.
pub(crate) const C: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
pub(crate) const B: [f64; 4] = [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0];

/// Which forward states the backward pass sees at RK4 stage times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageStates {
    /// The stage states of the forward solver itself; gives the exact
    /// discrete adjoint.
    #[default]
    Stored,
    /// Cubic Hermite interpolation between stored nodes.
    Hermite,
}

impl StageStates {
    pub(crate) fn states(self, traj: &TrajectoryStore, n: usize, s: usize) -> Vec<Vec6> {
        match self {
            StageStates::Stored => traj.stage_state(n, s).to_vec(),
            StageStates::Hermite => (0..traj.n_particles()).map(|p| traj.interpolate(n, C[s], p)).collect(),
        }
    }
}

/// Point sources s_p at positions x_p of one stage, with quadrature weight
/// dt·b_i in time. The tracking part of J′(B)[H] is
/// Σ_stages weight·Σ_p s_p·H(t, x_p).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSource {
    pub t: f64,
    pub weight: f64,
    pub x: Vec<Vec3>,
    pub s: Vec<Vec3>,
}
