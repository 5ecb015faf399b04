use vpc_forward::{run_forward, run_forward_with, ControlField, ForwardOptions, ParticleEnsemble, Target, TrajectoryStore};
use vpc_model::RunConfig;
use vpc_sensitivity::{run_backward, CostateStore};

use crate::{assemble_gradient, invalid, GradientField, OptimizeError};

/// J = tracking + regularization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub tracking: f64,
    pub regularization: f64,
}

/// λ/2 Σ_k τ_k Σ_edges ΔV |ΔB/h|², forward differences between grid nodes.
pub fn regularization(b: &ControlField, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let grid = *b.grid();
    let dims = grid.dims;
    let tau = b.knot_weights();
    let mut total = 0.0;
    for (k, t) in tau.iter().enumerate() {
        let vals = b.knot_values(k);
        let mut s = 0.0;
        for node in 0..grid.node_count() {
            let ijk = b.unflatten(node);
            for a in 0..3 {
                if ijk[a] + 1 < dims[a] {
                    let mut nb = ijk;
                    nb[a] += 1;
                    s += ((vals[b.flatten(nb)] - vals[node]) / grid.spacing[a]).norm_squared();
                }
            }
        }
        total += t * b.cell_volume() * s;
    }
    0.5 * lambda * total
}

fn tracking(ens: &ParticleEnsemble, traj: &TrajectoryStore, target: &Target, n_dd: f64) -> f64 {
    // same summation order as the ensemble's own quadrature, so a target
    // transported by this very run gives exactly zero
    let n_ff = ens.quadrature_l2_squared();
    let cross: f64 = ens.weights.iter().zip(traj.final_z()).map(|(w, z)| w * target.eval(z)).sum();
    0.5 * (n_ff - 2.0 * cross + n_dd)
}

/// Cost of a stored run: ½(Σω_p f̊_p − 2Σω_p f_d(z_p(T)) + ∥f_d∥²) + regularization.
pub fn eval_cost(ens: &ParticleEnsemble, traj: &TrajectoryStore, target: &Target, lambda: f64) -> Result<CostBreakdown, OptimizeError> {
    cost_with(ens, traj, target, target.l2_norm_squared(), lambda)
}

fn cost_with(ens: &ParticleEnsemble, traj: &TrajectoryStore, target: &Target, n_dd: f64, lambda: f64) -> Result<CostBreakdown, OptimizeError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", "must be nonnegative"));
    }
    if ens.len() != traj.n_particles() {
        return Err(OptimizeError::Mismatch("ensemble does not match the run".into()));
    }
    let tr = tracking(ens, traj, target, n_dd);
    let reg = regularization(&traj.control, lambda);
    Ok(CostBreakdown {
        total: tr + reg,
        tracking: tr,
        regularization: reg,
    })
}

/// (J(B + δH) − J(B − δH)) / 2δ.
pub fn fd_directional(
    b: &ControlField,
    h: &ControlField,
    delta: f64,
    mut eval: impl FnMut(&ControlField) -> Result<f64, OptimizeError>,
) -> Result<f64, OptimizeError> {
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    let plus = eval(&b.axpy(delta, h))?;
    let minus = eval(&b.axpy(-delta, h))?;
    Ok((plus - minus) / (2.0 * delta))
}

/// Everything one gradient evaluation produces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub traj: TrajectoryStore,
    pub costate: CostateStore,
    pub gradient: GradientField,
}

/// A fixed ensemble, run configuration and target.
#[derive(Debug, Clone)]
pub struct Problem {
    pub ens: ParticleEnsemble,
    pub cfg: RunConfig,
    pub target: Target,
    n_dd: f64,
}

impl Problem {
    pub fn new(ens: ParticleEnsemble, cfg: RunConfig, target: Target) -> Self {
        let n_dd = target.l2_norm_squared();
        Self { ens, cfg, target, n_dd }
    }

    pub fn lambda(&self) -> f64 {
        self.cfg.lambda
    }

    pub fn target_norm_squared(&self) -> f64 {
        self.n_dd
    }

    pub fn cost_of(&self, traj: &TrajectoryStore) -> Result<CostBreakdown, OptimizeError> {
        cost_with(&self.ens, traj, &self.target, self.n_dd, self.cfg.lambda)
    }

    /// J(B) from a forward run without flow Jacobians.
    pub fn cost(&self, b: &ControlField) -> Result<CostBreakdown, OptimizeError> {
        let opts = ForwardOptions {
            variational: false,
            self_field: true,
        };
        self.cost_of(&run_forward_with(&self.ens, b, &self.cfg, opts)?)
    }

    /// Forward run, costate and the Riesz gradient at B.
    pub fn evaluate(&self, b: &ControlField) -> Result<Evaluation, OptimizeError> {
        let traj = run_forward(&self.ens, b, &self.cfg)?;
        let cost = self.cost_of(&traj)?;
        let costate = run_backward(&self.ens, &traj, &self.target, &self.cfg.cutoff)?;
        let gradient = assemble_gradient(&traj, &costate, b, self.cfg.lambda)?;
        Ok(Evaluation {
            cost,
            traj,
            costate,
            gradient,
        })
    }
}
