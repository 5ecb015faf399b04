//! Backward costate transport.
//!
//! Along particle p the costate obeys
//!
//!   dg/dt = χ Φ,   dG/dt = −AᵀG + χ (∂ₓΦ, 0) + Φ ∂χ,
//!
//! with Φ and ∂ₓΦ the kernel sums of the other particles' velocity blocks.
//! The transported gradient G^f = Nᵀ∂f̊ solves the homogeneous part exactly,
//! while its particle quadrature Φ_{f,f} does not vanish at practical
//! resolution. The pass therefore integrates W = G − G^f, which has the
//! same coupling and the terminal value −∇f_d(z_p(T)), and reports
//! G = W + Nᵀ∂f̊. In this form the pass is the adjoint of the discrete
//! particle system, and it coincides with the route through h = f − g.

use rayon::prelude::*;
use vpc_charflow::system_matrix;
use vpc_forward::{ParticleEnsemble, Target, TrajectoryStore};
use vpc_kernels::{costate_samples, CostateSample, CostateSource, Softening};
use vpc_model::{join, vpart, xpart, CutoffSpec, Vec3, Vec6};

use crate::stages::{B, C};
use crate::{ControlSource, SensitivityError, StageStates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BackwardOptions {
    pub states: StageStates,
}

/// Costate values and phase-space gradients along every trajectory.
#[derive(Debug, Clone)]
pub struct CostateStore {
    pub times: Vec<f64>,
    /// g[n][p] = g(t_n, z_p(t_n)).
    pub g: Vec<Vec<f64>>,
    /// big_g[n][p] = ∂_z g(t_n, z_p(t_n)).
    pub big_g: Vec<Vec<Vec6>>,
    /// Stage sources of the control derivative, in forward time order.
    pub sources: Vec<ControlSource>,
    /// Set when the cutoff is not identically one on the particle support.
    pub cutoff_warning: bool,
}

impl CostateStore {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Tracking part of J′(B)[H].
    pub fn pairing(&self, h: &vpc_forward::ControlField) -> f64 {
        self.sources
            .iter()
            .map(|src| src.weight * src.x.iter().zip(&src.s).map(|(x, s)| s.dot(&h.value(src.t, x))).sum::<f64>())
            .sum()
    }
}

/// g(T) and ∂_z g(T) at the final particle positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSlice {
    pub g: Vec<f64>,
    pub big_g: Vec<Vec6>,
}

pub fn terminal_costate(ens: &ParticleEnsemble, traj: &TrajectoryStore, target: &Target) -> Result<TerminalSlice, SensitivityError> {
    check(ens, traj)?;
    let zt = traj.final_z();
    let nt = traj.ninv.last().expect("checked above");
    Ok(TerminalSlice {
        g: zt.iter().enumerate().map(|(p, z)| ens.values[p] - target.eval(z)).collect(),
        big_g: zt
            .iter()
            .enumerate()
            .map(|(p, z)| nt[p].transpose() * ens.grads[p] - target.grad(z))
            .collect(),
    })
}

fn check(ens: &ParticleEnsemble, traj: &TrajectoryStore) -> Result<(), SensitivityError> {
    if !traj.has_matrices() {
        return Err(SensitivityError::MissingMatrices);
    }
    if ens.len() != traj.n_particles() {
        return Err(SensitivityError::Mismatch(format!("{} particles in the ensemble, {} in the run", ens.len(), traj.n_particles())));
    }
    Ok(())
}

pub fn run_backward(ens: &ParticleEnsemble, traj: &TrajectoryStore, target: &Target, cutoff: &CutoffSpec) -> Result<CostateStore, SensitivityError> {
    run_backward_with(ens, traj, target, cutoff, BackwardOptions::default())
}

pub fn run_backward_with(
    ens: &ParticleEnsemble,
    traj: &TrajectoryStore,
    target: &Target,
    cutoff: &CutoffSpec,
    opts: BackwardOptions,
) -> Result<CostateStore, SensitivityError> {
    check(ens, traj)?;
    let zt = traj.final_z();
    let g_t: Vec<f64> = zt.iter().enumerate().map(|(p, z)| ens.values[p] - target.eval(z)).collect();
    let w_t: Vec<Vec6> = zt.iter().map(|z| -target.grad(z)).collect();
    let pass = Pass::new(traj, cutoff, opts)?.run(w_t, g_t)?;
    Ok(pass.into_store(traj, |n, p, w| traj.ninv[n][p].transpose() * ens.grads[p] + w, |_, g| g, 1.0))
}

/// Costate through the complementary variable h = f − g with h(T) = f_d.
pub fn run_backward_via_h(ens: &ParticleEnsemble, traj: &TrajectoryStore, target: &Target, cutoff: &CutoffSpec) -> Result<CostateStore, SensitivityError> {
    check(ens, traj)?;
    let zt = traj.final_z();
    let h_t: Vec<f64> = zt.iter().map(|z| target.eval(z)).collect();
    let hh_t: Vec<Vec6> = zt.iter().map(|z| target.grad(z)).collect();
    let pass = Pass::new(traj, cutoff, BackwardOptions::default())?.run(hh_t, h_t)?;
    Ok(pass.into_store(
        traj,
        |n, p, hh| traj.ninv[n][p].transpose() * ens.grads[p] - hh,
        |p, h| ens.values[p] - h,
        -1.0,
    ))
}

struct Pass<'a> {
    traj: &'a TrajectoryStore,
    cutoff: &'a CutoffSpec,
    eps: Softening,
    states: StageStates,
    warning: bool,
}

struct PassResult {
    /// Integrated 6-vector and scalar per node, forward time order.
    w: Vec<Vec<Vec6>>,
    g: Vec<Vec<f64>>,
    /// Stage (t, weight, positions, velocities, stage costate v-blocks).
    stages: Vec<(f64, f64, Vec<Vec3>, Vec<Vec3>, Vec<Vec3>)>,
    warning: bool,
}

impl<'a> Pass<'a> {
    fn new(traj: &'a TrajectoryStore, cutoff: &'a CutoffSpec, opts: BackwardOptions) -> Result<Self, SensitivityError> {
        let r = (0..=traj.n_steps()).map(|n| vpc_forward::support_radius(traj, n)).fold(0.0, f64::max);
        let warning = cutoff.inner_radius < r;
        if warning {
            log::warn!("cutoff inner radius {} is below the particle support radius {r}", cutoff.inner_radius);
        }
        Ok(Self {
            traj,
            cutoff,
            eps: Softening::new(traj.softening)?,
            states: opts.states,
            warning,
        })
    }

    /// Rates ξ = −dW/dt and ρ = dg/dt at one stage.
    fn rates(&self, t: f64, ys: &[Vec6], lam: &[Vec6]) -> Vec<(Vec6, f64)> {
        let xs: Vec<Vec3> = ys.iter().map(xpart).collect();
        let lv: Vec<Vec3> = lam.iter().map(vpart).collect();
        let samples = if self.traj.self_field {
            let src = CostateSource::new(&xs, &self.traj.weights, &lv).expect("lengths agree");
            costate_samples(&src, self.eps)
        } else {
            vec![CostateSample::zero(); ys.len()]
        };
        let control = &self.traj.control;
        (0..ys.len())
            .into_par_iter()
            .map(|p| {
                let (b, bj) = control.sample(t, &xs[p]);
                let a = system_matrix(&vpart(&ys[p]), &samples[p].jac_e, &b, &bj);
                let chi = self.cutoff.eval(&ys[p]);
                let s = &samples[p];
                let xi = a.transpose() * lam[p] - join(&s.dphi, &Vec3::zeros()) * chi - self.cutoff.grad(&ys[p]) * s.phi;
                (xi, chi * s.phi)
            })
            .collect()
    }

    fn run(&self, w_t: Vec<Vec6>, g_t: Vec<f64>) -> Result<PassResult, SensitivityError> {
        let traj = self.traj;
        let (n_steps, dt, np) = (traj.n_steps(), traj.dt, traj.n_particles());
        let mut ws = vec![w_t];
        let mut gs = vec![g_t];
        let mut stages = Vec::with_capacity(4 * n_steps);
        let axpy = |a: &[Vec6], b: &[(Vec6, f64)], c: f64| -> Vec<Vec6> { a.iter().zip(b).map(|(x, y)| x + y.0 * c).collect() };
        for n in (0..n_steps).rev() {
            let (w1, g1) = (ws.last().unwrap(), gs.last().unwrap());
            let t = traj.times[n];
            let mut lam: [Vec<Vec6>; 4] = Default::default();
            let mut rate: [Vec<(Vec6, f64)>; 4] = Default::default();
            let mut ys: [Vec<Vec6>; 4] = Default::default();
            for s in (0..4).rev() {
                lam[s] = match s {
                    3 => w1.clone(),
                    2 => axpy(w1, &rate[3], 0.5 * dt),
                    1 => axpy(w1, &rate[2], 0.5 * dt),
                    _ => axpy(w1, &rate[1], dt),
                };
                ys[s] = self.states.states(traj, n, s);
                rate[s] = self.rates(t + C[s] * dt, &ys[s], &lam[s]);
            }
            let w0: Vec<Vec6> = (0..np).map(|p| w1[p] + (0..4).map(|s| rate[s][p].0 * B[s]).sum::<Vec6>() * dt).collect();
            let g0: Vec<f64> = (0..np).map(|p| g1[p] - dt * (0..4).map(|s| rate[s][p].1 * B[s]).sum::<f64>()).collect();
            if w0.iter().any(|w| !w.iter().all(|c| c.is_finite())) || g0.iter().any(|g| !g.is_finite()) {
                return Err(SensitivityError::NonFinite { step: n });
            }
            for s in (0..4).rev() {
                let y = std::mem::take(&mut ys[s]);
                stages.push((
                    t + C[s] * dt,
                    B[s] * dt,
                    y.iter().map(xpart).collect(),
                    y.iter().map(vpart).collect(),
                    lam[s].iter().map(vpart).collect(),
                ));
            }
            ws.push(w0);
            gs.push(g0);
        }
        ws.reverse();
        gs.reverse();
        stages.reverse();
        Ok(PassResult { w: ws, g: gs, stages, warning: self.warning })
    }
}

impl PassResult {
    /// `sign` maps the integrated variable to W: +1 for W itself, −1 for H.
    fn into_store(
        self,
        traj: &TrajectoryStore,
        big_g: impl Fn(usize, usize, Vec6) -> Vec6,
        g: impl Fn(usize, f64) -> f64,
        sign: f64,
    ) -> CostateStore {
        let weights = &traj.weights;
        CostateStore {
            times: traj.times.clone(),
            g: self.g.iter().map(|row| row.iter().enumerate().map(|(p, v)| g(p, *v)).collect()).collect(),
            big_g: self
                .w
                .iter()
                .enumerate()
                .map(|(n, row)| row.iter().enumerate().map(|(p, w)| big_g(n, p, *w)).collect())
                .collect(),
            sources: self
                .stages
                .into_iter()
                .map(|(t, weight, x, v, lv)| ControlSource {
                    t,
                    weight,
                    s: (0..x.len()).map(|p| -v[p].cross(&lv[p]) * (sign * weights[p])).collect(),
                    x,
                })
                .collect(),
            cutoff_warning: self.warning,
        }
    }
}
