use rayon::prelude::*;
use vpc_charflow::system_matrix;
use vpc_forward::{ControlField, ParticleEnsemble, Target, TrajectoryStore};
use vpc_kernels::{costate_samples, CostateSample, CostateSource, Softening};
use vpc_model::{join, vpart, xpart, Vec3, Vec6};

use crate::stages::{B, C};
use crate::SensitivityError;

/// Linearized response to a control direction H.
#[derive(Debug, Clone)]
pub struct TangentStore {
    /// Lagrangian displacement δz_p(t_n).
    pub dz: Vec<Vec<Vec6>>,
    /// Eulerian density derivative at the particle, δf_p = −(Nᵀ∂f̊)_p·δz_p.
    pub df: Vec<Vec<f64>>,
}

/// Derivative of the forward run in direction H: RK4 linearized at the
/// stored stage states, so δz is the exact derivative of the discrete map.
pub fn run_tangent(ens: &ParticleEnsemble, traj: &TrajectoryStore, h: &ControlField) -> Result<TangentStore, SensitivityError> {
    if !traj.has_matrices() {
        return Err(SensitivityError::MissingMatrices);
    }
    if !h.same_layout(&traj.control) {
        return Err(SensitivityError::Mismatch("direction and control live on different grids".into()));
    }
    if ens.len() != traj.n_particles() {
        return Err(SensitivityError::Mismatch("ensemble does not match the run".into()));
    }
    let eps = Softening::new(traj.softening)?;
    let (np, dt) = (traj.n_particles(), traj.dt);
    let rate = |n: usize, s: usize, dy: &[Vec6]| -> Vec<Vec6> {
        let t = traj.times[n] + C[s] * dt;
        let ys = traj.stage_state(n, s);
        let xs: Vec<Vec3> = ys.iter().map(xpart).collect();
        let dx: Vec<Vec3> = dy.iter().map(xpart).collect();
        let samples = if traj.self_field {
            let src = CostateSource::new(&xs, &traj.weights, &dx).expect("lengths agree");
            costate_samples(&src, eps)
        } else {
            vec![CostateSample::zero(); np]
        };
        (0..np)
            .into_par_iter()
            .map(|p| {
                let (b, bj) = traj.control.sample(t, &xs[p]);
                let v = vpart(&ys[p]);
                let a = system_matrix(&v, &samples[p].jac_e, &b, &bj);
                // the other particles' displacements enter through δE
                a * dy[p] + join(&Vec3::zeros(), &(v.cross(&h.value(t, &xs[p])) - samples[p].dphi))
            })
            .collect()
    };
    let mut dz = vec![vec![Vec6::zeros(); np]];
    for n in 0..traj.n_steps() {
        let d0 = dz.last().unwrap();
        let k1 = rate(n, 0, d0);
        let d2: Vec<Vec6> = (0..np).map(|p| d0[p] + k1[p] * (0.5 * dt)).collect();
        let k2 = rate(n, 1, &d2);
        let d3: Vec<Vec6> = (0..np).map(|p| d0[p] + k2[p] * (0.5 * dt)).collect();
        let k3 = rate(n, 2, &d3);
        let d4: Vec<Vec6> = (0..np).map(|p| d0[p] + k3[p] * dt).collect();
        let k4 = rate(n, 3, &d4);
        let next: Vec<Vec6> = (0..np)
            .map(|p| d0[p] + (k1[p] * B[0] + k2[p] * B[1] + k3[p] * B[2] + k4[p] * B[3]) * dt)
            .collect();
        if next.iter().any(|d| !d.iter().all(|c| c.is_finite())) {
            return Err(SensitivityError::NonFinite { step: n + 1 });
        }
        dz.push(next);
    }
    let df = dz
        .iter()
        .enumerate()
        .map(|(n, row)| row.iter().enumerate().map(|(p, d)| -(traj.ninv[n][p].transpose() * ens.grads[p]).dot(d)).collect())
        .collect();
    Ok(TangentStore { dz, df })
}

/// Tracking part of J′(B)[H] from the tangent: −Σ ω_p ∇f_d(z_p(T))·δz_p(T).
pub fn tangent_pairing(traj: &TrajectoryStore, target: &Target, tangent: &TangentStore) -> f64 {
    let dz = tangent.dz.last().expect("tangent has a terminal slice");
    -traj
        .final_z()
        .iter()
        .zip(dz)
        .zip(&traj.weights)
        .map(|((z, d), w)| w * target.grad(z).dot(d))
        .sum::<f64>()
}
