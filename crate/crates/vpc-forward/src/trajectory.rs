//! Lockstep RK4 for the particle system with self-consistent field.
//!
//! Every RK4 stage first evaluates E and ∂ₓE at all particles from the
//! stage positions of all particles, self terms excluded, and then advances
//! positions and (optionally) the Jacobians M, N. Stage states are kept so
//! that linearized and Picard solvers can replay the exact same stages.

use rayon::prelude::*;
use vpc_charflow::{rhs_from_fields, system_matrix};
use vpc_kernels::{field_samples, field_values, FieldSample, Softening};
use vpc_model::{vpart, xpart, Mat6, RunConfig, Vec3, Vec6};

use crate::{ControlField, ForwardError, ParticleEnsemble};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Integrate M and N alongside the positions.
    pub variational: bool,
    /// Include the self-consistent electric field.
    pub self_field: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            variational: true,
            self_field: true,
        }
    }
}

/// Full forward history of all particles.
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    pub dt: f64,
    pub times: Vec<f64>,
    /// z[n][p] at t_n.
    pub z: Vec<Vec<Vec6>>,
    /// Characteristic right-hand side at the nodes, for Hermite interpolation.
    pub rhs: Vec<Vec<Vec6>>,
    /// States of RK4 stages 2, 3, 4 of step n.
    pub stages: Vec<[Vec<Vec6>; 3]>,
    /// Forward Jacobians; empty unless integrated.
    pub m: Vec<Vec<Mat6>>,
    /// Inverse-flow Jacobians; empty unless integrated.
    pub ninv: Vec<Vec<Mat6>>,
    /// max_p |E(t_n, x_p)|.
    pub e_sup: Vec<f64>,
    pub control: ControlField,
    pub weights: Vec<f64>,
    pub softening: f64,
    pub self_field: bool,
    /// Particle-steps spent outside the interior of the control grid.
    pub grid_exits: usize,
}

impl TrajectoryStore {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_particles(&self) -> usize {
        self.weights.len()
    }

    pub fn has_matrices(&self) -> bool {
        !self.ninv.is_empty()
    }

    pub fn final_z(&self) -> &[Vec6] {
        self.z.last().expect("store has at least one slice")
    }

    /// Stage state s ∈ 0..4 of step n (stage 0 is the node itself).
    pub fn stage_state(&self, n: usize, s: usize) -> &[Vec6] {
        if s == 0 {
            &self.z[n]
        } else {
            &self.stages[n][s - 1]
        }
    }

    /// Cubic Hermite interpolation of particle p at t_n + θ·dt.
    pub fn interpolate(&self, n: usize, theta: f64, p: usize) -> Vec6 {
        if theta == 0.0 {
            return self.z[n][p];
        }
        if theta == 1.0 {
            return self.z[n + 1][p];
        }
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        self.z[n][p] * h00 + self.rhs[n][p] * (h10 * self.dt) + self.z[n + 1][p] * h01 + self.rhs[n + 1][p] * (h11 * self.dt)
    }

    /// Discrete L²(0,T; L∞) norm of the electric field (trapezoid in time).
    pub fn electric_norm(&self) -> f64 {
        let n = self.e_sup.len();
        let s: f64 = self
            .e_sup
            .iter()
            .enumerate()
            .map(|(i, e)| if i == 0 || i + 1 == n { 0.5 * e * e } else { e * e })
            .sum();
        (s * self.dt).sqrt()
    }

    /// Largest particle displacement between this store and another.
    pub fn max_distance(&self, other: &Self) -> f64 {
        self.z
            .iter()
            .zip(&other.z)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm()))
            .fold(0.0, f64::max)
    }
}

/// Where the electric field of a stage comes from.
#[derive(Clone, Copy)]
enum Sources<'a> {
    /// The same-stage positions of the run itself.
    Live,
    /// Fixed positions for all stages.
    Frozen(&'a [Vec3]),
    /// Stage positions of a previous run.
    Replay(&'a TrajectoryStore),
}

struct Stage {
    kz: Vec<Vec6>,
    km: Vec<Mat6>,
    kn: Vec<Mat6>,
    e_max: f64,
}

struct Solver<'a> {
    weights: &'a [f64],
    control: &'a ControlField,
    eps: Softening,
    opts: ForwardOptions,
    sources: Sources<'a>,
}

impl<'a> Solver<'a> {
    fn source_positions(&self, n: usize, s: usize, own: &[Vec6]) -> Vec<Vec3> {
        match self.sources {
            Sources::Live => own.iter().map(xpart).collect(),
            Sources::Frozen(x) => x.to_vec(),
            Sources::Replay(prev) => prev.stage_state(n, s).iter().map(xpart).collect(),
        }
    }

    fn stage(&self, n: usize, s: usize, t: f64, zs: &[Vec6], ms: &[Mat6], ns: &[Mat6]) -> Stage {
        let xs: Vec<Vec3> = zs.iter().map(xpart).collect();
        let samples: Vec<FieldSample> = if !self.opts.self_field {
            vec![FieldSample::zero(); zs.len()]
        } else {
            let src = self.source_positions(n, s, zs);
            if self.opts.variational {
                field_samples(&xs, &src, self.weights, self.eps, true)
            } else {
                field_values(&xs, &src, self.weights, self.eps, true)
                    .into_iter()
                    .map(|e| FieldSample { e, jac: Default::default() })
                    .collect()
            }
        };
        let e_max = samples.iter().map(|f| f.e.norm()).fold(0.0, f64::max);
        let out: Vec<(Vec6, Option<(Mat6, Mat6)>)> = (0..zs.len())
            .into_par_iter()
            .map(|p| {
                let (b, bj) = self.control.sample(t, &xs[p]);
                let kz = rhs_from_fields(&zs[p], &samples[p].e, &b);
                let mats = self.opts.variational.then(|| {
                    let a = system_matrix(&vpart(&zs[p]), &samples[p].jac, &b, &bj);
                    (a * ms[p], -(ns[p] * a))
                });
                (kz, mats)
            })
            .collect();
        let mut st = Stage {
            kz: Vec::with_capacity(zs.len()),
            km: Vec::new(),
            kn: Vec::new(),
            e_max,
        };
        for (kz, mats) in out {
            st.kz.push(kz);
            if let Some((km, kn)) = mats {
                st.km.push(km);
                st.kn.push(kn);
            }
        }
        st
    }

    fn run(&self, z0: &[Vec6], cfg: &RunConfig) -> Result<TrajectoryStore, ForwardError> {
        let n_steps = cfg.n_steps();
        let dt = cfg.t_final / n_steps as f64;
        let np = z0.len();
        let var = self.opts.variational;
        let eye = vec![Mat6::identity(); if var { np } else { 0 }];
        let mut store = TrajectoryStore {
            dt,
            times: (0..=n_steps).map(|n| n as f64 * dt).collect(),
            z: vec![z0.to_vec()],
            rhs: Vec::with_capacity(n_steps + 1),
            stages: Vec::with_capacity(n_steps),
            m: if var { vec![eye.clone()] } else { Vec::new() },
            ninv: if var { vec![eye.clone()] } else { Vec::new() },
            e_sup: Vec::with_capacity(n_steps + 1),
            control: self.control.clone(),
            weights: self.weights.to_vec(),
            softening: self.eps.value(),
            self_field: self.opts.self_field,
            grid_exits: 0,
        };
        let (mut z, mut m, mut nn) = (z0.to_vec(), eye.clone(), eye);
        let combine = |base: &[Vec6], k: &[Vec6], c: f64| -> Vec<Vec6> { base.iter().zip(k).map(|(a, b)| a + b * c).collect() };
        let combine_m = |base: &[Mat6], k: &[Mat6], c: f64| -> Vec<Mat6> { base.iter().zip(k).map(|(a, b)| a + b * c).collect() };
        for n in 0..n_steps {
            let t = n as f64 * dt;
            store.grid_exits += z.iter().filter(|zp| !self.control.inside_interior(&xpart(zp))).count();
            let k1 = self.stage(n, 0, t, &z, &m, &nn);
            let (z2, m2, n2) = (combine(&z, &k1.kz, 0.5 * dt), combine_m(&m, &k1.km, 0.5 * dt), combine_m(&nn, &k1.kn, 0.5 * dt));
            let k2 = self.stage(n, 1, t + 0.5 * dt, &z2, &m2, &n2);
            let (z3, m3, n3) = (combine(&z, &k2.kz, 0.5 * dt), combine_m(&m, &k2.km, 0.5 * dt), combine_m(&nn, &k2.kn, 0.5 * dt));
            let k3 = self.stage(n, 2, t + 0.5 * dt, &z3, &m3, &n3);
            let (z4, m4, n4) = (combine(&z, &k3.kz, dt), combine_m(&m, &k3.km, dt), combine_m(&nn, &k3.kn, dt));
            let k4 = self.stage(n, 3, t + dt, &z4, &m4, &n4);
            let w = dt / 6.0;
            let next: Vec<Vec6> = (0..np).map(|p| z[p] + (k1.kz[p] + (k2.kz[p] + k3.kz[p]) * 2.0 + k4.kz[p]) * w).collect();
            if let Some(p) = next.iter().position(|zp| !zp.iter().all(|c| c.is_finite())) {
                return Err(ForwardError::NonFinite { particle: p, step: n + 1 });
            }
            if var {
                m = (0..np).map(|p| m[p] + (k1.km[p] + (k2.km[p] + k3.km[p]) * 2.0 + k4.km[p]) * w).collect();
                nn = (0..np).map(|p| nn[p] + (k1.kn[p] + (k2.kn[p] + k3.kn[p]) * 2.0 + k4.kn[p]) * w).collect();
                store.m.push(m.clone());
                store.ninv.push(nn.clone());
            }
            store.rhs.push(k1.kz);
            store.e_sup.push(k1.e_max);
            store.stages.push([z2, z3, z4]);
            z = next;
            store.z.push(z.clone());
        }
        let last = self.stage(n_steps, 0, cfg.t_final, &z, &m, &nn);
        store.rhs.push(last.kz);
        store.e_sup.push(last.e_max);
        if store.grid_exits > 0 {
            log::warn!("{} particle-steps left the interior of the control grid", store.grid_exits);
        }
        Ok(store)
    }
}

pub fn run_forward(ens: &ParticleEnsemble, control: &ControlField, cfg: &RunConfig) -> Result<TrajectoryStore, ForwardError> {
    run_forward_with(ens, control, cfg, ForwardOptions::default())
}

pub fn run_forward_with(
    ens: &ParticleEnsemble,
    control: &ControlField,
    cfg: &RunConfig,
    opts: ForwardOptions,
) -> Result<TrajectoryStore, ForwardError> {
    check_inputs(control, cfg)?;
    let solver = Solver {
        weights: &ens.weights,
        control,
        eps: Softening::new(cfg.softening)?,
        opts,
        sources: Sources::Live,
    };
    solver.run(&ens.z0, cfg)
}

fn check_inputs(control: &ControlField, cfg: &RunConfig) -> Result<(), ForwardError> {
    cfg.validate().map_err(|e| ForwardError::Config(e.to_string()))?;
    if *control.grid() != cfg.field_grid || (control.t_final() - cfg.t_final).abs() > 1e-12 {
        return Err(ForwardError::Mismatch("control layout differs from the run configuration".into()));
    }
    Ok(())
}

/// Outcome of the Picard recursion: sup distances between successive iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardHistory {
    pub distances: Vec<f64>,
}

impl PicardHistory {
    pub fn ratios(&self) -> Vec<f64> {
        self.distances.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Picard recursion: each iterate integrates all characteristics in the
/// field generated by the previous iterate, replayed stage by stage.
/// Iterate 0 uses the field of the untransported initial ensemble.
pub fn run_forward_picard(
    ens: &ParticleEnsemble,
    control: &ControlField,
    cfg: &RunConfig,
    max_iters: usize,
    tol: f64,
) -> Result<(TrajectoryStore, PicardHistory), ForwardError> {
    if max_iters == 0 {
        return Err(ForwardError::Config("max_iters must be at least 1".into()));
    }
    check_inputs(control, cfg)?;
    let eps = Softening::new(cfg.softening)?;
    let x0 = ens.positions0();
    let base = Solver {
        weights: &ens.weights,
        control,
        eps,
        opts: ForwardOptions::default(),
        sources: Sources::Frozen(&x0),
    };
    let mut prev = base.run(&ens.z0, cfg)?;
    let mut history = PicardHistory { distances: Vec::new() };
    for _ in 0..max_iters {
        let next = Solver {
            sources: Sources::Replay(&prev),
            ..base
        }
        .run(&ens.z0, cfg)?;
        let d = next.max_distance(&prev);
        history.distances.push(d);
        prev = next;
        if d < tol {
            return Ok((prev, history));
        }
    }
    Err(ForwardError::PicardNoConvergence(history.distances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample_ensemble;
    use vpc_model::{AdmissibleSpec, BumpSum, CompactBump, CutoffSpec, FieldGridSpec};

    pub(crate) fn small_cfg(t: f64, dt: f64) -> RunConfig {
        RunConfig {
            t_final: t,
            dt,
            softening: 0.2,
            sample_spacing: 0.5,
            weight_floor: 0.0,
            field_grid: FieldGridSpec {
                origin: [-4.0; 3],
                spacing: [1.0; 3],
                dims: [9; 3],
                n_time_knots: 3,
            },
            lambda: 0.0,
            admissible: AdmissibleSpec { k: 100.0, beta: 4.0 },
            cutoff: CutoffSpec::new(6.0, 12.0).unwrap(),
        }
    }

    fn ens() -> ParticleEnsemble {
        let d = BumpSum::single(CompactBump::new([0.0; 6], 0.8, 0.8, 1.0, 3).unwrap());
        sample_ensemble(&d, 0.4, 0.0).unwrap()
    }

    #[test]
    fn symmetric_datum_keeps_center_of_mass() {
        let cfg = small_cfg(0.5, 0.05);
        let e = ens();
        let b = ControlField::zeros(cfg.field_grid, cfg.t_final);
        let tr = run_forward(&e, &b, &cfg).unwrap();
        let total: f64 = e.weights.iter().sum();
        for zs in &tr.z {
            let com = zs.iter().zip(&e.weights).fold(Vec6::zeros(), |acc, (z, w)| acc + z * *w) / total;
            assert!(com.amax() < 1e-6);
        }
    }

    #[test]
    fn self_field_conserves_momentum() {
        let cfg = small_cfg(0.5, 0.05);
        let d = BumpSum::single(CompactBump::new([0.1, 0.0, 0.0, 0.3, 0.0, -0.2], 0.8, 0.8, 1.0, 3).unwrap());
        let e = sample_ensemble(&d, 0.4, 0.0).unwrap();
        let b = ControlField::zeros(cfg.field_grid, cfg.t_final);
        let tr = run_forward(&e, &b, &cfg).unwrap();
        let momentum = |zs: &[Vec6]| zs.iter().zip(&e.weights).fold(Vec3::zeros(), |acc, (z, w)| acc + vpart(z) * *w);
        let p0 = momentum(&tr.z[0]);
        for zs in &tr.z {
            assert!((momentum(zs) - p0).norm() <= 1e-6 * p0.norm() * cfg.t_final);
        }
    }

    #[test]
    fn tracer_limit_is_larmor_rotation() {
        let cfg = small_cfg(1.0, 0.01);
        let e = ens();
        let b = ControlField::from_fn(cfg.field_grid, cfg.t_final, |_, _| Vec3::new(0.0, 0.0, 1.5));
        let opts = ForwardOptions {
            variational: false,
            self_field: false,
        };
        let tr = run_forward_with(&e, &b, &cfg, opts).unwrap();
        for (z0, z1) in e.z0.iter().zip(tr.final_z()) {
            let v0 = vpart(z0);
            let (c, s) = (1.5f64.cos(), 1.5f64.sin());
            // v̇ = v × B rotates (v₁, v₂) clockwise about e₃
            let expect = Vec3::new(c * v0[0] + s * v0[1], -s * v0[0] + c * v0[1], v0[2]);
            assert!((vpart(z1) - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn single_particle_has_no_self_force() {
        let cfg = small_cfg(0.4, 0.1);
        let d = BumpSum::single(CompactBump::new([0.0; 6], 1.0, 1.0, 1.0, 3).unwrap());
        let z = Vec6::new(0.1, 0.0, 0.0, 0.2, 0.0, 0.0);
        let e = ParticleEnsemble::from_points(&d, vec![z], 0.5).unwrap();
        let b = ControlField::zeros(cfg.field_grid, cfg.t_final);
        let tr = run_forward(&e, &b, &cfg).unwrap();
        assert!((tr.final_z()[0] - Vec6::new(0.18, 0.0, 0.0, 0.2, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(tr.e_sup.iter().copied().fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn hermite_interpolation_is_exact_for_free_flight() {
        let cfg = small_cfg(0.4, 0.1);
        let d = BumpSum::single(CompactBump::new([0.0; 6], 1.0, 1.0, 1.0, 3).unwrap());
        let z = Vec6::new(0.1, 0.0, 0.0, 0.2, -0.1, 0.0);
        let e = ParticleEnsemble::from_points(&d, vec![z], 0.5).unwrap();
        let b = ControlField::zeros(cfg.field_grid, cfg.t_final);
        let tr = run_forward(&e, &b, &cfg).unwrap();
        let mid = tr.interpolate(1, 0.5, 0);
        assert!((xpart(&mid) - (xpart(&z) + vpart(&z) * 0.15)).norm() < 1e-15);
    }

    #[test]
    fn picard_rejects_zero_iterations() {
        let cfg = small_cfg(0.2, 0.1);
        let b = ControlField::zeros(cfg.field_grid, cfg.t_final);
        assert!(run_forward_picard(&ens(), &b, &cfg, 0, 1e-10).is_err());
    }
}
