use std::collections::BTreeMap;

use vpc_model::{BumpSum, Mat6, Vec6};

use crate::{ParticleEnsemble, TrajectoryStore};

/// max_p |z_p(t_n)|.
pub fn support_radius(traj: &TrajectoryStore, n: usize) -> f64 {
    traj.z[n].iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Mean of |det M_p(t_n) − 1| over particles.
pub fn det_deviation(traj: &TrajectoryStore, n: usize) -> f64 {
    let m = &traj.m[n];
    m.iter().map(|a| (a.determinant() - 1.0).abs()).sum::<f64>() / m.len() as f64
}

/// max_p ∥M_p N_p − I∥_max at t_n.
pub fn inverse_deviation(traj: &TrajectoryStore, n: usize) -> f64 {
    traj.m[n]
        .iter()
        .zip(&traj.ninv[n])
        .map(|(m, k)| (m * k - Mat6::identity()).amax())
        .fold(0.0, f64::max)
}

/// Grid estimate of ∥f(t_n)∥₂ from the particle representation.
///
/// Each particle owns the image of its lattice cell under the linearized
/// flow. A node z of the 6D grid of spacing `h_grid` belongs to the particle
/// p whose pulled-back offset y = N_p(z − z_p) is smallest in max-norm,
/// provided |y|_∞ ≤ h_s/2; the reconstruction there is f̊(z⁰_p + y).
pub fn redeposited_l2_norm(ens: &ParticleEnsemble, datum: &BumpSum, traj: &TrajectoryStore, n: usize, h_grid: f64) -> f64 {
    let half = 0.5 * ens.spacing;
    let mut best: BTreeMap<[i64; 6], (f64, f64)> = BTreeMap::new();
    for p in 0..ens.len() {
        let zp = traj.z[n][p];
        let (m, ninv) = (&traj.m[n][p], &traj.ninv[n][p]);
        // Eulerian half-extent of the mapped cell along each axis
        let ext: Vec6 = Vec6::from_fn(|i, _| (0..6).map(|j| m[(i, j)].abs()).sum::<f64>() * half);
        let lo: [i64; 6] = std::array::from_fn(|i| ((zp[i] - ext[i]) / h_grid).ceil() as i64);
        let hi: [i64; 6] = std::array::from_fn(|i| ((zp[i] + ext[i]) / h_grid).floor() as i64);
        if (0..6).any(|i| lo[i] > hi[i]) {
            continue;
        }
        // rest[k] bounds Σ_{j≥k} N_ij (z_j − z_pj) over the remaining box
        let mut rest = [(Vec6::zeros(), Vec6::zeros()); 7];
        for k in (0..6).rev() {
            let (a, b) = (lo[k] as f64 * h_grid - zp[k], hi[k] as f64 * h_grid - zp[k]);
            let (mut rl, mut rh) = rest[k + 1];
            for i in 0..6 {
                let (u, v) = (ninv[(i, k)] * a, ninv[(i, k)] * b);
                rl[i] += u.min(v);
                rh[i] += u.max(v);
            }
            rest[k] = (rl, rh);
        }
        let cell = Cell { zp, ninv, lo, hi, rest, half, h: h_grid };
        let mut idx = lo;
        cell.visit(0, Vec6::zeros(), &mut idx, &mut |idx, y| {
            let d = y.amax();
            let f = datum.eval(&(ens.z0[p] + y));
            let e = best.entry(*idx).or_insert((f64::INFINITY, 0.0));
            if d < e.0 {
                *e = (d, f);
            }
        });
    }
    let vol = h_grid.powi(6);
    best.values().map(|(_, f)| f * f * vol).sum::<f64>().sqrt()
}

/// Lattice nodes inside one mapped cell, enumerated axis by axis with
/// interval pruning of the pulled-back offset.
struct Cell<'a> {
    zp: Vec6,
    ninv: &'a Mat6,
    lo: [i64; 6],
    hi: [i64; 6],
    rest: [(Vec6, Vec6); 7],
    half: f64,
    h: f64,
}

impl Cell<'_> {
    fn visit(&self, k: usize, acc: Vec6, idx: &mut [i64; 6], emit: &mut impl FnMut(&[i64; 6], &Vec6)) {
        let (rl, rh) = &self.rest[k];
        if (0..6).any(|i| acc[i] + rl[i] > self.half || acc[i] + rh[i] < -self.half) {
            return;
        }
        if k == 6 {
            emit(idx, &acc);
            return;
        }
        for j in self.lo[k]..=self.hi[k] {
            idx[k] = j;
            let dz = j as f64 * self.h - self.zp[k];
            self.visit(k + 1, acc + self.ninv.column(k) * dz, idx, emit);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{run_forward, sample_ensemble, ControlField};
    use vpc_model::{AdmissibleSpec, CompactBump, CutoffSpec, FieldGridSpec, RunConfig};

    #[test]
    fn redeposition_at_start_matches_analytic_norm() {
        let d = BumpSum::single(CompactBump::new([0.0; 6], 1.0, 1.0, 1.0, 3).unwrap());
        let ens = sample_ensemble(&d, 0.5, 0.0).unwrap();
        let cfg = RunConfig {
            t_final: 0.1,
            dt: 0.1,
            softening: 0.1,
            sample_spacing: 0.5,
            weight_floor: 0.0,
            field_grid: FieldGridSpec {
                origin: [-4.0; 3],
                spacing: [1.0; 3],
                dims: [9; 3],
                n_time_knots: 2,
            },
            lambda: 0.0,
            admissible: AdmissibleSpec { k: 1.0, beta: 4.0 },
            cutoff: CutoffSpec::new(5.0, 10.0).unwrap(),
        };
        let tr = run_forward(&ens, &ControlField::zeros(cfg.field_grid, cfg.t_final), &cfg).unwrap();
        let est = redeposited_l2_norm(&ens, &d, &tr, 0, 0.25);
        let exact = d.l2_norm_squared().sqrt();
        assert!((est / exact - 1.0).abs() < 0.01, "{est} vs {exact}");
        assert!(support_radius(&tr, 0) <= d.support_radius());
        assert_eq!(det_deviation(&tr, 0), 0.0);
    }
}
