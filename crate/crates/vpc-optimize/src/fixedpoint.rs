//! Damped fixed-point iteration for the optimality system
//!
//!   λ(−Δ_h B) + D[B] = 0,
//!
//! where D[B] is the deposited costate density of the run with control B.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vpc_forward::{ControlField, ForwardError};
use vpc_kernels::{eval_vector_newton, Softening, WeightedSource};
use vpc_model::Vec3;
use vpc_sensitivity::ControlSource;

use crate::{deposit_sources, invalid, neg_laplacian, Evaluation, IterRecord, OptimizeError, Problem};

/// How B is recovered from the density D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedPointMode {
    /// Solve −Δ_h B = −D/λ on the grid; the fixed point then zeroes the
    /// discrete gradient exactly.
    #[default]
    Lattice,
    /// B = −(1/4πλ) Σ s_p ψ_ε(x − x_p), the softened Newton potential of the
    /// particle sources, sampled at the nodes.
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointSettings {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub mode: FixedPointMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointStatus {
    Converged,
    MaxIters,
    /// The update grew beyond ten times the first one.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome {
    pub control: ControlField,
    /// Sup-norm of B^{k+1} − B^k.
    pub residuals: Vec<f64>,
    pub history: Vec<IterRecord>,
    pub status: FixedPointStatus,
    /// First-order residual at the returned control.
    pub first_order: f64,
}

/// sup|J′(B)| / max(sup|λΔ_hB|, sup|D|): zero exactly at a discrete critical point.
pub fn first_order_residual(ev: &Evaluation, b: &ControlField, lambda: f64) -> f64 {
    let d = deposit_sources(&ev.costate.sources, b).max_abs();
    let l = neg_laplacian(b).max_abs() * lambda;
    let scale = d.max(l);
    if scale == 0.0 {
        0.0
    } else {
        ev.gradient.max_abs() / scale
    }
}

pub fn fixed_point_iterate(problem: &Problem, initial: &ControlField, set: &FixedPointSettings) -> Result<FixedPointOutcome, OptimizeError> {
    let lambda = problem.lambda();
    if !(lambda > 0.0) {
        return Err(invalid("lambda", "the fixed-point map needs lambda > 0"));
    }
    if !(set.damping > 0.0 && set.damping <= 1.0) {
        return Err(invalid("damping", "must lie in (0, 1]"));
    }
    if set.max_iters == 0 {
        return Err(invalid("max_iters", "must be at least 1"));
    }
    let mut b = initial.clone();
    let mut residuals = Vec::new();
    let mut history = Vec::new();
    let mut status = FixedPointStatus::MaxIters;
    for iter in 0..set.max_iters {
        let ev = problem.evaluate(&b)?;
        let target = match set.mode {
            FixedPointMode::Lattice => lattice_solve(&deposit_sources(&ev.costate.sources, &b).scaled(-1.0 / lambda)),
            FixedPointMode::Kernel => kernel_field(&ev.costate.sources, &b, lambda, Softening::new(problem.cfg.softening).map_err(ForwardError::from)?),
        };
        let next = b.scaled(1.0 - set.damping).axpy(set.damping, &target);
        let r = next.axpy(-1.0, &b).max_abs();
        history.push(IterRecord {
            iter,
            j: ev.cost.total,
            tracking: ev.cost.tracking,
            reg: ev.cost.regularization,
            grad_norm: ev.gradient.norm(),
            step: set.damping,
            residual: r,
        });
        residuals.push(r);
        log::info!("fixed-point iteration {iter}: residual {r:.3e}");
        b = next;
        if r < set.tol {
            status = FixedPointStatus::Converged;
            break;
        }
        if r > 10.0 * residuals[0] {
            status = FixedPointStatus::Diverged;
            break;
        }
    }
    let ev = problem.evaluate(&b)?;
    let first_order = first_order_residual(&ev, &b, lambda);
    Ok(FixedPointOutcome {
        control: b,
        residuals,
        history,
        status,
        first_order,
    })
}

/// Solve −Δ_h u = rhs on the interior nodes of every knot (zero boundary),
/// by conjugate gradients per component.
fn lattice_solve(rhs: &ControlField) -> ControlField {
    let nodes = rhs.grid().node_count();
    let interior: Vec<usize> = (0..nodes).filter(|&i| !rhs.is_boundary(rhs.unflatten(i))).collect();
    let h2 = rhs.grid().spacing.map(|h| 1.0 / (h * h));
    let neighbors: Vec<[(usize, usize); 3]> = interior
        .iter()
        .map(|&i| {
            let ijk = rhs.unflatten(i);
            std::array::from_fn(|a| {
                let (mut lo, mut hi) = (ijk, ijk);
                lo[a] -= 1;
                hi[a] += 1;
                (rhs.flatten(lo), rhs.flatten(hi))
            })
        })
        .collect();
    let apply = |u: &[f64], out: &mut [f64]| {
        for (m, &i) in interior.iter().enumerate() {
            let mut acc = 0.0;
            for a in 0..3 {
                let (lo, hi) = neighbors[m][a];
                acc += (2.0 * u[i] - u[lo] - u[hi]) * h2[a];
            }
            out[i] = acc;
        }
    };
    let mut values = vec![Vec3::zeros(); rhs.values().len()];
    for k in 0..rhs.n_knots() {
        for c in 0..3 {
            let b: Vec<f64> = rhs.knot_values(k).iter().map(|v| v[c]).collect();
            let u = conjugate_gradient(&apply, &b, &interior);
            for i in 0..nodes {
                values[k * nodes + i][c] = u[i];
            }
        }
    }
    ControlField::from_values(*rhs.grid(), rhs.t_final(), values).expect("interior solution")
}

fn conjugate_gradient(apply: &impl Fn(&[f64], &mut [f64]), b: &[f64], active: &[usize]) -> Vec<f64> {
    let n = b.len();
    let dot = |x: &[f64], y: &[f64]| active.iter().map(|&i| x[i] * y[i]).sum::<f64>();
    let mut u = vec![0.0; n];
    let mut r = vec![0.0; n];
    for &i in active {
        r[i] = b[i];
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let stop = rr * 1e-30;
    for _ in 0..10 * active.len().max(1) {
        if rr <= stop || rr == 0.0 {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for &i in active {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let next = dot(&r, &r);
        let beta = next / rr;
        rr = next;
        for &i in active {
            p[i] = r[i] + beta * p[i];
        }
    }
    u
}

/// −(1/(4πλτ_k)) Σ_stages weight·hat_k(t)·Σ_p s_p ψ_ε(x − x_p) at each node.
fn kernel_field(sources: &[ControlSource], layout: &ControlField, lambda: f64, eps: Softening) -> ControlField {
    let grid = *layout.grid();
    let nodes = grid.node_count();
    let tau = layout.knot_weights();
    let n_knots = layout.n_knots();
    let mut values = vec![Vec3::zeros(); layout.values().len()];
    for k in 0..n_knots {
        let mut pos = Vec::new();
        let mut w = Vec::new();
        for src in sources {
            let s = src.t / layout.t_final() * (n_knots - 1) as f64;
            let hat = (1.0 - (s - k as f64).abs()).max(0.0);
            if hat > 0.0 {
                pos.extend_from_slice(&src.x);
                w.extend(src.s.iter().map(|s| s * (src.weight * hat)));
            }
        }
        let ws = WeightedSource::new(&pos, &w).expect("lengths agree");
        let scale = -1.0 / (4.0 * std::f64::consts::PI * lambda * tau[k]);
        let knot: Vec<Vec3> = (0..nodes)
            .into_par_iter()
            .map(|i| {
                let ijk = layout.unflatten(i);
                if layout.is_boundary(ijk) {
                    Vec3::zeros()
                } else {
                    eval_vector_newton(&ws, &layout.node_position(ijk), eps) * scale
                }
            })
            .collect();
        values[k * nodes..(k + 1) * nodes].copy_from_slice(&knot);
    }
    ControlField::from_values(grid, layout.t_final(), values).expect("finite kernel field")
}

#[cfg(test)]
mod tests {
    use super::*;
    use vpc_model::FieldGridSpec;

    #[test]
    fn lattice_solve_inverts_the_laplacian() {
        let g = FieldGridSpec {
            origin: [0.0; 3],
            spacing: [0.5, 0.3, 0.4],
            dims: [7, 8, 6],
            n_time_knots: 2,
        };
        let u = ControlField::from_fn(g, 1.0, |t, x| Vec3::new(x[0] * x[1] - t, (x[2] * 3.0).sin(), 1.0));
        let back = lattice_solve(&neg_laplacian(&u));
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
