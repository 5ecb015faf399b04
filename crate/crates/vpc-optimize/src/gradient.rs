use vpc_forward::{ControlField, StencilEntry, TrajectoryStore};
use vpc_model::Vec3;
use vpc_sensitivity::{ControlSource, CostateStore};

use crate::OptimizeError;

/// Riesz representative of J′(B) on the control grid, with respect to
/// ⟨A, H⟩ = Σ_k τ_k ΔV Σ_i A_i·H_i.
pub type GradientField = ControlField;

fn rebuild(layout: &ControlField, mut values: Vec<Vec3>) -> ControlField {
    let nodes = layout.grid().node_count();
    for (i, v) in values.iter_mut().enumerate() {
        if layout.is_boundary(layout.unflatten(i % nodes)) {
            *v = Vec3::zeros();
        }
    }
    ControlField::from_values(*layout.grid(), layout.t_final(), values).expect("finite values on the control layout")
}

/// Seven-point −Δ_h with zero Dirichlet data, per knot.
pub fn neg_laplacian(b: &ControlField) -> ControlField {
    let grid = *b.grid();
    let nodes = grid.node_count();
    let inv_h2 = grid.spacing.map(|h| 1.0 / (h * h));
    let mut out = vec![Vec3::zeros(); b.values().len()];
    for k in 0..b.n_knots() {
        let vals = b.knot_values(k);
        for node in 0..nodes {
            let ijk = b.unflatten(node);
            if b.is_boundary(ijk) {
                continue;
            }
            let mut acc = Vec3::zeros();
            for a in 0..3 {
                let (mut lo, mut hi) = (ijk, ijk);
                lo[a] -= 1;
                hi[a] += 1;
                acc += (vals[node] * 2.0 - vals[b.flatten(lo)] - vals[b.flatten(hi)]) * inv_h2[a];
            }
            out[k * nodes + node] = acc;
        }
    }
    rebuild(b, out)
}

/// Riesz representative of H ↦ Σ weight·Σ_p s_p·H(t, x_p): the transpose
/// of interpolation, divided by the knot quadrature weight and ΔV.
pub fn deposit_sources(sources: &[ControlSource], layout: &ControlField) -> GradientField {
    let mut out = vec![Vec3::zeros(); layout.values().len()];
    let mut stencil: Vec<StencilEntry> = Vec::with_capacity(16);
    for src in sources {
        for (x, s) in src.x.iter().zip(&src.s) {
            layout.stencil(src.t, x, &mut stencil);
            for e in &stencil {
                out[e.index] += s * (src.weight * e.weight);
            }
        }
    }
    let nodes = layout.grid().node_count();
    let tau = layout.knot_weights();
    let dv = layout.cell_volume();
    for (i, v) in out.iter_mut().enumerate() {
        *v /= tau[i / nodes] * dv;
    }
    rebuild(layout, out)
}

/// λ(−Δ_h B) plus the deposited costate sources.
pub fn assemble_gradient(traj: &TrajectoryStore, costate: &CostateStore, b: &ControlField, lambda: f64) -> Result<GradientField, OptimizeError> {
    if !b.same_layout(&traj.control) {
        return Err(OptimizeError::Mismatch("control and run use different grids".into()));
    }
    if costate.times.len() != traj.times.len() {
        return Err(OptimizeError::Mismatch("costate and run have different step counts".into()));
    }
    let tracking = deposit_sources(&costate.sources, b);
    if lambda == 0.0 {
        return Ok(tracking);
    }
    Ok(tracking.axpy(lambda, &neg_laplacian(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularization;
    use vpc_model::FieldGridSpec;

    fn grid() -> FieldGridSpec {
        FieldGridSpec {
            origin: [0.0; 3],
            spacing: [0.5, 0.4, 0.25],
            dims: [8, 9, 10],
            n_time_knots: 3,
        }
    }

    #[test]
    fn sine_mode_has_the_discrete_symbol() {
        let g = grid();
        let m = [1.0, 2.0, 1.0];
        let len: [f64; 3] = std::array::from_fn(|a| g.spacing[a] * (g.dims[a] - 1) as f64);
        let mode = |x: &Vec3| (0..3).map(|a| (std::f64::consts::PI * m[a] * x[a] / len[a]).sin()).product::<f64>();
        let b = ControlField::from_fn(g, 1.0, |t, x| Vec3::new(1.0, -2.0, 0.5 + t) * mode(x));
        let symbol: f64 = (0..3)
            .map(|a| {
                let s = (std::f64::consts::PI * m[a] * g.spacing[a] / (2.0 * len[a])).sin();
                4.0 * s * s / (g.spacing[a] * g.spacing[a])
            })
            .sum();
        let lap = neg_laplacian(&b);
        for (l, v) in lap.values().iter().zip(b.values()) {
            assert!((l - v * symbol).norm() < 1e-10);
        }
    }

    #[test]
    fn regularization_gradient_is_the_laplacian() {
        let g = grid();
        let b = ControlField::from_fn(g, 1.0, |t, x| Vec3::new(x[0] * x[1], (x[2] + t).cos(), x[0] - x[2]));
        let h = ControlField::from_fn(g, 1.0, |t, x| Vec3::new(x[2].sin(), t * x[0], 1.0));
        let lam = 0.3;
        // quadratic form: the central difference is exact up to rounding
        let d = 1e-3;
        let fd = (regularization(&b.axpy(d, &h), lam) - regularization(&b.axpy(-d, &h), lam)) / (2.0 * d);
        let exact = neg_laplacian(&b).scaled(lam).inner(&h);
        assert!((fd - exact).abs() <= 1e-10 * exact.abs());
    }

    #[test]
    fn deposition_is_dual_to_interpolation() {
        let g = grid();
        let h = ControlField::from_fn(g, 1.0, |t, x| Vec3::new(x[1], t - x[0], x[2] * x[0]));
        let src = vec![
            ControlSource {
                t: 0.3,
                weight: 0.1,
                x: vec![Vec3::new(1.2, 1.1, 0.9), Vec3::new(2.0, 0.5, 1.7)],
                s: vec![Vec3::new(1.0, 2.0, -1.0), Vec3::new(0.5, 0.0, 3.0)],
            },
            ControlSource {
                t: 1.0,
                weight: 0.2,
                x: vec![Vec3::new(0.8, 2.4, 1.0)],
                s: vec![Vec3::new(-1.0, 1.0, 1.0)],
            },
        ];
        let direct: f64 = src
            .iter()
            .map(|c| c.weight * c.x.iter().zip(&c.s).map(|(x, s)| s.dot(&h.value(c.t, x))).sum::<f64>())
            .sum();
        let dep = deposit_sources(&src, &h);
        assert!((dep.inner(&h) - direct).abs() < 1e-12);
    }
}
