use vpc_forward::ControlField;
use vpc_model::{AdmissibleSpec, Vec3};

fn time_l2(b: &ControlField, per_knot: impl Fn(&[Vec3]) -> f64) -> f64 {
    let tau = b.knot_weights();
    (0..b.n_knots()).map(|k| tau[k] * per_knot(b.knot_values(k)).powi(2)).sum::<f64>().sqrt()
}

/// Grid W^{2,β} norm of one knot: value, forward first differences, pure
/// second differences and mixed differences, each multi-index counted once.
fn w2_knot(b: &ControlField, vals: &[Vec3], beta: f64) -> f64 {
    let grid = b.grid();
    let (dims, h) = (grid.dims, grid.spacing);
    let inside = |ijk: [usize; 3], a: usize, step: isize| -> Option<usize> {
        let j = ijk[a] as isize + step;
        (j >= 0 && (j as usize) < dims[a]).then(|| {
            let mut o = ijk;
            o[a] = j as usize;
            b.flatten(o)
        })
    };
    let mut s = 0.0;
    for node in 0..grid.node_count() {
        let ijk = b.unflatten(node);
        let v = vals[node];
        s += v.norm().powf(beta);
        for a in 0..3 {
            if let Some(up) = inside(ijk, a, 1) {
                s += ((vals[up] - v) / h[a]).norm().powf(beta);
            }
            if let (Some(up), Some(dn)) = (inside(ijk, a, 1), inside(ijk, a, -1)) {
                s += ((vals[up] - v * 2.0 + vals[dn]) / (h[a] * h[a])).norm().powf(beta);
            }
            for c in a + 1..3 {
                if let (Some(ua), Some(uc)) = (inside(ijk, a, 1), inside(ijk, c, 1)) {
                    let mut both = ijk;
                    both[a] += 1;
                    both[c] += 1;
                    let d = vals[b.flatten(both)] - vals[ua] - vals[uc] + v;
                    s += (d / (h[a] * h[c])).norm().powf(beta);
                }
            }
        }
    }
    (s * b.cell_volume()).powf(1.0 / beta)
}

/// L²-in-time of the grid W^{2,β} norm.
pub fn w2_norm(b: &ControlField, beta: f64) -> f64 {
    time_l2(b, |vals| w2_knot(b, vals, beta))
}

/// L²-in-time of the grid H¹ norm.
pub fn h1_norm(b: &ControlField) -> f64 {
    let grid = *b.grid();
    time_l2(b, |vals| {
        let mut s = 0.0;
        for node in 0..grid.node_count() {
            let ijk = b.unflatten(node);
            s += vals[node].norm_squared();
            for a in 0..3 {
                if ijk[a] + 1 < grid.dims[a] {
                    let mut up = ijk;
                    up[a] += 1;
                    s += ((vals[b.flatten(up)] - vals[node]) / grid.spacing[a]).norm_squared();
                }
            }
        }
        (s * b.cell_volume()).sqrt()
    })
}

/// ∥B∥_V surrogate: W^{2,β} part plus H¹ part.
pub fn discrete_v_norm(b: &ControlField, beta: f64) -> f64 {
    w2_norm(b, beta) + h1_norm(b)
}

/// Radial retraction onto ∥B∥_V ≤ K.
pub fn project_admissible(b: &ControlField, spec: &AdmissibleSpec) -> ControlField {
    let n = discrete_v_norm(b, spec.beta);
    if n <= spec.k {
        b.clone()
    } else {
        b.scaled(spec.k / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use vpc_model::FieldGridSpec;

    fn unit_grid() -> FieldGridSpec {
        FieldGridSpec {
            origin: [0.0; 3],
            spacing: [1.0; 3],
            dims: [6; 3],
            n_time_knots: 3,
        }
    }

    #[test]
    fn impulse_norm_by_hand() {
        let mut b = ControlField::zeros(unit_grid(), 1.0);
        b.set(1, [2, 3, 2], Vec3::new(1.0, 0.0, 0.0));
        // value 1; six first differences of 1; per axis second differences
        // 1, −2, 1; four mixed differences of ±1 for each of three pairs
        let w = (1.0 + 6.0 + 3.0 * (16.0 + 2.0) + 12.0f64).powf(0.25);
        let h = 7.0f64.sqrt();
        let expect = 0.5f64.sqrt() * (w + h);
        assert!((discrete_v_norm(&b, 4.0) - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_field_has_zero_norm() {
        assert_eq!(discrete_v_norm(&ControlField::zeros(unit_grid(), 1.0), 4.0), 0.0);
    }

    fn field(a: f64, c: f64) -> ControlField {
        ControlField::from_fn(unit_grid(), 1.0, move |t, x| Vec3::new(a * x[0] * x[1], (c * x[2] + t).sin(), a - c * x[0]))
    }

    proptest! {
        #[test]
        fn homogeneous(a in -2.0..2.0f64, c in -2.0..2.0f64, s in -3.0..3.0f64) {
            let b = field(a, c);
            let n = discrete_v_norm(&b, 4.5);
            prop_assert!((discrete_v_norm(&b.scaled(s), 4.5) - s.abs() * n).abs() <= 1e-12 * (1.0 + n));
        }

        #[test]
        fn projection_is_feasible_idempotent_and_non_expanding(a in -2.0..2.0f64, c in -2.0..2.0f64, k in 0.1..50.0f64) {
            let spec = AdmissibleSpec { k, beta: 4.0 };
            let b = field(a, c);
            let p = project_admissible(&b, &spec);
            let np = discrete_v_norm(&p, 4.0);
            prop_assert!(np <= k * (1.0 + 1e-12));
            prop_assert!(np <= discrete_v_norm(&b, 4.0) * (1.0 + 1e-12));
            let pp = project_admissible(&p, &spec);
            for (u, v) in pp.values().iter().zip(p.values()) {
                prop_assert!((u - v).norm() <= 1e-12 * (1.0 + v.norm()));
            }
        }
    }

    #[test]
    fn projection_halves_a_field_of_norm_2k() {
        let b = field(1.0, 0.5);
        let n = discrete_v_norm(&b, 4.0);
        let spec = AdmissibleSpec { k: 0.5 * n, beta: 4.0 };
        let p = project_admissible(&b, &spec);
        for (u, v) in p.values().iter().zip(b.values()) {
            assert!((u - v * 0.5).norm() < 1e-15);
        }
        let inside = AdmissibleSpec { k: 2.0 * n, beta: 4.0 };
        assert_eq!(project_admissible(&b, &inside), b);
    }
}
