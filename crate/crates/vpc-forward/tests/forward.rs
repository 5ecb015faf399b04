use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpc_charflow::{integrate_flow, support_bound_zeta};
use vpc_forward::io::{read_trajectory, write_trajectory, Provenance};
use vpc_forward::*;
use vpc_kernels::Softening;
use vpc_model::*;

fn cfg(t: f64, dt: f64) -> RunConfig {
    RunConfig {
        t_final: t,
        dt,
        softening: 0.15,
        sample_spacing: 0.4,
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

fn datum() -> BumpSum {
    BumpSum::single(CompactBump::new([0.1, 0.0, -0.1, 0.3, 0.0, 0.2], 0.8, 0.8, 1.0, 3).unwrap())
}

fn ensemble() -> ParticleEnsemble {
    sample_ensemble(&datum(), 0.4, 0.0).unwrap()
}

fn uniform_b(c: &RunConfig, b: f64) -> ControlField {
    ControlField::from_fn(c.field_grid, c.t_final, |_, _| Vec3::new(0.0, 0.0, b))
}

fn max_final_gap(a: &TrajectoryStore, b: &TrajectoryStore) -> f64 {
    a.final_z().iter().zip(b.final_z()).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}

#[test]
fn halving_dt_gains_fourth_order() {
    let ens = ensemble();
    let runs: Vec<TrajectoryStore> = [0.05, 0.025, 0.0125]
        .iter()
        .map(|&dt| {
            let c = cfg(0.5, dt);
            run_forward_with(&ens, &uniform_b(&c, 1.0), &c, ForwardOptions { variational: false, self_field: true }).unwrap()
        })
        .collect();
    let e1 = max_final_gap(&runs[0], &runs[1]);
    let e2 = max_final_gap(&runs[1], &runs[2]);
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
}

#[test]
fn picard_contracts_and_matches_direct() {
    let ens = ensemble();
    let c = cfg(0.5, 0.05);
    let b = uniform_b(&c, 1.0);
    let direct = run_forward(&ens, &b, &c).unwrap();
    let (picard, hist) = run_forward_picard(&ens, &b, &c, 30, 1e-12).unwrap();
    assert!(hist.ratios().iter().all(|r| *r < 0.8), "{:?}", hist.ratios());
    let fine = run_forward(&ens, &b, &c.refined()).unwrap();
    let refinement = max_final_gap(&direct, &fine);
    assert!(picard.max_distance(&direct) <= 2.0 * refinement);
}

#[test]
fn picard_reports_history_without_convergence() {
    let c = cfg(0.5, 0.05);
    match run_forward_picard(&ensemble(), &uniform_b(&c, 1.0), &c, 2, 0.0) {
        Err(ForwardError::PicardNoConvergence(d)) => assert_eq!(d.len(), 2),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn final_state_is_lipschitz_in_the_control() {
    let ens = ensemble();
    let c = cfg(0.5, 0.05);
    let b = uniform_b(&c, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let coeffs: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h = ControlField::from_fn(c.field_grid, c.t_final, |t, x| {
        let s = (x[0] * coeffs[6]).sin() + t * coeffs[7];
        Vec3::new(coeffs[0] + coeffs[1] * s, coeffs[2] + coeffs[3] * x[2], coeffs[4] + coeffs[5] * s * coeffs[8])
    });
    let opts = ForwardOptions { variational: false, self_field: true };
    let base = run_forward_with(&ens, &b, &c, opts).unwrap();
    let deltas = [1e-1, 1e-2, 1e-3];
    let gaps: Vec<f64> = deltas
        .iter()
        .map(|&d| max_final_gap(&base, &run_forward_with(&ens, &b.axpy(d, &h), &c, opts).unwrap()))
        .collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = deltas.iter().zip(&gaps).map(|(d, g)| (d.ln(), g.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / 3.0, ly.iter().sum::<f64>() / 3.0);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() <= 0.1, "slope {slope}, gaps {gaps:?}");
}

#[test]
fn support_stays_inside_zeta() {
    let ens = ensemble();
    let c = cfg(1.0, 0.05);
    let tr = run_forward(&ens, &uniform_b(&c, 2.0), &c).unwrap();
    let r0 = support_radius(&tr, 0);
    let a = tr.electric_norm();
    for n in 0..=tr.n_steps() {
        assert!(support_radius(&tr, n) <= support_bound_zeta(r0, tr.times[n], a));
    }
    assert!(r0 <= datum().support_radius());
}

#[test]
fn norms_are_conserved_and_redeposition_agrees() {
    let ens = ensemble();
    let c = cfg(0.5, 0.05);
    let tr = run_forward(&ens, &uniform_b(&c, 1.0), &c).unwrap();
    for p in [1.0, 2.0, 3.5, f64::INFINITY] {
        // the quadrature is evaluated from the same weights at every time
        assert_eq!(lp_norm(&ens, p).unwrap().to_bits(), lp_norm(&ens, p).unwrap().to_bits());
    }
    let est = redeposited_l2_norm(&ens, &datum(), &tr, tr.n_steps(), 0.2);
    let exact = datum().l2_norm_squared().sqrt();
    assert!((est / exact - 1.0).abs() < 0.05, "{est} vs {exact}");
    assert!(det_deviation(&tr, tr.n_steps()) < 1e-6);
    let inv = inverse_deviation(&tr, tr.n_steps());
    assert!(inv < 1e-5, "{inv:e}");
}

#[test]
fn lattice_quadrature_oracle() {
    let d = BumpSum::single(CompactBump::new([0.0; 6], 1.0, 1.0, 1.0, 3).unwrap());
    let ens = sample_ensemble(&d, 0.25, 0.0).unwrap();
    let exact1 = d.integral();
    let exact2 = d.l2_norm_squared();
    assert!((lp_norm(&ens, 1.0).unwrap() / exact1 - 1.0).abs() < 0.01);
    assert!((lp_norm(&ens, 2.0).unwrap().powi(2) / exact2 - 1.0).abs() < 0.01);
    // h = r/8: the datum factorizes, so the 6D lattice sum is a product of 3D sums
    let h = 0.125;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in -8i32..=8 {
        for j in -8i32..=8 {
            for k in -8i32..=8 {
                let r2 = (i * i + j * j + k * k) as f64 * h * h;
                if r2 < 1.0 {
                    let g = (1.0 - r2).powi(3);
                    s1 += g;
                    s2 += g * g;
                }
            }
        }
    }
    let h3 = h.powi(3);
    assert!(((s1 * h3).powi(2) / exact1 - 1.0).abs() < 0.01);
    assert!(((s2 * h3).powi(2) / exact2 - 1.0).abs() < 0.01);
}

#[test]
fn runs_are_bit_reproducible_and_roundtrip_through_files() {
    let ens = ensemble();
    let c = cfg(0.2, 0.05);
    let b = uniform_b(&c, 1.0);
    let prov = Provenance { scenario_hash: [1; 32], threads: 1 };
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a.bin", "b.bin"] {
        let tr = run_forward(&ens, &b, &c).unwrap();
        let path = dir.path().join(name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
        write_trajectory(&mut f, &tr, &prov, true).unwrap();
        drop(f);
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let snap = read_trajectory(&mut bytes[0].as_slice()).unwrap();
    assert_eq!(snap.z.len(), 5);
}

#[test]
fn frozen_fields_drive_a_test_charge() {
    let c = cfg(0.5, 0.05);
    let b = ControlField::zeros(c.field_grid, c.t_final);
    // two equal charges placed symmetrically: a test charge at the midpoint stays put
    let pos = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
    let w = [0.5, 0.5];
    let fields = FrozenFields { positions: &pos, weights: &w, softening: Softening::new(0.1).unwrap(), control: &b };
    let states = integrate_flow(Vec6::zeros(), 0.0, 0.5, 0.05, &fields).unwrap();
    assert!(states.last().unwrap().z.amax() < 1e-15);
    // a single charge pushes a nearby test charge away (repulsive sign)
    let one = FrozenFields { positions: &pos[..1], weights: &w[..1], softening: Softening::new(0.1).unwrap(), control: &b };
    let states = integrate_flow(Vec6::zeros(), 0.0, 0.5, 0.05, &one).unwrap();
    assert!(states.last().unwrap().z[0] < 0.0);
}
