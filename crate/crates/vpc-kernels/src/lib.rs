//! Softened Newtonian kernel quadratures over particle ensembles.
//!
//! With r² = |ξ|² + ε² the kernels are ψ_ε(ξ) = 1/r and K_ε(ξ) = ξ/r³, so
//! K_ε = −∇ψ_ε and the force on a like charge is repulsive. Every sum runs
//! over sources in index order with a fixed pairwise reduction tree, which
//! makes results independent of the thread count.

mod quadrature;
mod sum;

pub use quadrature::{eval_phi_direct_quadrature, eval_phi_prime_analytic, QuadratureGrid};
pub use sum::pairwise_sum;

use rayon::prelude::*;
use thiserror::Error;
use vpc_model::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("source lists differ in length: {0} positions, {1} weights")]
    LengthMismatch(usize, usize),
    #[error("softening must be positive, got {0}")]
    Softening(f64),
    #[error("quadrature grid does not cover the support of {0}")]
    GridCoverage(&'static str),
}

/// Softening length ε. Zero is admitted only through [`Softening::unsoftened`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Softening(f64);

impl Softening {
    pub fn new(eps: f64) -> Result<Self, KernelError> {
        if eps > 0.0 && eps.is_finite() {
            Ok(Self(eps))
        } else {
            Err(KernelError::Softening(eps))
        }
    }

    /// Bare Coulomb kernel, for analytic checks away from sources.
    pub fn unsoftened() -> Self {
        Self(0.0)
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    #[inline]
    fn eps2(&self) -> f64 {
        self.0 * self.0
    }
}

/// Source points with scalar or vector weights.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSource<'a, W> {
    pub positions: &'a [Vec3],
    pub weights: &'a [W],
}

impl<'a, W> WeightedSource<'a, W> {
    pub fn new(positions: &'a [Vec3], weights: &'a [W]) -> Result<Self, KernelError> {
        if positions.len() != weights.len() {
            return Err(KernelError::LengthMismatch(positions.len(), weights.len()));
        }
        Ok(Self { positions, weights })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Particles carrying weights ω_q and the velocity block of a costate gradient.
#[derive(Debug, Clone, Copy)]
pub struct CostateSource<'a> {
    pub positions: &'a [Vec3],
    pub weights: &'a [f64],
    pub gv: &'a [Vec3],
}

impl<'a> CostateSource<'a> {
    pub fn new(positions: &'a [Vec3], weights: &'a [f64], gv: &'a [Vec3]) -> Result<Self, KernelError> {
        if positions.len() != weights.len() {
            return Err(KernelError::LengthMismatch(positions.len(), weights.len()));
        }
        if positions.len() != gv.len() {
            return Err(KernelError::LengthMismatch(positions.len(), gv.len()));
        }
        Ok(Self { positions, weights, gv })
    }
}

#[inline]
pub fn psi_kernel(d: &Vec3, eps: Softening) -> f64 {
    1.0 / (d.norm_squared() + eps.eps2()).sqrt()
}

#[inline]
pub fn k_kernel(d: &Vec3, eps: Softening) -> Vec3 {
    let inv = psi_kernel(d, eps);
    d * (inv * inv * inv)
}

/// Jacobian of K_ε: I/r³ − 3ξξᵀ/r⁵. Symmetric and even in ξ.
#[inline]
pub fn k_jacobian(d: &Vec3, eps: Softening) -> Mat3 {
    let inv = psi_kernel(d, eps);
    let inv3 = inv * inv * inv;
    let inv5 = inv3 * inv * inv;
    Mat3::identity() * inv3 - d * d.transpose() * (3.0 * inv5)
}

fn skip_sum<T, F>(n: usize, skip: Option<usize>, zero: T, f: F) -> T
where
    T: Copy + std::ops::Add<Output = T>,
    F: Fn(usize) -> T,
{
    pairwise_sum(n, zero, |q| if Some(q) == skip { zero } else { f(q) })
}

pub fn eval_psi(src: &WeightedSource<f64>, x: &Vec3, eps: Softening) -> f64 {
    eval_psi_excluding(src, x, eps, None)
}

pub fn eval_psi_excluding(src: &WeightedSource<f64>, x: &Vec3, eps: Softening, skip: Option<usize>) -> f64 {
    skip_sum(src.len(), skip, 0.0, |q| src.weights[q] * psi_kernel(&(x - src.positions[q]), eps))
}

/// Electric field −∂ₓψ.
pub fn eval_e(src: &WeightedSource<f64>, x: &Vec3, eps: Softening) -> Vec3 {
    eval_e_excluding(src, x, eps, None)
}

pub fn eval_e_excluding(src: &WeightedSource<f64>, x: &Vec3, eps: Softening, skip: Option<usize>) -> Vec3 {
    skip_sum(src.len(), skip, Vec3::zeros(), |q| k_kernel(&(x - src.positions[q]), eps) * src.weights[q])
}

pub fn eval_e_jacobian(src: &WeightedSource<f64>, x: &Vec3, eps: Softening) -> Mat3 {
    eval_e_jacobian_excluding(src, x, eps, None)
}

pub fn eval_e_jacobian_excluding(src: &WeightedSource<f64>, x: &Vec3, eps: Softening, skip: Option<usize>) -> Mat3 {
    skip_sum(src.len(), skip, Mat3::zeros(), |q| k_jacobian(&(x - src.positions[q]), eps) * src.weights[q])
}

/// Φ(x) = Σ_q ω_q K_ε(x − x_q)·G_q^v.
pub fn eval_phi(src: &CostateSource, x: &Vec3, eps: Softening) -> f64 {
    eval_phi_excluding(src, x, eps, None)
}

pub fn eval_phi_excluding(src: &CostateSource, x: &Vec3, eps: Softening, skip: Option<usize>) -> f64 {
    skip_sum(src.positions.len(), skip, 0.0, |q| {
        src.weights[q] * k_kernel(&(x - src.positions[q]), eps).dot(&src.gv[q])
    })
}

pub fn eval_phi_grad(src: &CostateSource, x: &Vec3, eps: Softening) -> Vec3 {
    eval_phi_grad_excluding(src, x, eps, None)
}

pub fn eval_phi_grad_excluding(src: &CostateSource, x: &Vec3, eps: Softening, skip: Option<usize>) -> Vec3 {
    skip_sum(src.positions.len(), skip, Vec3::zeros(), |q| {
        k_jacobian(&(x - src.positions[q]), eps) * src.gv[q] * src.weights[q]
    })
}

/// Component-wise Newton potential Σ_q ψ_ε(x − x_q) w_q.
pub fn eval_vector_newton(src: &WeightedSource<Vec3>, x: &Vec3, eps: Softening) -> Vec3 {
    pairwise_sum(src.len(), Vec3::zeros(), |q| src.weights[q] * psi_kernel(&(x - src.positions[q]), eps))
}

/// Field and field Jacobian seen by each particle, self term excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub e: Vec3,
    pub jac: Mat3,
}

impl std::ops::Add for FieldSample {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            e: self.e + o.e,
            jac: self.jac + o.jac,
        }
    }
}

impl FieldSample {
    pub fn zero() -> Self {
        Self {
            e: Vec3::zeros(),
            jac: Mat3::zeros(),
        }
    }
}

/// Evaluate E and ∂ₓE at `targets[p]` from `sources`, skipping source p
/// when `exclude_self` is set (targets and sources then share indexing).
pub fn field_samples(
    targets: &[Vec3],
    sources: &[Vec3],
    weights: &[f64],
    eps: Softening,
    exclude_self: bool,
) -> Vec<FieldSample> {
    targets
        .par_iter()
        .enumerate()
        .map(|(p, x)| {
            let skip = exclude_self.then_some(p);
            skip_sum(sources.len(), skip, FieldSample::zero(), |q| {
                let d = x - sources[q];
                let inv = psi_kernel(&d, eps);
                let inv3 = inv * inv * inv;
                let w = weights[q];
                FieldSample {
                    e: d * inv3 * w,
                    jac: (Mat3::identity() * inv3 - d * d.transpose() * (3.0 * inv3 * inv * inv)) * w,
                }
            })
        })
        .collect()
}

/// E alone at each target, as [`field_samples`] without the Jacobian.
pub fn field_values(targets: &[Vec3], sources: &[Vec3], weights: &[f64], eps: Softening, exclude_self: bool) -> Vec<Vec3> {
    targets
        .par_iter()
        .enumerate()
        .map(|(p, x)| {
            let skip = exclude_self.then_some(p);
            skip_sum(sources.len(), skip, Vec3::zeros(), |q| k_kernel(&(x - sources[q]), eps) * weights[q])
        })
        .collect()
}

/// Per-particle interaction data of one backward stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostateSample {
    pub jac_e: Mat3,
    pub phi: f64,
    pub dphi: Vec3,
}

impl std::ops::Add for CostateSample {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            jac_e: self.jac_e + o.jac_e,
            phi: self.phi + o.phi,
            dphi: self.dphi + o.dphi,
        }
    }
}

impl CostateSample {
    pub fn zero() -> Self {
        Self {
            jac_e: Mat3::zeros(),
            phi: 0.0,
            dphi: Vec3::zeros(),
        }
    }
}

/// E Jacobian, Φ and ∂ₓΦ at every particle of `src`, self terms excluded.
pub fn costate_samples(src: &CostateSource, eps: Softening) -> Vec<CostateSample> {
    let n = src.positions.len();
    (0..n)
        .into_par_iter()
        .map(|p| {
            let x = src.positions[p];
            skip_sum(n, Some(p), CostateSample::zero(), |q| {
                let d = x - src.positions[q];
                let inv = psi_kernel(&d, eps);
                let inv3 = inv * inv * inv;
                let jk = Mat3::identity() * inv3 - d * d.transpose() * (3.0 * inv3 * inv * inv);
                let w = src.weights[q];
                let g = src.gv[q];
                CostateSample {
                    jac_e: jk * w,
                    phi: w * inv3 * d.dot(&g),
                    dphi: jk * g * w,
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_source() -> (Vec<Vec3>, Vec<f64>) {
        (vec![Vec3::zeros()], vec![1.0])
    }

    #[test]
    fn one_and_two_term_sums() {
        let (pos, w) = unit_source();
        let src = WeightedSource::new(&pos, &w).unwrap();
        let eps = Softening::new(0.3).unwrap();
        let d = 1.7;
        let x = Vec3::new(d, 0.0, 0.0);
        assert!((eval_psi(&src, &x, eps) - 1.0 / (d * d + 0.09).sqrt()).abs() < 1e-15);
        let empty = WeightedSource::<f64>::new(&[], &[]).unwrap();
        assert_eq!(eval_psi(&empty, &x, eps), 0.0);
        assert_eq!(eval_e_jacobian(&empty, &x, eps), Mat3::zeros());

        let pos2 = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
        let w2 = vec![1.0, 1.0];
        let src2 = WeightedSource::new(&pos2, &w2).unwrap();
        assert_eq!(eval_psi(&src2, &Vec3::zeros(), Softening::unsoftened()), 2.0);
    }

    #[test]
    fn coulomb_field_and_jacobian() {
        let (pos, w) = unit_source();
        let src = WeightedSource::new(&pos, &w).unwrap();
        let d = 2.0;
        let x = Vec3::new(d, 0.0, 0.0);
        let e = eval_e(&src, &x, Softening::unsoftened());
        assert!((e - Vec3::new(1.0 / (d * d), 0.0, 0.0)).norm() < 1e-15);
        let j = eval_e_jacobian(&src, &x, Softening::unsoftened());
        let expect = Mat3::from_diagonal(&Vec3::new(-2.0 / d.powi(3), 1.0 / d.powi(3), 1.0 / d.powi(3)));
        assert!((j - expect).norm() < 1e-15);
        // field vanishes at a softened source
        assert_eq!(eval_e(&src, &Vec3::zeros(), Softening::new(0.1).unwrap()), Vec3::zeros());
    }

    #[test]
    fn phi_one_term_and_sign() {
        let pos = vec![Vec3::zeros()];
        let w = vec![1.0];
        let gv = vec![Vec3::new(1.0, 0.0, 0.0)];
        let src = CostateSource::new(&pos, &w, &gv).unwrap();
        let d = 1.5;
        let x = Vec3::new(d, 0.0, 0.0);
        let phi = eval_phi(&src, &x, Softening::unsoftened());
        assert!((phi - 1.0 / (d * d)).abs() < 1e-15);
        // derivative of ξ₁/|ξ|³ along x₁ is −2/d³
        let g = eval_phi_grad(&src, &x, Softening::unsoftened());
        assert!((g - Vec3::new(-2.0 / d.powi(3), 0.0, 0.0)).norm() < 1e-15);
        let neg = vec![-gv[0]];
        let src_neg = CostateSource::new(&pos, &w, &neg).unwrap();
        assert_eq!(eval_phi(&src_neg, &x, Softening::unsoftened()), -phi);
        let zero = vec![Vec3::zeros()];
        let src0 = CostateSource::new(&pos, &w, &zero).unwrap();
        assert_eq!(eval_phi(&src0, &x, Softening::unsoftened()), 0.0);
        assert_eq!(eval_phi_grad(&src0, &x, Softening::unsoftened()), Vec3::zeros());
    }

    #[test]
    fn length_mismatch_is_error() {
        let pos = vec![Vec3::zeros(); 2];
        assert!(CostateSource::new(&pos, &[1.0], &[Vec3::zeros(); 2]).is_err());
        assert!(WeightedSource::new(&pos, &[1.0]).is_err());
        assert!(Softening::new(0.0).is_err());
    }

    #[test]
    fn vector_newton_one_term_and_linearity() {
        let pos = vec![Vec3::zeros(), Vec3::new(0.3, -0.2, 0.5)];
        let w = vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 2.0, -1.0)];
        let x = Vec3::new(2.0, 0.0, 0.0);
        let one = WeightedSource::new(&pos[..1], &w[..1]).unwrap();
        assert!((eval_vector_newton(&one, &x, Softening::unsoftened()) - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-15);
        let src = WeightedSource::new(&pos, &w).unwrap();
        let w2: Vec<Vec3> = w.iter().map(|v| v * 2.0).collect();
        let src2 = WeightedSource::new(&pos, &w2).unwrap();
        let eps = Softening::new(0.2).unwrap();
        assert_eq!(eval_vector_newton(&src2, &x, eps), eval_vector_newton(&src, &x, eps) * 2.0);
        let empty = WeightedSource::<Vec3>::new(&[], &[]).unwrap();
        assert_eq!(eval_vector_newton(&empty, &x, eps), Vec3::zeros());
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec3>, Vec<f64>, Vec<Vec3>) {
        let pos = (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let w = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let g = (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        (pos, w, g)
    }

    #[test]
    fn batched_samples_match_single_evaluations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (pos, w, g) = random_cloud(&mut rng, 40);
        let eps = Softening::new(0.15).unwrap();
        let fs = field_samples(&pos, &pos, &w, eps, true);
        let fv = field_values(&pos, &pos, &w, eps, true);
        let src = WeightedSource::new(&pos, &w).unwrap();
        let cs = CostateSource::new(&pos, &w, &g).unwrap();
        let cz = costate_samples(&cs, eps);
        for p in 0..pos.len() {
            let e = eval_e_excluding(&src, &pos[p], eps, Some(p));
            let j = eval_e_jacobian_excluding(&src, &pos[p], eps, Some(p));
            assert!((fs[p].e - e).norm() <= 1e-13 * e.norm().max(1.0));
            assert!((fs[p].jac - j).norm() <= 1e-13 * j.norm().max(1.0));
            assert_eq!(fv[p], fs[p].e);
            assert!((cz[p].jac_e - j).norm() <= 1e-13 * j.norm().max(1.0));
            let phi = eval_phi_excluding(&cs, &pos[p], eps, Some(p));
            let dphi = eval_phi_grad_excluding(&cs, &pos[p], eps, Some(p));
            assert!((cz[p].phi - phi).abs() <= 1e-13 * phi.abs().max(1.0));
            assert!((cz[p].dphi - dphi).norm() <= 1e-13 * dphi.norm().max(1.0));
        }
    }

    #[test]
    fn far_field_decay_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (pos, w, _) = random_cloud(&mut rng, 30);
        let src = WeightedSource::new(&pos, &w).unwrap();
        let total: f64 = w.iter().sum();
        for &r in &[5.0, 10.0, 50.0] {
            let x = Vec3::new(r, 0.3 * r, -0.2 * r);
            // the cloud lies in the unit cube, so dist ≥ |x| − √3
            let dist = x.norm() - 3f64.sqrt();
            assert!(eval_psi(&src, &x, Softening::new(0.1).unwrap()) <= 2.0 * total / dist);
        }
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..1000, shift in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (pos, w, _) = random_cloud(&mut rng, 23);
            let x = Vec3::new(0.3, 1.4, -0.8);
            let eps = Softening::new(0.2).unwrap();
            let a = eval_e(&WeightedSource::new(&pos, &w).unwrap(), &x, eps);
            let mut pr = pos.clone();
            let mut wr = w.clone();
            pr.rotate_left(shift);
            wr.rotate_left(shift);
            let b = eval_e(&WeightedSource::new(&pr, &wr).unwrap(), &x, eps);
            prop_assert!((a - b).norm() <= 1e-14 * a.norm());
        }

        #[test]
        fn kernel_is_odd_and_jacobian_even(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let d = Vec3::new(x, y, z);
            let eps = Softening::new(0.1).unwrap();
            prop_assert_eq!(k_kernel(&-d, eps), -k_kernel(&d, eps));
            prop_assert_eq!(k_jacobian(&-d, eps), k_jacobian(&d, eps));
            let j = k_jacobian(&d, eps);
            prop_assert_eq!(j, j.transpose());
        }
    }
}
