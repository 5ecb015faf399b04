//! Tensor-grid quadrature of Φ_{a,f} and Φ′_{a,f} for analytic bump data.
//!
//! Each bump factors as α·P(y)·Q(w), so every 6D midpoint sum splits into a
//! product of a 3D sum over y and a 3D sum over w. The result equals the full
//! 6D tensor quadrature on the same grid.

use vpc_model::{BumpSum, CompactBump, Vec3};

use crate::{k_kernel, KernelError, Softening};

/// Midpoint rule on the box [lo, hi] ⊂ R⁶ with n[i] cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub lo: [f64; 6],
    pub hi: [f64; 6],
    pub n: [usize; 6],
}

impl QuadratureGrid {
    /// Cube [−half, half]⁶ with `n` cells per axis.
    pub fn cube(half: f64, n: usize) -> Self {
        Self {
            lo: [-half; 6],
            hi: [half; 6],
            n: [n; 6],
        }
    }

    fn covers(&self, f: &BumpSum) -> bool {
        f.bumps.iter().filter(|b| b.amplitude > 0.0).all(|b| {
            (0..6).all(|i| {
                let r = if i < 3 { b.r_x } else { b.r_v };
                b.center[i] - r >= self.lo[i] && b.center[i] + r <= self.hi[i]
            })
        })
    }

    fn nodes(&self, offset: usize) -> (Vec<Vec3>, f64) {
        let h: Vec<f64> = (0..3).map(|a| (self.hi[offset + a] - self.lo[offset + a]) / self.n[offset + a] as f64).collect();
        let mut pts = Vec::with_capacity(self.n[offset] * self.n[offset + 1] * self.n[offset + 2]);
        for i in 0..self.n[offset] {
            for j in 0..self.n[offset + 1] {
                for k in 0..self.n[offset + 2] {
                    pts.push(Vec3::new(
                        self.lo[offset] + (i as f64 + 0.5) * h[0],
                        self.lo[offset + 1] + (j as f64 + 0.5) * h[1],
                        self.lo[offset + 2] + (k as f64 + 0.5) * h[2],
                    ));
                }
            }
        }
        (pts, h[0] * h[1] * h[2])
    }
}

/// Values and gradients of one polynomial ball factor on a 3D node list.
struct Factor {
    val: Vec<f64>,
    grad: Vec<Vec3>,
}

fn factor(nodes: &[Vec3], c: &Vec3, r: f64, m: u32) -> Factor {
    let mut val = Vec::with_capacity(nodes.len());
    let mut grad = Vec::with_capacity(nodes.len());
    let m = m as i32;
    for y in nodes {
        let d = y - c;
        let p = 1.0 - d.norm_squared() / (r * r);
        if p > 0.0 {
            val.push(p.powi(m));
            grad.push(d * (-2.0 * m as f64 * p.powi(m - 1) / (r * r)));
        } else {
            val.push(0.0);
            grad.push(Vec3::zeros());
        }
    }
    Factor { val, grad }
}

struct Tabulated {
    amp: f64,
    px: Factor,
    qv: Factor,
}

fn tabulate(f: &BumpSum, ynodes: &[Vec3], wnodes: &[Vec3]) -> Vec<Tabulated> {
    f.bumps
        .iter()
        .map(|b: &CompactBump| Tabulated {
            amp: b.amplitude,
            px: factor(ynodes, &b.cx(), b.r_x, b.exponent),
            qv: factor(wnodes, &b.cv(), b.r_v, b.exponent),
        })
        .collect()
}

fn setup(a: &BumpSum, f: &BumpSum, grid: &QuadratureGrid) -> Result<(Vec<Vec3>, f64, Vec<Tabulated>, Vec<Tabulated>, f64), KernelError> {
    if !grid.covers(a) {
        return Err(KernelError::GridCoverage("a"));
    }
    if !grid.covers(f) {
        return Err(KernelError::GridCoverage("f"));
    }
    let (ynodes, dy) = grid.nodes(0);
    let (wnodes, dw) = grid.nodes(3);
    let ta = tabulate(a, &ynodes, &wnodes);
    let tf = tabulate(f, &ynodes, &wnodes);
    Ok((ynodes, dy, ta, tf, dw))
}

/// Quadrature of Φ_{a,f}(x) = −∬ K_ε(x−y)·∂_w a(y,w) f(y,w) dw dy.
pub fn eval_phi_direct_quadrature(a: &BumpSum, f: &BumpSum, x: &Vec3, grid: &QuadratureGrid, eps: Softening) -> Result<f64, KernelError> {
    let (ynodes, dy, ta, tf, dw) = setup(a, f, grid)?;
    let kern: Vec<Vec3> = ynodes.iter().map(|y| k_kernel(&(x - y), eps)).collect();
    let mut total = 0.0;
    for ai in &ta {
        for fl in &tf {
            let mut bw = Vec3::zeros();
            for n in 0..ai.qv.val.len() {
                bw += ai.qv.grad[n] * fl.qv.val[n];
            }
            let mut ay = Vec3::zeros();
            for n in 0..kern.len() {
                ay += kern[n] * (ai.px.val[n] * fl.px.val[n]);
            }
            total -= ai.amp * fl.amp * ay.dot(&bw) * dy * dw;
        }
    }
    Ok(total)
}

/// Quadrature of Φ′_{a,f}(x)_j = −∬ K_ε(x−y)·(∂_w a ∂_{y_j} f − ∂_w f ∂_{y_j} a) dw dy.
pub fn eval_phi_prime_analytic(a: &BumpSum, f: &BumpSum, x: &Vec3, grid: &QuadratureGrid, eps: Softening) -> Result<Vec3, KernelError> {
    let (ynodes, dy, ta, tf, dw) = setup(a, f, grid)?;
    let kern: Vec<Vec3> = ynodes.iter().map(|y| k_kernel(&(x - y), eps)).collect();
    let mut out = Vec3::zeros();
    for ai in &ta {
        for fl in &tf {
            // velocity factors: ∫ ∂_w Q_a Q_f and ∫ Q_a ∂_w Q_f
            let mut bw = Vec3::zeros();
            let mut dwv = Vec3::zeros();
            for n in 0..ai.qv.val.len() {
                bw += ai.qv.grad[n] * fl.qv.val[n];
                dwv += fl.qv.grad[n] * ai.qv.val[n];
            }
            // space factors: A_kj = ∫ K_k P_a ∂_j P_f and C_kj = ∫ K_k ∂_j P_a P_f
            let mut amat = vpc_model::Mat3::zeros();
            let mut cmat = vpc_model::Mat3::zeros();
            for n in 0..kern.len() {
                amat += kern[n] * (fl.px.grad[n] * ai.px.val[n]).transpose();
                cmat += kern[n] * (ai.px.grad[n] * fl.px.val[n]).transpose();
            }
            let term = amat.transpose() * bw - cmat.transpose() * dwv;
            out -= term * (ai.amp * fl.amp * dy * dw);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(center: [f64; 6], amp: f64) -> BumpSum {
        BumpSum::single(CompactBump::new(center, 0.8, 0.8, amp, 3).unwrap())
    }

    #[test]
    fn rejects_uncovered_support() {
        let a = bump([0.0; 6], 1.0);
        let grid = QuadratureGrid::cube(0.5, 8);
        let eps = Softening::new(0.2).unwrap();
        assert!(eval_phi_prime_analytic(&a, &a, &Vec3::zeros(), &grid, eps).is_err());
    }

    #[test]
    fn self_pairing_vanishes() {
        let f = BumpSum::new(vec![
            CompactBump::new([0.1, 0.0, -0.1, 0.2, 0.0, 0.1], 0.8, 0.7, 1.0, 3).unwrap(),
            CompactBump::new([-0.2, 0.1, 0.0, -0.1, 0.1, 0.0], 0.6, 0.8, 0.5, 4).unwrap(),
        ])
        .unwrap();
        let grid = QuadratureGrid::cube(1.2, 16);
        let eps = Softening::new(0.2).unwrap();
        let g = eval_phi_prime_analytic(&f, &f, &Vec3::new(0.3, -0.1, 0.2), &grid, eps).unwrap();
        assert!(g.norm() < 1e-14, "{g}");
    }

    #[test]
    fn zero_partner_gives_zero() {
        let a = bump([0.0; 6], 0.0);
        let f = bump([0.1, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        let grid = QuadratureGrid::cube(1.0, 12);
        let eps = Softening::new(0.2).unwrap();
        let x = Vec3::new(0.2, 0.1, 0.0);
        assert_eq!(eval_phi_prime_analytic(&a, &f, &x, &grid, eps).unwrap(), Vec3::zeros());
        assert_eq!(eval_phi_direct_quadrature(&a, &f, &x, &grid, eps).unwrap(), 0.0);
    }
}
