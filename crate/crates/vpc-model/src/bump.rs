use serde::{Deserialize, Serialize};

use crate::{invalid, xpart, vpart, ModelError, PhasePoint, Vec3, Vec6};

/// amplitude·(1−|x−c_x|²/r_x²)^m·(1−|v−c_v|²/r_v²)^m on the product of balls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactBump {
    pub center: [f64; 6],
    pub r_x: f64,
    pub r_v: f64,
    pub amplitude: f64,
    #[serde(default = "default_exponent")]
    pub exponent: u32,
}

fn default_exponent() -> u32 {
    3
}

impl CompactBump {
    pub fn new(center: [f64; 6], r_x: f64, r_v: f64, amplitude: f64, exponent: u32) -> Result<Self, ModelError> {
        let b = Self {
            center,
            r_x,
            r_v,
            amplitude,
            exponent,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(ModelError::NonFinite("bump center"));
        }
        if !(self.r_x > 0.0 && self.r_x.is_finite()) {
            return Err(invalid("r_x", "must be positive"));
        }
        if !(self.r_v > 0.0 && self.r_v.is_finite()) {
            return Err(invalid("r_v", "must be positive"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(invalid("amplitude", "must be nonnegative"));
        }
        if self.exponent < 3 {
            return Err(invalid("exponent", "must be at least 3"));
        }
        Ok(())
    }

    pub fn cx(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.center[2])
    }

    pub fn cv(&self) -> Vec3 {
        Vec3::new(self.center[3], self.center[4], self.center[5])
    }

    fn factors(&self, z: &Vec6) -> (f64, f64, Vec3, Vec3) {
        let dx = xpart(z) - self.cx();
        let dv = vpart(z) - self.cv();
        let p = 1.0 - dx.norm_squared() / (self.r_x * self.r_x);
        let q = 1.0 - dv.norm_squared() / (self.r_v * self.r_v);
        (p, q, dx, dv)
    }

    pub fn eval(&self, z: &Vec6) -> f64 {
        let (p, q, _, _) = self.factors(z);
        if p <= 0.0 || q <= 0.0 {
            return 0.0;
        }
        let m = self.exponent as i32;
        self.amplitude * p.powi(m) * q.powi(m)
    }

    pub fn grad(&self, z: &Vec6) -> Vec6 {
        let (p, q, dx, dv) = self.factors(z);
        if p <= 0.0 || q <= 0.0 {
            return Vec6::zeros();
        }
        let m = self.exponent as i32;
        let (pm, qm) = (p.powi(m), q.powi(m));
        let dp = self.amplitude * m as f64 * p.powi(m - 1) * qm;
        let dq = self.amplitude * m as f64 * q.powi(m - 1) * pm;
        let gx = dx * (-2.0 * dp / (self.r_x * self.r_x));
        let gv = dv * (-2.0 * dq / (self.r_v * self.r_v));
        crate::join(&gx, &gv)
    }

    /// Radius of the smallest origin-centered ball containing the support.
    pub fn support_radius(&self) -> f64 {
        let a = self.cx().norm() + self.r_x;
        let b = self.cv().norm() + self.r_v;
        (a * a + b * b).sqrt()
    }

    pub fn contains(&self, z: &Vec6) -> bool {
        let (p, q, _, _) = self.factors(z);
        p > 0.0 && q > 0.0
    }

    /// ∫ b^p dz in closed form.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        let mp = self.exponent as f64 * p;
        self.amplitude.powf(p) * ball_integral(self.r_x, mp) * ball_integral(self.r_v, mp)
    }

    pub fn integral(&self) -> f64 {
        self.lp_norm_pow(1.0)
    }
}

/// ∫_{|y|<r} (1−|y|²/r²)^m dy over R³ = 2π r³ B(3/2, m+1).
pub fn ball_integral(r: f64, m: f64) -> f64 {
    // B(3/2, m+1) through the ratio Γ(m+1)/Γ(m+5/2) built by recursion from m's fractional part.
    let n = m.floor() as i64;
    let frac = m - n as f64;
    let mut beta = beta_three_halves(frac);
    for k in 0..n {
        let a = frac + k as f64 + 1.0;
        beta *= a / (a + 1.5);
    }
    2.0 * std::f64::consts::PI * r.powi(3) * beta
}

/// B(3/2, s+1) for s ∈ [0, 1): exact at s = 0, Simpson otherwise.
fn beta_three_halves(s: f64) -> f64 {
    if s == 0.0 {
        return 2.0 / 3.0;
    }
    // ∫_0^1 t^{1/2}(1−t)^s dt = 2∫_0^1 u²(1−u²)^s du
    let n = 4000;
    let h = 1.0 / n as f64;
    let f = |u: f64| 2.0 * u * u * (1.0 - u * u).max(0.0).powf(s);
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

/// A finite sum of bumps; the representation used for f̊ and f_d.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BumpSum {
    pub bumps: Vec<CompactBump>,
}

impl BumpSum {
    pub fn new(bumps: Vec<CompactBump>) -> Result<Self, ModelError> {
        for b in &bumps {
            b.validate()?;
        }
        Ok(Self { bumps })
    }

    pub fn single(b: CompactBump) -> Self {
        Self { bumps: vec![b] }
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.iter().all(|b| b.amplitude == 0.0)
    }

    pub fn eval(&self, z: &Vec6) -> f64 {
        self.bumps.iter().map(|b| b.eval(z)).sum()
    }

    pub fn eval_point(&self, z: &PhasePoint) -> f64 {
        self.eval(&z.z())
    }

    pub fn grad(&self, z: &Vec6) -> Vec6 {
        self.bumps.iter().fold(Vec6::zeros(), |acc, b| acc + b.grad(z))
    }

    pub fn support_radius(&self) -> f64 {
        self.bumps.iter().map(|b| b.support_radius()).fold(0.0, f64::max)
    }

    pub fn contains(&self, z: &Vec6) -> bool {
        self.bumps.iter().any(|b| b.contains(z))
    }

    /// Axis-aligned box [lo, hi] in phase space covering all supports.
    pub fn support_box(&self) -> Option<(Vec6, Vec6)> {
        let mut it = self.bumps.iter().filter(|b| b.amplitude > 0.0);
        let first = it.next()?;
        let boxed = |b: &CompactBump| {
            let mut lo = Vec6::zeros();
            let mut hi = Vec6::zeros();
            for i in 0..6 {
                let r = if i < 3 { b.r_x } else { b.r_v };
                lo[i] = b.center[i] - r;
                hi[i] = b.center[i] + r;
            }
            (lo, hi)
        };
        let (mut lo, mut hi) = boxed(first);
        for b in it {
            let (l, h) = boxed(b);
            lo = lo.inf(&l);
            hi = hi.sup(&h);
        }
        Some((lo, hi))
    }

    pub fn integral(&self) -> f64 {
        self.bumps.iter().map(|b| b.integral()).sum()
    }

    /// ∫ f² dz. Closed form for diagonal and disjoint terms; overlapping
    /// cross terms split into x and v factors, each a 3D midpoint quadrature.
    pub fn l2_norm_squared(&self) -> f64 {
        let mut acc = 0.0;
        for (i, a) in self.bumps.iter().enumerate() {
            acc += a.lp_norm_pow(2.0);
            for b in &self.bumps[i + 1..] {
                let fx = overlap_3d(&a.cx(), a.r_x, a.exponent, &b.cx(), b.r_x, b.exponent);
                if fx == 0.0 {
                    continue;
                }
                let fv = overlap_3d(&a.cv(), a.r_v, a.exponent, &b.cv(), b.r_v, b.exponent);
                acc += 2.0 * a.amplitude * b.amplitude * fx * fv;
            }
        }
        acc
    }
}

fn overlap_3d(c1: &Vec3, r1: f64, m1: u32, c2: &Vec3, r2: f64, m2: u32) -> f64 {
    if (c1 - c2).norm() >= r1 + r2 {
        return 0.0;
    }
    if c1 == c2 && r1 == r2 {
        return ball_integral(r1, (m1 + m2) as f64);
    }
    let lo = (c1 - Vec3::repeat(r1)).sup(&(c2 - Vec3::repeat(r2)));
    let hi = (c1 + Vec3::repeat(r1)).inf(&(c2 + Vec3::repeat(r2)));
    let n = 120;
    let h = (hi - lo) / n as f64;
    let f = |y: &Vec3, c: &Vec3, r: f64, m: u32| {
        let p = 1.0 - (y - c).norm_squared() / (r * r);
        if p > 0.0 {
            p.powi(m as i32)
        } else {
            0.0
        }
    };
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let y = lo + Vec3::new((i as f64 + 0.5) * h[0], (j as f64 + 0.5) * h[1], (k as f64 + 0.5) * h[2]);
                acc += f(&y, c1, r1, m1) * f(&y, c2, r2, m2);
            }
        }
    }
    acc * h[0] * h[1] * h[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> CompactBump {
        CompactBump::new([0.0; 6], 1.0, 1.0, 1.0, 3).unwrap()
    }

    #[test]
    fn peak_and_outside() {
        let b = unit();
        assert_eq!(b.eval(&Vec6::zeros()), 1.0);
        assert_eq!(b.eval(&Vec6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)), 0.0);
        assert_eq!(b.grad(&Vec6::zeros()), Vec6::zeros());
        assert_eq!(b.grad(&Vec6::new(0.0, 0.0, 0.0, 0.0, 2.0, 0.0)), Vec6::zeros());
    }

    #[test]
    fn half_radius_value() {
        let z = Vec6::new(0.5, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((unit().eval(&z) - 0.421875).abs() < 1e-15);
    }

    #[test]
    fn ball_integral_matches_series() {
        // 4π ∫_0^1 s²(1−s²)^m ds = 4π Σ_k C(m,k)(−1)^k/(2k+3)
        for m in 0..8u32 {
            let mut s = 0.0;
            let mut c = 1.0;
            for k in 0..=m {
                if k > 0 {
                    c = c * (m - k + 1) as f64 / k as f64;
                }
                s += c * if k % 2 == 0 { 1.0 } else { -1.0 } / (2 * k + 3) as f64;
            }
            let exact = 4.0 * std::f64::consts::PI * s;
            assert!((ball_integral(1.0, m as f64) - exact).abs() < 1e-13, "m={m}");
        }
        // (1−r²)³ over the unit ball is 64π/315
        assert!((ball_integral(1.0, 3.0) - 64.0 * std::f64::consts::PI / 315.0).abs() < 1e-14);
        // fractional exponents fall back to quadrature
        let half = ball_integral(1.0, 1.5);
        assert!((half - beta_check(1.5)).abs() < 1e-5);
    }

    fn beta_check(m: f64) -> f64 {
        let n = 200_000;
        let h = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) * h;
                4.0 * std::f64::consts::PI * s * s * (1.0 - s * s).powf(m) * h
            })
            .sum()
    }

    #[test]
    fn overlapping_l2_matches_brute_force() {
        let a = unit();
        let mut b = unit();
        b.center[0] = 0.6;
        b.center[4] = -0.3;
        let s = BumpSum::new(vec![a, b]).unwrap();
        let fx = overlap_3d(&a.cx(), 1.0, 3, &b.cx(), 1.0, 3);
        let fv = overlap_3d(&a.cv(), 1.0, 3, &b.cv(), 1.0, 3);
        let expect = 2.0 * a.lp_norm_pow(2.0) + 2.0 * fx * fv;
        assert!((s.l2_norm_squared() - expect).abs() < 1e-14);
        // symmetric overlap in 1D shift: compare against a finer independent grid
        let fine = {
            let n = 200;
            let (lo, hi) = (-1.0, 1.0);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let y = Vec3::new(lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h, lo + (k as f64 + 0.5) * h);
                        let p1 = (1.0 - y.norm_squared()).max(0.0).powi(3);
                        let p2 = (1.0 - (y - Vec3::new(0.6, 0.0, 0.0)).norm_squared()).max(0.0).powi(3);
                        acc += p1 * p2;
                    }
                }
            }
            acc * h * h * h
        };
        assert!((fx - fine).abs() < 1e-4 * fine);
    }

    proptest! {
        #[test]
        fn bump_nonnegative_and_supported(z in prop::array::uniform6(-2.0f64..2.0)) {
            let b = unit();
            let z = Vec6::from_row_slice(&z);
            let val = b.eval(&z);
            prop_assert!(val >= 0.0);
            if !b.contains(&z) {
                prop_assert_eq!(val, 0.0);
            }
        }

        #[test]
        fn gradient_matches_central_differences(z in prop::array::uniform6(-0.55f64..0.55)) {
            let b = CompactBump::new([0.1, -0.2, 0.05, 0.0, 0.1, -0.1], 1.1, 0.9, 2.0, 3).unwrap();
            let z = Vec6::from_row_slice(&z);
            let g = b.grad(&z);
            let h = 1e-6;
            for i in 0..6 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                let fd = (b.eval(&zp) - b.eval(&zm)) / (2.0 * h);
                let scale = g.norm().max(1e-3);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * scale, "i={} fd={} g={}", i, fd, g[i]);
            }
        }
    }
}
