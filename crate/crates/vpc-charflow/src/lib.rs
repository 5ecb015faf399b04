//! Characteristics of the magnetized Vlasov equation,
//!
//!   ẋ = v,  v̇ = F(t,x) + v × G(t,x),
//!
//! together with the variational system dM/dt = A·M, dN/dt = −N·A for the
//! forward flow Jacobian M and its inverse N. Integration is classical RK4
//! with a fixed step.

use thiserror::Error;
use vpc_model::{cross_left, cross_right, join, vpart, xpart, Mat3, Mat6, Vec3, Vec6};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

/// Electric forcing F with Jacobian and magnetic field G with Jacobian.
pub trait FieldProviders: Sync {
    fn electric(&self, t: f64, x: &Vec3) -> Vec3;
    fn electric_jacobian(&self, t: f64, x: &Vec3) -> Mat3;
    fn magnetic(&self, t: f64, x: &Vec3) -> Vec3;
    fn magnetic_jacobian(&self, t: f64, x: &Vec3) -> Mat3;
}

/// Field providers assembled from closures.
pub struct FnFields<E, JE, B, JB> {
    pub electric: E,
    pub electric_jacobian: JE,
    pub magnetic: B,
    pub magnetic_jacobian: JB,
}

impl<E, JE, B, JB> FieldProviders for FnFields<E, JE, B, JB>
where
    E: Fn(f64, &Vec3) -> Vec3 + Sync,
    JE: Fn(f64, &Vec3) -> Mat3 + Sync,
    B: Fn(f64, &Vec3) -> Vec3 + Sync,
    JB: Fn(f64, &Vec3) -> Mat3 + Sync,
{
    fn electric(&self, t: f64, x: &Vec3) -> Vec3 {
        (self.electric)(t, x)
    }
    fn electric_jacobian(&self, t: f64, x: &Vec3) -> Mat3 {
        (self.electric_jacobian)(t, x)
    }
    fn magnetic(&self, t: f64, x: &Vec3) -> Vec3 {
        (self.magnetic)(t, x)
    }
    fn magnetic_jacobian(&self, t: f64, x: &Vec3) -> Mat3 {
        (self.magnetic_jacobian)(t, x)
    }
}

/// F ≡ 0 and a spatially uniform G.
#[derive(Debug, Clone, Copy)]
pub struct UniformMagnetic(pub Vec3);

impl FieldProviders for UniformMagnetic {
    fn electric(&self, _: f64, _: &Vec3) -> Vec3 {
        Vec3::zeros()
    }
    fn electric_jacobian(&self, _: f64, _: &Vec3) -> Mat3 {
        Mat3::zeros()
    }
    fn magnetic(&self, _: f64, _: &Vec3) -> Vec3 {
        self.0
    }
    fn magnetic_jacobian(&self, _: f64, _: &Vec3) -> Mat3 {
        Mat3::zeros()
    }
}

/// Position, forward Jacobian M and inverse-flow Jacobian N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowState {
    pub z: Vec6,
    pub m: Mat6,
    pub n: Mat6,
}

impl FlowState {
    pub fn start(z: Vec6) -> Self {
        Self {
            z,
            m: Mat6::identity(),
            n: Mat6::identity(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().chain(self.m.iter()).chain(self.n.iter()).all(|c| c.is_finite())
    }
}

/// Right-hand side (v, F + v×G) given field values at x.
#[inline]
pub fn rhs_from_fields(z: &Vec6, e: &Vec3, b: &Vec3) -> Vec6 {
    let v = vpart(z);
    join(&v, &(e + v.cross(b)))
}

pub fn char_rhs(t: f64, z: &Vec6, fields: &dyn FieldProviders) -> Vec6 {
    let x = xpart(z);
    rhs_from_fields(z, &fields.electric(t, &x), &fields.magnetic(t, &x))
}

/// A = [[0, I], [∂ₓF + [v]×∂ₓG, u ↦ u×G]].
#[inline]
pub fn system_matrix(v: &Vec3, e_jac: &Mat3, b: &Vec3, b_jac: &Mat3) -> Mat6 {
    let mut a = Mat6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(e_jac + cross_left(v) * b_jac));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&cross_right(b));
    a
}

pub fn system_matrix_at(t: f64, z: &Vec6, fields: &dyn FieldProviders) -> Mat6 {
    let x = xpart(z);
    system_matrix(
        &vpart(z),
        &fields.electric_jacobian(t, &x),
        &fields.magnetic(t, &x),
        &fields.magnetic_jacobian(t, &x),
    )
}

pub fn variational_rhs(t: f64, state: &FlowState, fields: &dyn FieldProviders) -> (Mat6, Mat6) {
    let a = system_matrix_at(t, &state.z, fields);
    (a * state.m, -(state.n * a))
}

fn rk4_step(t: f64, h: f64, s: &FlowState, fields: &dyn FieldProviders) -> FlowState {
    let eval = |t: f64, s: &FlowState| {
        let (dm, dn) = variational_rhs(t, s, fields);
        (char_rhs(t, &s.z, fields), dm, dn)
    };
    let shift = |s: &FlowState, k: &(Vec6, Mat6, Mat6), c: f64| FlowState {
        z: s.z + k.0 * c,
        m: s.m + k.1 * c,
        n: s.n + k.2 * c,
    };
    let k1 = eval(t, s);
    let k2 = eval(t + 0.5 * h, &shift(s, &k1, 0.5 * h));
    let k3 = eval(t + 0.5 * h, &shift(s, &k2, 0.5 * h));
    let k4 = eval(t + h, &shift(s, &k3, h));
    let w = h / 6.0;
    FlowState {
        z: s.z + (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * w,
        m: s.m + (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * w,
        n: s.n + (k1.2 + (k2.2 + k3.2) * 2.0 + k4.2) * w,
    }
}

/// RK4 path from `t0` to `t1` (either direction) with |step| ≈ dt.
///
/// The step count is round(|t1−t0|/dt), so the last step lands on t1.
pub fn integrate_flow(z0: Vec6, t0: f64, t1: f64, dt: f64, fields: &dyn FieldProviders) -> Result<Vec<FlowState>, FlowError> {
    integrate_from(FlowState::start(z0), t0, t1, dt, fields)
}

pub fn integrate_from(start: FlowState, t0: f64, t1: f64, dt: f64, fields: &dyn FieldProviders) -> Result<Vec<FlowState>, FlowError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::BadStep(dt));
    }
    let n = ((t1 - t0).abs() / dt).round() as usize;
    let h = if n == 0 { 0.0 } else { (t1 - t0) / n as f64 };
    let mut path = Vec::with_capacity(n + 1);
    path.push(start);
    let mut s = start;
    for k in 0..n {
        s = rk4_step(t0 + k as f64 * h, h, &s, fields);
        if !s.is_finite() {
            return Err(FlowError::NonFinite { step: k + 1 });
        }
        path.push(s);
    }
    Ok(path)
}

/// ζ(r) = e^{2T}(r + √T·A), the a priori support radius.
pub fn support_bound_zeta(r: f64, t: f64, a_norm: f64) -> f64 {
    (2.0 * t).exp() * (r + t.sqrt() * a_norm)
}
