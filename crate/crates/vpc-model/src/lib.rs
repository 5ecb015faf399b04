//! Domain types shared by the Vlasov–Poisson control solver.
//!
//! Phase space is R³×R³ with points z = (x, v). Initial and target data are
//! finite sums of compactly supported polynomial bumps, which keeps values,
//! gradients and norms available in closed form for test oracles.

mod bump;
mod config;
mod cutoff;

pub use bump::{ball_integral, BumpSum, CompactBump};
pub use config::{AdmissibleSpec, FieldGridSpec, RunConfig};
pub use cutoff::CutoffSpec;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        name,
        reason: reason.into(),
    }
}

/// A point of phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: Vec3,
    pub v: Vec3,
}

impl PhasePoint {
    pub fn new(x: Vec3, v: Vec3) -> Result<Self, ModelError> {
        if x.iter().chain(v.iter()).all(|c| c.is_finite()) {
            Ok(Self { x, v })
        } else {
            Err(ModelError::NonFinite("PhasePoint"))
        }
    }

    pub fn from_z(z: &Vec6) -> Self {
        Self {
            x: z.fixed_rows::<3>(0).into(),
            v: z.fixed_rows::<3>(3).into(),
        }
    }

    pub fn z(&self) -> Vec6 {
        join(&self.x, &self.v)
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

/// Stack two 3-vectors into a phase-space vector.
#[inline]
pub fn join(a: &Vec3, b: &Vec3) -> Vec6 {
    Vec6::new(a[0], a[1], a[2], b[0], b[1], b[2])
}

#[inline]
pub fn xpart(z: &Vec6) -> Vec3 {
    Vec3::new(z[0], z[1], z[2])
}

#[inline]
pub fn vpart(z: &Vec6) -> Vec3 {
    Vec3::new(z[3], z[4], z[5])
}

/// Matrix of the linear map u ↦ u × b.
#[inline]
pub fn cross_right(b: &Vec3) -> Mat3 {
    Mat3::new(0.0, b[2], -b[1], -b[2], 0.0, b[0], b[1], -b[0], 0.0)
}

/// Matrix of the linear map u ↦ a × u.
#[inline]
pub fn cross_left(a: &Vec3) -> Mat3 {
    -cross_right(a)
}
