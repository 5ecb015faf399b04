use serde::{Deserialize, Serialize};

use crate::{invalid, ModelError, PhasePoint, Vec6};

/// Radial C² cutoff: 1 inside R₁, 0 outside R₂, quintic smoothstep between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl CutoffSpec {
    pub fn new(inner_radius: f64, outer_radius: f64) -> Result<Self, ModelError> {
        let c = Self {
            inner_radius,
            outer_radius,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.inner_radius > 0.0 && self.inner_radius.is_finite()) {
            return Err(invalid("inner_radius", "must be positive"));
        }
        if !(self.outer_radius > self.inner_radius && self.outer_radius.is_finite()) {
            return Err(invalid("outer_radius", "must exceed inner_radius"));
        }
        Ok(())
    }

    fn blend(&self, r: f64) -> Option<f64> {
        if r <= self.inner_radius || r >= self.outer_radius {
            None
        } else {
            Some((r - self.inner_radius) / (self.outer_radius - self.inner_radius))
        }
    }

    pub fn eval(&self, z: &Vec6) -> f64 {
        let r = z.norm();
        match self.blend(r) {
            Some(s) => 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s),
            None if r <= self.inner_radius => 1.0,
            None => 0.0,
        }
    }

    pub fn grad(&self, z: &Vec6) -> Vec6 {
        let r = z.norm();
        match self.blend(r) {
            Some(s) => {
                let w = 1.0 - s;
                let d = -30.0 * s * s * w * w / (self.outer_radius - self.inner_radius);
                z * (d / r)
            }
            None => Vec6::zeros(),
        }
    }

    pub fn eval_point(&self, z: &PhasePoint) -> f64 {
        self.eval(&z.z())
    }
}
