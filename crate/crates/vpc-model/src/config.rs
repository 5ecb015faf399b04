use serde::{Deserialize, Serialize};

use crate::{invalid, CutoffSpec, ModelError};

/// Norm ball ∥B∥_V ≤ K with Sobolev exponent β > 3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleSpec {
    #[serde(rename = "K")]
    pub k: f64,
    pub beta: f64,
}

impl AdmissibleSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(invalid("K", "must be positive"));
        }
        if !(self.beta > 3.0 && self.beta.is_finite()) {
            return Err(invalid("beta", "must exceed 3"));
        }
        Ok(())
    }

    /// Hölder exponent of the embedding; metadata only.
    pub fn gamma(&self) -> f64 {
        1.0 - 3.0 / self.beta
    }
}

/// Space-time grid carrying the magnetic control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldGridSpec {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
    pub n_time_knots: usize,
}

impl FieldGridSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(ModelError::NonFinite("field_grid.origin"));
        }
        if !self.spacing.iter().all(|h| *h > 0.0 && h.is_finite()) {
            return Err(invalid("field_grid.spacing", "must be positive"));
        }
        if !self.dims.iter().all(|&n| n >= 3) {
            return Err(invalid("field_grid.dims", "need at least 3 nodes per axis"));
        }
        if self.n_time_knots < 2 {
            return Err(invalid("field_grid.n_time_knots", "need at least 2 knots"));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Largest origin-centered radius whose ball lies inside the interior nodes.
    pub fn inner_radius(&self) -> f64 {
        (0..3)
            .map(|a| {
                let lo = self.origin[a] + self.spacing[a];
                let hi = self.origin[a] + (self.dims[a] as f64 - 2.0) * self.spacing[a];
                (-lo).min(hi)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Numerical and physical parameters of one forward/backward run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    pub softening: f64,
    pub sample_spacing: f64,
    #[serde(default)]
    pub weight_floor: f64,
    pub field_grid: FieldGridSpec,
    #[serde(default)]
    pub lambda: f64,
    pub admissible: AdmissibleSpec,
    pub cutoff: CutoffSpec,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(invalid("T", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_final) {
            return Err(invalid("dt", "must lie in (0, T]"));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid("dt", "must divide T"));
        }
        if !(self.softening > 0.0 && self.softening.is_finite()) {
            return Err(invalid("softening", "must be positive"));
        }
        if !(self.sample_spacing > 0.0 && self.sample_spacing.is_finite()) {
            return Err(invalid("sample_spacing", "must be positive"));
        }
        if !(self.weight_floor >= 0.0) {
            return Err(invalid("weight_floor", "must be nonnegative"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", "must be nonnegative"));
        }
        self.field_grid.validate()?;
        self.admissible.validate()?;
        self.cutoff.validate()?;
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Same configuration with the time step halved.
    pub fn refined(&self) -> Self {
        Self {
            dt: self.dt * 0.5,
            ..*self
        }
    }
}
