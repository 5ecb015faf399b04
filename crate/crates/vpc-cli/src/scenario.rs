//! Scenario files: one JSON document per experiment.
//!
//! ```json
//! {
//!   "initial_datum": [{"center": [0,0,0,0,0,0], "r_x": 1, "r_v": 1, "amplitude": 1}],
//!   "target": [{"center": [0.5,0,0,0,0,0], "r_x": 1, "r_v": 1, "amplitude": 1}],
//!   "run": { ... },
//!   "optimize": {"step_size": 10, "max_iters": 20, "tol": 1e-6},
//!   "mode": "tracking",
//!   "initial_control": {"plateau": [0, 0, 1]}
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vpc_forward::ControlField;
use vpc_model::{BumpSum, RunConfig, Vec3};
use vpc_optimize::OptimizeConfig;

use crate::CliError;

/// Which target the tracking term compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The `target` bump list.
    #[default]
    Tracking,
    /// f̊ transported by the run with the initial control, so that control
    /// is optimal by construction.
    PerfectTracking,
}

/// Starting control on the scenario's field grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialControl {
    #[default]
    Zero,
    /// A constant field on the interior nodes, zero on the outer layer.
    Plateau([f64; 3]),
}

impl InitialControl {
    pub fn build(&self, run: &RunConfig) -> ControlField {
        match *self {
            InitialControl::Zero => ControlField::zeros(run.field_grid, run.t_final),
            InitialControl::Plateau(b) => ControlField::from_fn(run.field_grid, run.t_final, move |_, _| Vec3::from(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub initial_datum: BumpSum,
    #[serde(default)]
    pub target: BumpSum,
    pub run: RunConfig,
    #[serde(default)]
    pub optimize: Option<OptimizeConfig>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub initial_control: InitialControl,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Scenario(format!("at `{path}`: {}", e.into_inner()))
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |section: &str, e: &dyn std::fmt::Display| CliError::Scenario(format!("{section}: {e}"));
        if self.initial_datum.is_empty() {
            return Err(CliError::Scenario("initial_datum: needs at least one bump with nonzero amplitude".into()));
        }
        for (i, b) in self.initial_datum.bumps.iter().enumerate() {
            b.validate().map_err(|e| bad(&format!("initial_datum[{i}]"), &e))?;
        }
        for (i, b) in self.target.bumps.iter().enumerate() {
            b.validate().map_err(|e| bad(&format!("target[{i}]"), &e))?;
        }
        self.run.validate().map_err(|e| bad("run", &e))?;
        if let Some(o) = &self.optimize {
            o.validate().map_err(|e| bad("optimize", &e))?;
        }
        if let InitialControl::Plateau(b) = self.initial_control {
            if !b.iter().all(|c| c.is_finite()) {
                return Err(CliError::Scenario("initial_control.plateau: must be finite".into()));
            }
        }
        Ok(())
    }

    /// The optimize section, required by the descent and fixed-point commands.
    pub fn optimize(&self) -> Result<&OptimizeConfig, CliError> {
        self.optimize.as_ref().ok_or_else(|| CliError::Scenario("missing section `optimize`".into()))
    }

    /// SHA-256 of the canonical re-serialization, so formatting does not matter.
    pub fn hash(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&canonical).into()
    }
}
