//! Run configuration: a single TOML document describing geometry, believed
//! and true process parameters, bounds, target, schedule, weights, and solver
//! knobs. Two configs are bundled: `configs/reference.toml` (the full-scale
//! protocol) and `configs/desk.toml` (a scaled-down protocol for fast runs).

use serde::{Deserialize, Serialize};

use layerbeam_core::beam::{Geometry, ModelParams};
use layerbeam_core::planner::{Bounds, PlanWeights, SolverOptions};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Pause for readings every this many controlled layers.
    pub period: usize,
    pub readings_per_stop: usize,
}

/// Optional report annotations carried verbatim into manifests, e.g. the
/// aggregate numbers measured on physical hardware for the same protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReferenceAnnotations {
    pub open_loop_mean_stiffness_g_per_mm: Option<f64>,
    pub open_loop_mean_pct_error: Option<f64>,
    pub open_loop_std_stiffness_g_per_mm: Option<f64>,
    pub closed_loop_mean_stiffness_g_per_mm: Option<f64>,
    pub closed_loop_mean_pct_error: Option<f64>,
    pub closed_loop_std_stiffness_g_per_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub target_compliance_mm_per_g: f64,
    /// Worker threads for Monte-Carlo trials; default = available cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
    pub geometry: Geometry,
    /// Parameters the controller believes.
    pub controller: ModelParams,
    /// Parameters the simulated process actually follows.
    pub simulator: ModelParams,
    pub bounds: Bounds,
    pub schedule: ScheduleConfig,
    pub weights: PlanWeights,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub reference: Option<ReferenceAnnotations>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let config_err = |e: layerbeam_core::Error| HarnessError::Config(e.to_string());
        self.geometry.validate().map_err(config_err)?;
        self.controller.validate().map_err(config_err)?;
        self.simulator.validate().map_err(config_err)?;
        self.bounds.validate().map_err(config_err)?;
        self.weights.validate_strict().map_err(config_err)?;
        if self.trials < 1 {
            return Err(HarnessError::Config("trials must be >= 1".into()));
        }
        if self.schedule.period < 1 {
            return Err(HarnessError::Config("schedule.period must be >= 1".into()));
        }
        if self.schedule.readings_per_stop < 1 {
            return Err(HarnessError::Config(
                "schedule.readings_per_stop must be >= 1".into(),
            ));
        }
        let target = self.target_compliance_mm_per_g;
        if !(target.is_finite() && target > 0.0) {
            return Err(HarnessError::Config(format!(
                "target_compliance_mm_per_g must be > 0, got {}",
                self.target_compliance_mm_per_g
            )));
        }
        if self.bounds.min_width_mm + self.controller.gamma <= 0.0
            || self.bounds.min_width_mm + self.simulator.gamma <= 0.0
        {
            return Err(HarnessError::Config(
                "min width + gamma must be positive for both parameter sets".into(),
            ));
        }
        Ok(())
    }

    pub fn target_stiffness(&self) -> f64 {
        1.0 / self.target_compliance_mm_per_g
    }
}

/// Flat parameter file with provenance, as produced by `calibrate` and
/// bundled as `configs/params_default.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma_p: f64,
    pub sigma_o: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<ParamDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers_per_specimen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub slope: f64,
    pub intercept: f64,
    pub residual_norm: f64,
}

impl ParamFile {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            gamma: self.gamma,
            sigma_p: self.sigma_p,
            sigma_o: self.sigma_o,
        }
    }

    pub fn from_params(params: &ModelParams, provenance: Provenance) -> Self {
        ParamFile {
            alpha: params.alpha,
            gamma: params.gamma,
            sigma_p: params.sigma_p,
            sigma_o: params.sigma_o,
            provenance,
            diagnostics: None,
        }
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Numerical(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let file: ParamFile =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        file.params()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}
