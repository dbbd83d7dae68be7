//! Experiment configuration files.
//!
//! A configuration is a single JSON object. `kind` selects the experiment;
//! every other key is optional and falls back to the experiment's default.
//! Keys that the selected experiment does not use are rejected, as are
//! unknown keys.

use std::path::Path;

use batch_trajopt::mpc::studies::ReachingScenario;
use batch_trajopt::{DynamicsModel, SolverSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Wall-time grid over batch sizes and horizons.
    Benchmark,
    /// Best-of-batch merit under nested `ρ_init` grids.
    Case1Rho,
    /// Figure-8 tracking under a constant unmodeled tip force.
    Case2FixedForce,
    /// Sequential reaching under a swinging-payload disturbance.
    Case3Reaching,
    /// Schur-vs-KKT and Riccati equivalence suites.
    OracleSuite,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Benchmark => "benchmark",
            ExperimentKind::Case1Rho => "case1_rho",
            ExperimentKind::Case2FixedForce => "case2_fixed_force",
            ExperimentKind::Case3Reaching => "case3_reaching",
            ExperimentKind::OracleSuite => "oracle_suite",
        }
    }

    /// Optional keys this experiment reads, besides the common ones.
    fn keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Benchmark => &[
                "model",
                "horizons",
                "dt",
                "batch_sizes",
                "iterations",
                "repeats",
                "warmup",
                "solver",
            ],
            ExperimentKind::Case1Rho => &["instances", "batch_sizes", "iterations", "horizon", "dt", "merit_weight"],
            ExperimentKind::Case2FixedForce => &["seeds", "batch_sizes", "horizon", "dt", "steps", "radius", "solver"],
            ExperimentKind::Case3Reaching => &["scenario", "seeds", "batch_sizes", "horizon", "radius", "solver"],
            ExperimentKind::OracleSuite => &["instances", "riccati_instances"],
        }
    }
}

/// Keys every experiment accepts.
const COMMON_KEYS: [&str; 5] = ["kind", "workers", "seed", "output_dir", "plots"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Dynamics model name (benchmark).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Horizon `N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Horizon list (benchmark).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    /// Knot spacing `h` (s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Batch sizes `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Base random seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub riccati_instances: Option<usize>,
    /// Fixed SQP iteration budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    /// Closed-loop control steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Hypothesis radius (N).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Merit penalty weight `μ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merit_weight: Option<f64>,
    /// Solver-setting overrides, merged key by key (recursively) over the
    /// experiment's own solver settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<serde_json::Map<String, serde_json::Value>>,
    /// Full reaching scenario replacing the standard one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ReachingScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Write SVG plots next to the tables (default true).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plots: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

impl ExperimentConfig {
    /// Configuration of `kind` with every optional key absent.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            model: None,
            horizon: None,
            horizons: None,
            dt: None,
            batch_sizes: None,
            workers: None,
            seed: None,
            seeds: None,
            instances: None,
            riccati_instances: None,
            iterations: None,
            repeats: None,
            warmup: None,
            steps: None,
            radius: None,
            merit_weight: None,
            solver: None,
            scenario: None,
            output_dir: None,
            plots: None,
        }
    }

    /// Parses and validates a configuration document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical JSON form; reparses to an equal configuration.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configs serialize")
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn plots(&self) -> bool {
        self.plots.unwrap_or(true)
    }

    /// `base` with the `solver` overrides applied.
    pub fn solver_settings(&self, base: SolverSettings) -> Result<SolverSettings, ConfigError> {
        let Some(overrides) = &self.solver else {
            return Ok(base);
        };
        let mut value = serde_json::to_value(base).expect("settings serialize");
        merge(&mut value, &serde_json::Value::Object(overrides.clone()));
        let settings: SolverSettings =
            serde_json::from_value(value).map_err(|e| ConfigError(format!("solver: {e}")))?;
        settings.validate().map_err(|e| ConfigError(format!("solver: {e}")))?;
        Ok(settings)
    }

    /// Checks every key before anything runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let allowed = self.kind.keys();
        if let serde_json::Value::Object(fields) = self.to_json() {
            for key in fields.keys() {
                if !COMMON_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
                    return err(format!("key `{key}` does not apply to experiment `{}`", self.kind.name()));
                }
            }
        }
        let positive = |name: &str, v: Option<usize>| match v {
            Some(0) => err(format!("`{name}` must be positive")),
            _ => Ok(()),
        };
        positive("workers", self.workers)?;
        positive("horizon", self.horizon)?;
        positive("seeds", self.seeds)?;
        positive("instances", self.instances)?;
        positive("riccati_instances", self.riccati_instances)?;
        positive("iterations", self.iterations)?;
        positive("repeats", self.repeats)?;
        positive("steps", self.steps)?;
        for (name, list) in [("batch_sizes", &self.batch_sizes), ("horizons", &self.horizons)] {
            if let Some(list) = list {
                if list.is_empty() || list.contains(&0) {
                    return err(format!("`{name}` must be a non-empty list of positive integers"));
                }
            }
        }
        for (name, v) in [("dt", self.dt), ("radius", self.radius), ("merit_weight", self.merit_weight)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return err(format!("`{name}` must be a positive number"));
                }
            }
        }
        if let Some(model) = &self.model {
            if DynamicsModel::by_name(model).is_none() {
                return err(format!(
                    "unknown model `{model}` (expected double_integrator, pendulum, cartpole or two_link_arm)"
                ));
            }
        }
        if self.solver.is_some() {
            self.solver_settings(SolverSettings::default())?;
        }
        if let Some(s) = &self.scenario {
            s.validate().map_err(|e| ConfigError(format!("scenario: {e}")))?;
        }
        Ok(())
    }
}

/// Overwrites `base` with `patch`, descending into objects present in both.
fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
