//! Experiment configuration and shipped presets.
//!
//! A config is one JSON document with `env`, `features`, `model`, `planner`
//! and `driver` sections. Hyperparameters keep their conventional table
//! names (`"variance of controls"`, `"prior parameter"`, ...).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, Environment};
use crate::error::{invalid, KnrError, Result};
use crate::features::{FeatureMap, FeatureSpec};
use crate::model::BallForm;
use crate::planner::MppiConfig;

pub const PRESET_NAMES: [&str; 3] = ["maze", "lqr-toy", "pendulum-toy"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub features: FeatureSpec,
    #[serde(default)]
    pub model: ModelConfig,
    pub planner: MppiConfig,
    pub driver: DriverConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Ridge parameter λ; defaults to `σ² / w_star_norm_bound²`.
    #[serde(rename = "prior parameter", default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Noise level assumed by the confidence radius; defaults to the
    /// environment noise, or 1 for noise-free environments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "ModelConfig::default_bound")]
    pub w_star_norm_bound: f64,
    #[serde(default = "ModelConfig::default_c1")]
    pub c1: f64,
    #[serde(default = "ModelConfig::default_form")]
    pub beta_form: BallForm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            sigma: None,
            w_star_norm_bound: Self::default_bound(),
            c1: Self::default_c1(),
            beta_form: Self::default_form(),
        }
    }
}

impl ModelConfig {
    fn default_bound() -> f64 {
        1.0
    }
    fn default_c1() -> f64 {
        16.0
    }
    fn default_form() -> BallForm {
        BallForm::Explicit
    }

    pub fn resolved_sigma(&self, env: &dyn Environment) -> f64 {
        self.sigma.unwrap_or(if env.noise_std() > 0.0 { env.noise_std() } else { 1.0 })
    }

    pub fn resolved_lambda(&self, env: &dyn Environment) -> f64 {
        let s = self.resolved_sigma(env);
        self.lambda
            .unwrap_or(s * s / (self.w_star_norm_bound * self.w_star_norm_bound))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    /// Plan against one posterior sample per episode.
    #[default]
    Thompson,
    /// Plan against the best of several candidates inside the confidence ball.
    Optimistic,
    /// Uniform controls within the bounds.
    RandomWalk,
    /// Plan against the true weights (requires them to exist).
    Pinned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub episodes: usize,
    #[serde(rename = "posterior reshaping constant")]
    pub reshape_scale: f64,
    #[serde(rename = "episodes between model updates", default = "DriverConfig::default_period")]
    pub model_update_period: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seeds used by sweeps; a single run uses `seed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default = "DriverConfig::default_oracle_rollouts")]
    pub oracle_rollouts: usize,
    #[serde(default)]
    pub mode: PolicyMode,
    /// Posterior draws considered per episode in optimistic mode.
    #[serde(default = "DriverConfig::default_candidates")]
    pub optimistic_candidates: usize,
}

impl DriverConfig {
    fn default_period() -> usize {
        1
    }
    fn default_oracle_rollouts() -> usize {
        100
    }
    fn default_candidates() -> usize {
        8
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| KnrError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "maze" => include_str!("../assets/presets/maze.json"),
            "lqr-toy" => include_str!("../assets/presets/lqr-toy.json"),
            "pendulum-toy" => include_str!("../assets/presets/pendulum-toy.json"),
            other => {
                return Err(KnrError::Config {
                    path: "preset".into(),
                    message: format!("unknown preset `{other}`; expected one of {}", PRESET_NAMES.join(", ")),
                })
            }
        };
        Self::from_json_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks beyond the schema; failures are reported as config
    /// errors naming the field.
    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, message: &str| {
            Err(KnrError::Config {
                path: path.into(),
                message: message.into(),
            })
        };
        if self.driver.episodes == 0 {
            return fail("driver.episodes", "must be at least 1");
        }
        if self.driver.model_update_period == 0 {
            return fail("driver.episodes between model updates", "must be at least 1");
        }
        if !(self.driver.reshape_scale >= 0.0) {
            return fail("driver.posterior reshaping constant", "must be non-negative");
        }
        if self.driver.oracle_rollouts == 0 {
            return fail("driver.oracle_rollouts", "must be at least 1");
        }
        if self.driver.optimistic_candidates == 0 {
            return fail("driver.optimistic_candidates", "must be at least 1");
        }
        if let Some(l) = self.model.lambda {
            if !(l > 0.0) {
                return fail("model.prior parameter", "must be positive");
            }
        }
        if let Some(s) = self.model.sigma {
            if !(s > 0.0) {
                return fail("model.sigma", "must be positive");
            }
        }
        if !(self.model.w_star_norm_bound > 0.0) {
            return fail("model.w_star_norm_bound", "must be positive");
        }
        self.planner.validate().map_err(|e| KnrError::Config {
            path: "planner".into(),
            message: e.to_string(),
        })
    }

    /// Seeds for a sweep: `driver.seeds`, or just `driver.seed`.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.driver.seeds.is_empty() {
            vec![self.driver.seed]
        } else {
            self.driver.seeds.clone()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.driver.seed = seed;
        self
    }

    pub fn build_env(&self) -> Result<Box<dyn Environment>> {
        self.env.build()
    }

    pub fn build_features(&self, env: &dyn Environment) -> Result<FeatureMap> {
        FeatureMap::from_spec(&self.features, env.d_x(), env.d_u(), self.driver.seed)
    }

    /// Planner config with missing bounds filled in from the environment.
    pub fn planner_for(&self, env: &dyn Environment) -> Result<MppiConfig> {
        let cfg = self.planner.clone().with_env_bounds(env);
        if cfg.u_min.len() != env.d_u() {
            return Err(invalid("u_min/u_max", "bounds must match the control dimension"));
        }
        Ok(cfg)
    }
}
