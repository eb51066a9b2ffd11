//! Experiment configuration.
//!
//! A TOML document with one table per concern. Every key is optional and
//! falls back to the default listed in [`ExperimentConfig::default`];
//! unknown keys are rejected. `section.key=value` overrides are applied to
//! the parsed document before it is typed, so they obey the same rules.
//!
//! ```toml
//! seed = 0
//!
//! [scenario]
//! s_star = 20.0
//! mu = [0.1, 0.5, -0.2]
//! lead_model = "speed-tracking"   # or "accel-disturbance"
//!
//! [filter]          # belief used at evaluation time
//! n_s = 36
//! n_v = 36
//!
//! [train_filter]    # belief used during training
//! n_s = 5
//! n_v = 5
//!
//! [training]
//! episodes = 10000
//!
//! [evaluation]
//! thetas = [1, 2, 3, 4]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{ObsNoise, RlsState};
use crate::belief::FilterConfig;
use crate::dynamics::{ControllerGains, EquilibriumPoint, FvdThresholds, LeadModel, NoiseSpec, Scenario, ThetaParams};
use crate::error::{Error, Result};
use crate::policy::{DistortionGrid, PolicyShape, Standardizer, DEFAULT_ALPHA_FLOOR};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeadKind {
    SpeedTracking,
    AccelDisturbance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub s_star: f64,
    pub v_star: f64,
    pub s_st: f64,
    pub s_go: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Spacing-error gains of the CAV controller, one per vehicle.
    pub mu: [f64; 3],
    /// Velocity-error gains of the CAV controller, one per vehicle.
    pub eta: [f64; 3],
    pub sigma_lead_sq: f64,
    pub sigma_ga_sq: f64,
    pub sigma_gs_sq: f64,
    pub lead_model: LeadKind,
    pub lead_accel_variance: f64,
    pub lead_accel_bias: f64,
    pub dt: f64,
    pub substeps: u32,
    /// Weights of the (velocity, spacing) distortion.
    pub distortion_weights: [f64; 2],
    /// Driver types `(m, n)`; the belief support of every filter.
    pub theta_grid: Vec<[f64; 2]>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let eq = EquilibriumPoint::default();
        let thr = FvdThresholds::default();
        let gains = ControllerGains::stabilized();
        let noise = NoiseSpec::default();
        ScenarioConfig {
            s_star: eq.s_star,
            v_star: eq.v_star,
            s_st: thr.s_st,
            s_go: thr.s_go,
            v_max: thr.v_max,
            a_min: thr.a_min,
            a_max: thr.a_max,
            mu: gains.mu,
            eta: gains.eta,
            sigma_lead_sq: noise.sigma_lead_sq,
            sigma_ga_sq: noise.sigma_ga_sq,
            sigma_gs_sq: noise.sigma_gs_sq,
            lead_model: LeadKind::SpeedTracking,
            lead_accel_variance: 1.0,
            lead_accel_bias: 0.0,
            dt: 0.2,
            substeps: 1,
            distortion_weights: [1.0, 1.0],
            theta_grid: ThetaParams::GRID.iter().map(|t| t.as_array()).collect(),
        }
    }
}

impl ScenarioConfig {
    pub fn thresholds(&self) -> FvdThresholds {
        FvdThresholds {
            s_st: self.s_st,
            s_go: self.s_go,
            v_max: self.v_max,
            a_min: self.a_min,
            a_max: self.a_max,
        }
    }

    pub fn build(&self) -> Result<Scenario> {
        self.thresholds().validate()?;
        let finite = [
            ("scenario.s_star", self.s_star),
            ("scenario.v_star", self.v_star),
            ("scenario.lead_accel_bias", self.lead_accel_bias),
        ];
        for (key, v) in finite {
            if !v.is_finite() {
                return Err(Error::Config(format!("{key} must be finite, got {v}")));
            }
        }
        if !(self.s_star > 0.0 && self.v_star > 0.0 && self.v_star <= self.v_max) {
            return Err(Error::Config(format!(
                "scenario.s_star ({}) must be positive and scenario.v_star ({}) within (0, scenario.v_max]",
                self.s_star, self.v_star
            )));
        }
        let nonneg = [
            ("scenario.sigma_lead_sq", self.sigma_lead_sq),
            ("scenario.sigma_ga_sq", self.sigma_ga_sq),
            ("scenario.sigma_gs_sq", self.sigma_gs_sq),
            ("scenario.lead_accel_variance", self.lead_accel_variance),
            ("scenario.distortion_weights", self.distortion_weights[0]),
            ("scenario.distortion_weights", self.distortion_weights[1]),
        ];
        for (key, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{key} must be finite and nonnegative, got {v}")));
            }
        }
        if self.mu.iter().chain(&self.eta).any(|g| !g.is_finite()) {
            return Err(Error::Config("scenario.mu and scenario.eta must be finite".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("scenario.dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("scenario.substeps must be at least 1".into()));
        }
        self.thetas()?;
        Ok(Scenario {
            eq: EquilibriumPoint {
                s_star: self.s_star,
                v_star: self.v_star,
            },
            thresholds: self.thresholds(),
            gains: ControllerGains {
                mu: self.mu,
                eta: self.eta,
            },
            noise: NoiseSpec {
                sigma_lead_sq: self.sigma_lead_sq,
                sigma_ga_sq: self.sigma_ga_sq,
                sigma_gs_sq: self.sigma_gs_sq,
            },
            lead: match self.lead_model {
                LeadKind::SpeedTracking => LeadModel::SpeedTracking,
                LeadKind::AccelDisturbance => LeadModel::AccelDisturbance {
                    variance: self.lead_accel_variance,
                    bias: self.lead_accel_bias,
                },
            },
            dt: self.dt,
            substeps: self.substeps,
            distortion_weights: self.distortion_weights,
        })
    }

    pub fn thetas(&self) -> Result<Vec<ThetaParams>> {
        if self.theta_grid.is_empty() {
            return Err(Error::Config("scenario.theta_grid must not be empty".into()));
        }
        self.theta_grid
            .iter()
            .enumerate()
            .map(|(i, [m, n])| {
                ThetaParams::new(*m, *n).map_err(|e| Error::Config(format!("scenario.theta_grid[{i}]: {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Learned MGF locations.
    pub n_features: usize,
    pub hidden: usize,
    /// Half-width of the shareable velocity range around `v_star`.
    pub grid_v_half: f64,
    /// Half-width of the shareable spacing range around `s_star`.
    pub grid_s_half: f64,
    /// Grid points per axis; the actor emits `grid_points^2` cells.
    pub grid_points: usize,
    pub alpha_floor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let shape = PolicyShape::default();
        PolicyConfig {
            n_features: shape.n_features,
            hidden: shape.hidden,
            grid_v_half: 2.5,
            grid_s_half: 5.0,
            grid_points: 11,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.hidden == 0 || self.grid_points == 0 {
            return Err(Error::Config(
                "policy.n_features, policy.hidden and policy.grid_points must be positive".into(),
            ));
        }
        if !(self.grid_v_half >= 0.0 && self.grid_s_half >= 0.0) {
            return Err(Error::Config(
                "policy.grid_v_half and policy.grid_s_half must be nonnegative".into(),
            ));
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor.is_finite()) {
            return Err(Error::Config(format!(
                "policy.alpha_floor must be positive, got {}",
                self.alpha_floor
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> PolicyShape {
        PolicyShape {
            n_features: self.n_features,
            hidden: self.hidden,
            n_cells: self.grid_points * self.grid_points,
        }
    }

    pub fn grid(&self, eq: &EquilibriumPoint) -> DistortionGrid {
        DistortionGrid::centered(eq, self.grid_v_half, self.grid_s_half, self.grid_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Shared data per run.
    pub steps: usize,
    /// Runs per driver type.
    pub repetitions: usize,
    /// 1-based indices into `scenario.theta_grid`.
    pub thetas: Vec<usize>,
    /// Observation noise the Bayesian attacker assumes on true data.
    pub obs_sigma_v: f64,
    pub obs_sigma_s: f64,
    pub rls_forgetting: f64,
    pub rls_delta: f64,
    /// Write per-run belief and shared-data traces.
    pub write_traces: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let noise = ObsNoise::default();
        let rls = RlsState::default();
        EvalConfig {
            steps: 1200,
            repetitions: 10,
            thetas: vec![1, 2, 3, 4],
            obs_sigma_v: noise.sigma_v,
            obs_sigma_s: noise.sigma_s,
            rls_forgetting: rls.forgetting,
            rls_delta: rls.delta,
            write_traces: true,
        }
    }
}

impl EvalConfig {
    pub fn obs_noise(&self) -> ObsNoise {
        ObsNoise {
            sigma_v: self.obs_sigma_v,
            sigma_s: self.obs_sigma_s,
        }
    }

    pub fn rls_init(&self) -> RlsState {
        RlsState::new(self.rls_forgetting, self.rls_delta)
    }

    fn validate(&self, n_theta: usize) -> Result<()> {
        if let Some(bad) = self.thetas.iter().find(|&&k| k == 0 || k > n_theta) {
            return Err(Error::Config(format!(
                "evaluation.thetas entry {bad} is outside 1..={n_theta} (scenario.theta_grid)"
            )));
        }
        if !(self.obs_sigma_v > 0.0 && self.obs_sigma_s > 0.0) {
            return Err(Error::Config(
                "evaluation.obs_sigma_v and evaluation.obs_sigma_s must be positive".into(),
            ));
        }
        if !(self.rls_forgetting > 0.0 && self.rls_forgetting <= 1.0) {
            return Err(Error::Config(format!(
                "evaluation.rls_forgetting must lie in (0, 1], got {}",
                self.rls_forgetting
            )));
        }
        if !(self.rls_delta > 0.0 && self.rls_delta.is_finite()) {
            return Err(Error::Config(format!(
                "evaluation.rls_delta must be positive, got {}",
                self.rls_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Drives policy initialization, training and every evaluation stream.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    /// Belief used by the policy and both attackers during evaluation.
    pub filter: FilterConfig,
    /// Belief used by the policy during training.
    pub train_filter: FilterConfig,
    pub policy: PolicyConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    /// Desk-scale profile.
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            scenario: ScenarioConfig::default(),
            filter: FilterConfig {
                n_s: 36,
                n_v: 36,
                ..FilterConfig::default()
            },
            train_filter: FilterConfig {
                n_s: 5,
                n_v: 5,
                ..FilterConfig::default()
            },
            policy: PolicyConfig::default(),
            training: TrainConfig::default(),
            evaluation: EvalConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim_end().to_string())
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn override_value(value: &str) -> toml::Value {
    match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Applies `section.key=value` to a parsed document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for (depth, key) in parents.iter().enumerate() {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {assignment:?}: {} is not a section",
                keys[..=depth].join(".")
            ))
        })?;
    }
    table.insert(last.to_string(), override_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides::<&str>(text, &[])
    }

    pub fn parse_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let cfg: ExperimentConfig = if overrides.is_empty() {
            // typed parse keeps line/column information in error messages
            toml::from_str(text).map_err(config_err)?
        } else {
            let mut doc: toml::Table = text.parse().map_err(config_err)?;
            for o in overrides {
                apply_override(&mut doc, o.as_ref())?;
            }
            doc.try_into().map_err(config_err)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<S: AsRef<str>>(path: &Path, overrides: &[S]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_overrides(&text, overrides).map_err(|e| {
            Error::Config(format!(
                "{}: {}",
                path.display(),
                e.to_string().trim_start_matches("configuration error: ")
            ))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.build()?;
        let key = |section: &str, e: Error| match e {
            Error::Config(msg) => Error::Config(msg.replace("filter.", &format!("{section}."))),
            other => other,
        };
        self.filter.validate().map_err(|e| key("filter", e))?;
        self.train_filter.validate().map_err(|e| key("train_filter", e))?;
        self.policy.validate()?;
        self.training.validate()?;
        self.evaluation.validate(self.scenario.theta_grid.len())?;
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario.build()
    }

    pub fn thetas(&self) -> Result<Vec<ThetaParams>> {
        self.scenario.thetas()
    }

    pub fn grid(&self) -> DistortionGrid {
        self.policy.grid(&self.equilibrium())
    }

    pub fn equilibrium(&self) -> EquilibriumPoint {
        EquilibriumPoint {
            s_star: self.scenario.s_star,
            v_star: self.scenario.v_star,
        }
    }

    pub fn standardizer(&self) -> Standardizer {
        Standardizer::for_equilibrium(&self.equilibrium())
    }

    /// Training settings with the experiment seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training
        }
    }
}
