//! Run configuration: one JSON document, with command-line overrides applied
//! to the parsed value before it is checked against the schema.

use std::path::{Path, PathBuf};

use flocklab::diagnostics::CensusParams;
use flocklab::dynamics::{EnsembleState, SystemSpec};
use flocklab::harness::{SampleSpec, TrialParams, DEFAULT_EPS_A};
use flocklab::integrator::IntegrationParams;
use flocklab::sticky::{StickyParams, DEFAULT_TAU_EVENT, DEFAULT_TAU_GEOM};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const PARALLELISM_ENV: &str = "FLOCKLAB_PARALLELISM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub integration: IntegrationParams,
    #[serde(default)]
    pub sampling: Option<SampleSpec>,
    /// Explicit initial state; takes precedence over `sampling` for single runs.
    #[serde(default)]
    pub initial: Option<InitialState>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub sticky: Option<StickyConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; `None` defers to the environment, then to the rayon default.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

fn default_trials() -> usize {
    100
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { trials: default_trials(), master_seed: 0, parallelism: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_eps_a")]
    pub eps_a: f64,
    /// Velocity grouping tolerance; `None` scales it to the initial velocity diameter.
    #[serde(default)]
    pub eps_v: Option<f64>,
    #[serde(default = "default_relation_tol")]
    pub relation_tol: f64,
    #[serde(default = "default_relation_bound")]
    pub relation_bound: i64,
    /// Fitting window for decay rates; `None` means `[1, T]`.
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
}

fn default_eps_a() -> f64 {
    DEFAULT_EPS_A
}

fn default_relation_tol() -> f64 {
    CensusParams::default().relation_tol
}

fn default_relation_bound() -> i64 {
    CensusParams::default().relation_bound
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eps_a: default_eps_a(),
            eps_v: None,
            relation_tol: default_relation_tol(),
            relation_bound: default_relation_bound(),
            fit_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StickyConfig {
    pub r0: f64,
    pub t_max: f64,
    #[serde(default = "default_tau_event")]
    pub tau_event: f64,
    #[serde(default = "default_tau_geom")]
    pub tau_geom: f64,
}

fn default_tau_event() -> f64 {
    DEFAULT_TAU_EVENT
}

fn default_tau_geom() -> f64 {
    DEFAULT_TAU_GEOM
}

impl StickyConfig {
    pub fn params(&self) -> StickyParams {
        StickyParams { t_max: self.t_max, tau_event: self.tau_event, tau_geom: self.tau_geom }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_prefix() -> String {
    "run".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir(), prefix: default_prefix() }
    }
}

impl OutputConfig {
    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{}", self.prefix, suffix))
    }
}

/// Sets `path` (dot separated) in `doc` to `value`, creating objects on the way.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (k, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(CliError::config(format!("empty key in override path `{path}`")));
        }
        let obj = match cur {
            Value::Object(map) => map,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(CliError::config(format!("override path `{path}` crosses a non-object at `{key}`"))),
        };
        if k + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*key).to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Parses `key=json`; a value that is not valid JSON is taken as a string.
pub fn parse_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, val) = raw
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{raw}` is not of the form key=value")))?;
    let value = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
    Ok((key.trim().to_string(), value))
}

pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    from_str(&text, overrides).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn from_str(text: &str, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let located = |e: serde_path_to_error::Error<serde_json::Error>| {
        let path = e.path().to_string();
        CliError::config(format!("field `{path}`: {}", e.into_inner()))
    };
    let cfg: RunConfig = if overrides.is_empty() {
        // parsing the raw text keeps line and column in error messages
        serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(text)).map_err(located)?
    } else {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        for (k, v) in overrides {
            set_path(&mut doc, k, v.clone())?;
        }
        serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("field `{path}` (after overrides): {}", e.into_inner()))
        })?
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate().map_err(CliError::config_from)?;
        self.integration.validate().map_err(CliError::config_from)?;
        self.trial_params().validate().map_err(CliError::config_from)?;
        if let Some(s) = &self.sampling {
            s.validate(&self.system).map_err(CliError::config_from)?;
        }
        if let Some(init) = &self.initial {
            self.state_from(init).check(&self.system).map_err(CliError::config_from)?;
        }
        if self.sweep.parallelism == Some(0) {
            return Err(CliError::config("sweep.parallelism must be at least 1"));
        }
        if !(self.thresholds.relation_tol > 0.0) || self.thresholds.relation_bound < 1 {
            return Err(CliError::config("relation tolerance and bound must be positive"));
        }
        Ok(())
    }

    fn state_from(&self, init: &InitialState) -> EnsembleState {
        EnsembleState::new(init.x.clone(), init.v.clone())
    }

    /// The explicit initial state, or a sample drawn from `sampling`.
    pub fn initial_state(&self) -> Result<EnsembleState, CliError> {
        if let Some(init) = &self.initial {
            return Ok(self.state_from(init));
        }
        let spec = self
            .sampling
            .as_ref()
            .ok_or_else(|| CliError::config("config needs either `initial` or `sampling`"))?;
        flocklab::harness::sample_initial(spec, &self.system).map_err(CliError::config_from)
    }

    pub fn census_params(&self) -> Option<CensusParams> {
        self.thresholds.eps_v.map(|eps_v| CensusParams {
            eps_v,
            relation_tol: self.thresholds.relation_tol,
            relation_bound: self.thresholds.relation_bound,
        })
    }

    pub fn trial_params(&self) -> TrialParams {
        TrialParams {
            integration: self.integration,
            eps_a: self.thresholds.eps_a,
            census: self.census_params(),
            fit_window: self.thresholds.fit_window,
        }
    }

    /// Config value, then the environment variable, then 0 (rayon default).
    pub fn parallelism(&self) -> Result<usize, CliError> {
        if let Some(p) = self.sweep.parallelism {
            return Ok(p);
        }
        match std::env::var(PARALLELISM_ENV) {
            Ok(raw) => raw
                .trim()
                .parse::<usize>()
                .map_err(|_| CliError::config(format!("{PARALLELISM_ENV} must be a positive integer, got `{raw}`"))),
            Err(_) => Ok(0),
        }
    }
}
