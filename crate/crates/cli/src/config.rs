//! Run configuration: one JSON document per run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use homp::models::{make_ewma_vol_with, FunctionalExpr, Parameter, Params};
use homp::{make_ho_gbm, make_ho_ou, HistorySegment, InitialCondition, ModelSpec, Optimizer};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Fit,
    Loglik,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Loglik => "loglik",
            Command::Check => "check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    HoGbm,
    HoOu,
    EwmaVol,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub family: Family,
    pub tau: f64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// `[lower, upper]`, either side `null` for unbounded.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, [Option<f64>; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<FunctionalExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<FunctionalExpr>,
    #[serde(default)]
    pub reverse_weights: bool,
    /// Constant initial squared-diffusion history (EWMA models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_sigma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryDoc {
    Constant(f64),
    /// Samples on the run grid, oldest first, `tau / dt + 1` of them.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDoc {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDoc {
    /// CSV path, relative to the config file.
    pub data: PathBuf,
    pub dt: f64,
    #[serde(default = "nelder_mead")]
    pub optimizer: Optimizer,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    #[serde(default = "default_restarts")]
    pub n_restarts: usize,
    /// Starting values of the fitted parameters; defaults to every model
    /// parameter at its configured value.
    #[serde(default)]
    pub initial: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bounds: BTreeMap<String, [Option<f64>; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckDoc {
    /// Grid spacing of the reference history.
    pub dt: f64,
    #[serde(default = "default_delta_t")]
    pub delta_t: f64,
    #[serde(default = "default_jm_samples")]
    pub n_samples: usize,
    /// Intermediate and terminal times of the Chapman–Kolmogorov check;
    /// default `2 tau` and `4 tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub terminal_time: Option<f64>,
    #[serde(default = "default_ck_samples")]
    pub ck_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelDoc,
    #[serde(default = "zero_history")]
    pub initial_history: HistoryDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckDoc>,
}

fn one() -> usize {
    1
}
fn nelder_mead() -> Optimizer {
    Optimizer::NelderMead
}
fn default_max_evals() -> usize {
    2000
}
fn default_restarts() -> usize {
    3
}
fn default_delta_t() -> f64 {
    1e-3
}
fn default_jm_samples() -> usize {
    100_000
}
fn default_ck_samples() -> usize {
    10_000
}
fn zero_history() -> HistoryDoc {
    HistoryDoc::Constant(0.0)
}

pub fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

fn bounded(name: &str, value: f64, bounds: &BTreeMap<String, [Option<f64>; 2]>) -> Parameter {
    let p = Parameter::new(name, value);
    match bounds.get(name) {
        Some([lo, hi]) => p.bounded(*lo, *hi),
        None => p,
    }
}

fn require(params: &BTreeMap<String, f64>, name: &str) -> Result<f64, String> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| format!("model parameter `{name}` is required"))
}

impl ModelDoc {
    pub fn build(&self) -> Result<ModelSpec, homp::Error> {
        let cfg = homp::Error::InvalidArgument;
        let mut model = match self.family {
            Family::HoOu => make_ho_ou(
                require(&self.params, "theta").map_err(cfg)?,
                require(&self.params, "sigma").map_err(cfg)?,
                self.tau,
            )?,
            Family::HoGbm => make_ho_gbm(
                require(&self.params, "alpha").map_err(cfg)?,
                require(&self.params, "beta").map_err(cfg)?,
                self.tau,
            )?,
            Family::EwmaVol => make_ewma_vol_with(
                require(&self.params, "lambda").map_err(cfg)?,
                self.tau,
                self.drift.clone().unwrap_or(FunctionalExpr::Const(0.0)),
                self.reverse_weights,
            )?,
            Family::Custom => {
                let drift = self.drift.clone().ok_or_else(|| cfg("custom model needs `drift`".into()))?;
                let diffusion = self
                    .diffusion
                    .clone()
                    .ok_or_else(|| cfg("custom model needs `diffusion`".into()))?;
                ModelSpec { tau: self.tau, drift, diffusion, params: Params::new() }
            }
        };
        // named-family parameters keep their declared bounds unless overridden
        for (name, &value) in &self.params {
            let mut p = model.params.param(name).cloned().unwrap_or_else(|| Parameter::new(name.as_str(), value));
            p.value = value;
            if let Some([lo, hi]) = self.bounds.get(name) {
                p = p.bounded(*lo, *hi);
            }
            model.params.insert(p);
        }
        model.validate()?;
        Ok(model)
    }
}

impl RunConfig {
    pub fn initial_condition(&self, model: &ModelSpec, dt: f64) -> Result<InitialCondition, homp::Error> {
        let m = homp::simulate::steps_per_window(model.tau, dt)?;
        let history = match &self.initial_history {
            HistoryDoc::Constant(c) => HistorySegment::constant(0.0, model.tau, m, *c)?,
            HistoryDoc::Values(v) => {
                if v.len() != m + 1 {
                    return Err(homp::Error::InvalidArgument(format!(
                        "initial_history has {} values but tau / dt + 1 = {}",
                        v.len(),
                        m + 1
                    )));
                }
                HistorySegment::new(0.0, model.tau, v.clone())?
            }
        };
        let mut init = InitialCondition::new(history);
        if model.reads_sigma2() {
            let c = self.model.initial_sigma2.ok_or_else(|| {
                homp::Error::InvalidArgument("model needs `initial_sigma2`".into())
            })?;
            init = init.with_sigma2(HistorySegment::constant(0.0, model.tau, m, c)?);
        }
        Ok(init)
    }

    pub fn fit_params(&self, fit: &FitDoc, model: &ModelSpec) -> Params {
        let mut out = Params::new();
        let initial: Vec<(String, f64)> = if fit.initial.is_empty() {
            model.params.iter().map(|p| (p.name.clone(), p.value)).collect()
        } else {
            fit.initial.iter().map(|(k, v)| (k.clone(), *v)).collect()
        };
        for (name, value) in initial {
            out.insert(bounded(&name, value, &fit.bounds));
        }
        out
    }
}
