//! Euler–Maruyama simulation with a rolling history window.
//!
//! The window at step `k` is the trailing `m + 1` values of a contiguous
//! buffer holding the initial history followed by every simulated value, so
//! the window used for coefficient evaluation is always exactly the path's
//! own trailing segment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::history::{HistorySegment, TimeGrid, Window};
use crate::io::write_series_csv;
use crate::models::{HistoryState, ModelSpec};
use crate::rng::NormalStream;

/// Relative tolerance for `tau / dt` to count as an integer.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        Self { dt, horizon, n_paths, seed }
    }

    /// Number of steps covering the horizon.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(invalid(format!(
                "horizon {} must be at least one step {}",
                self.horizon, self.dt
            )));
        }
        Ok((self.horizon / self.dt * (1.0 + GRID_TOL)).floor() as usize)
    }
}

/// Number of grid steps per window, if `dt` divides `tau`.
pub fn steps_per_window(tau: f64, dt: f64) -> Result<usize> {
    let ratio = tau / dt;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > GRID_TOL * ratio.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "dt = {dt} does not divide tau = {tau}"
        )));
    }
    Ok(m as usize)
}

/// Initial history over `[-tau, 0]` (or any window), plus the initial
/// squared-diffusion history for models that read one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub history: HistorySegment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<HistorySegment>,
}

impl InitialCondition {
    pub fn new(history: HistorySegment) -> Self {
        Self { history, sigma2: None }
    }

    pub fn with_sigma2(mut self, sigma2: HistorySegment) -> Self {
        self.sigma2 = Some(sigma2);
        self
    }

    /// Constant history `value` on `[t_end - tau, t_end]` sampled at `dt`.
    pub fn constant(t_end: f64, tau: f64, dt: f64, value: f64) -> Result<Self> {
        let m = steps_per_window(tau, dt)?;
        Ok(Self::new(HistorySegment::constant(t_end, tau, m, value)?))
    }
}

impl From<HistorySegment> for InitialCondition {
    fn from(history: HistorySegment) -> Self {
        Self::new(history)
    }
}

/// Keys the normal draws of one trajectory: draw for global step `k` is
/// `keyed_normal(seed, stream, step_offset + k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngKey {
    pub seed: u64,
    pub stream: u64,
    pub step_offset: u64,
}

impl RngKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream, step_offset: 0 }
    }
}

/// Output of [`advance`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `n_steps + 1` values, starting with the initial current value.
    pub values: Vec<f64>,
    /// Squared-diffusion values aligned with `values`, for models that read them.
    pub sigma2: Option<Vec<f64>>,
    /// State after the last step, ready to continue from.
    pub final_state: InitialCondition,
}

fn check_initial(model: &ModelSpec, init: &InitialCondition, dt: f64) -> Result<usize> {
    model.check_tau(init.history.tau())?;
    let m = steps_per_window(model.tau, dt)?;
    if init.history.cells() != m {
        return Err(Error::GridMismatch(format!(
            "initial history has {} cells but tau / dt = {m}",
            init.history.cells()
        )));
    }
    match (&init.sigma2, model.reads_sigma2()) {
        (None, true) => return Err(Error::MissingSigma2History),
        (Some(s), true) => {
            model.check_tau(s.tau())?;
            if s.cells() != m {
                return Err(Error::GridMismatch(format!(
                    "squared-diffusion history has {} cells but tau / dt = {m}",
                    s.cells()
                )));
            }
        }
        _ => {}
    }
    Ok(m)
}

/// Integrates `n_steps` Euler–Maruyama steps from `init`:
/// `y_{k+1} = y_k + drift(H_k) dt + diffusion(H_k) sqrt(dt) Z_k`, with the
/// coefficients evaluated at the window before the increment.
pub fn advance(
    model: &ModelSpec,
    init: &InitialCondition,
    dt: f64,
    n_steps: usize,
    key: RngKey,
) -> Result<Trajectory> {
    let m = check_initial(model, init, dt)?;
    let tau = model.tau;
    let sqrt_dt = dt.sqrt();
    let needs_sigma2 = model.reads_sigma2();

    let mut buf = Vec::with_capacity(m + 1 + n_steps);
    buf.extend_from_slice(init.history.samples());
    let mut s2buf = if needs_sigma2 {
        let s = init.sigma2.as_ref().ok_or(Error::MissingSigma2History)?;
        let mut v = Vec::with_capacity(m + 1 + n_steps);
        v.extend_from_slice(s.samples());
        Some(v)
    } else {
        None
    };

    let t0 = init.history.t_end();
    let mut normals = NormalStream::new(key.seed, key.stream, key.step_offset);
    for k in 0..n_steps {
        let t_end = t0 + k as f64 * dt;
        let state = Window::new(t_end, tau, &buf[k..k + m + 1])?;
        let sigma2 = match &s2buf {
            Some(v) => Some(Window::new(t_end, tau, &v[k..k + m + 1])?),
            None => None,
        };
        let (drift, diffusion) = model.coefficients(&HistoryState::new(state, sigma2))?;
        let z = normals.next_normal();
        let y = buf[k + m];
        let next = y + drift * dt + diffusion * sqrt_dt * z;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("state at step {} = {next}", k + 1)));
        }
        buf.push(next);
        if let Some(v) = s2buf.as_mut() {
            v.push(diffusion * diffusion);
        }
    }

    let t_final = t0 + n_steps as f64 * dt;
    let final_history = HistorySegment::new(t_final, tau, buf[n_steps..].to_vec())?;
    let final_sigma2 = match &s2buf {
        Some(v) => Some(HistorySegment::new(t_final, tau, v[n_steps..].to_vec())?),
        None => None,
    };
    let values = buf.split_off(m);
    let sigma2 = s2buf.map(|mut v| v.split_off(m));
    Ok(Trajectory {
        values,
        sigma2,
        final_state: InitialCondition { history: final_history, sigma2: final_sigma2 },
    })
}

/// A simulated or observed trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub initial_history: HistorySegment,
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_sigma2: Option<Vec<f64>>,
}

impl Path {
    /// `(time, value)` rows from the initial current value onward.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.times().zip(self.values.iter().copied())
    }

    pub fn to_csv(&self) -> String {
        write_series_csv(self.rows())
    }

    /// Trailing window ending at grid step `k`, drawing on the initial
    /// history for the part before the path starts.
    pub fn window_at(&self, k: usize) -> Result<HistorySegment> {
        let m = self.initial_history.cells();
        if k > self.grid.n_steps {
            return Err(invalid(format!("step {k} beyond path of {} steps", self.grid.n_steps)));
        }
        let hist = self.initial_history.samples();
        let mut samples = Vec::with_capacity(m + 1);
        if k < m {
            samples.extend_from_slice(&hist[k..m]);
            samples.extend_from_slice(&self.values[..=k]);
        } else {
            samples.extend_from_slice(&self.values[k - m..=k]);
        }
        HistorySegment::new(self.grid.time(k), self.initial_history.tau(), samples)
    }
}

/// Simulates path 0 of `cfg`.
pub fn simulate_path(model: &ModelSpec, init: &InitialCondition, cfg: &SimConfig) -> Result<Path> {
    simulate_indexed_path(model, init, cfg, 0)
}

/// Simulates path `path_index` of `cfg`; draws are keyed by
/// `(cfg.seed, path_index, step)`.
pub fn simulate_indexed_path(
    model: &ModelSpec,
    init: &InitialCondition,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Path> {
    let n_steps = cfg.n_steps()?;
    let traj = advance(model, init, cfg.dt, n_steps, RngKey::new(cfg.seed, path_index))?;
    Ok(Path {
        initial_history: init.history.clone(),
        grid: TimeGrid::new(init.history.t_end(), cfg.dt, n_steps)?,
        values: traj.values,
        realized_sigma2: traj.sigma2,
    })
}

/// `cfg.n_paths` independent paths, in path-index order. Output does not
/// depend on the number of worker threads.
pub fn simulate_ensemble(model: &ModelSpec, init: &InitialCondition, cfg: &SimConfig) -> Result<Vec<Path>> {
    cfg.n_steps()?;
    check_initial(model, init, cfg.dt)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_indexed_path(model, init, cfg, i))
        .collect()
}

/// Terminal values only, one per path; cheaper than [`simulate_ensemble`]
/// when the trajectories themselves are not needed.
pub fn simulate_terminal_values(
    model: &ModelSpec,
    init: &InitialCondition,
    cfg: &SimConfig,
) -> Result<Vec<f64>> {
    let n_steps = cfg.n_steps()?;
    check_initial(model, init, cfg.dt)?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            advance(model, init, cfg.dt, n_steps, RngKey::new(cfg.seed, i))
                .map(|t| t.values[n_steps])
        })
        .collect()
}
