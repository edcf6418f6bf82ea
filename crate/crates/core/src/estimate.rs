//! Maximum-likelihood estimation from discrete, possibly irregular
//! observations: interpolation onto a uniform grid, partition into
//! `tau`-blocks, Euler pseudo-likelihood over consecutive blocks, and
//! derivative-free maximization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::history::{check_increasing, interpolate_at, HistorySegment, Window};
use crate::inference::{bridge_logdensity, transition_logdensity_with};
use crate::io::read_series_csv;
use crate::models::{HistorySource, LeafValues, ModelSpec, Params, WeightFunction};
use crate::optim::{clip, grid_search, NelderMead};
use crate::rng::NormalStream;
use crate::simulate::steps_per_window;

/// Raw observations `(t_i, y_i)` with strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(observations: Vec<(f64, f64)>) -> Result<Self> {
        if observations.len() < 2 {
            return Err(invalid("a dataset needs at least two observations"));
        }
        let times: Vec<f64> = observations.iter().map(|o| o.0).collect();
        check_increasing(&times)?;
        if let Some(i) = observations.iter().position(|o| !o.1.is_finite()) {
            return Err(Error::NonFinite(format!("observation {i} has value {}", observations[i].1)));
        }
        Ok(Self { observations })
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::new(read_series_csv(text)?)
    }

    pub fn observations(&self) -> &[(f64, f64)] {
        &self.observations
    }

    fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.0).collect()
    }

    fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.1).collect()
    }
}

/// Values on the uniform grid `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl RegularSeries {
    pub fn n_steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

/// Linear interpolation onto the grid from the first observation time to
/// the last grid node not beyond the final observation.
pub fn interpolate_dataset(data: &Dataset, dt: f64) -> Result<RegularSeries> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let times = data.times();
    let values = data.values();
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n = (span / dt * (1.0 + 1e-9)).floor() as usize;
    if n == 0 {
        return Err(invalid(format!("dataset spans {span}, less than one step {dt}")));
    }
    let snap = 1e-9 * dt;
    let series = (0..=n)
        .map(|i| interpolate_at(&times, &values, t0 + i as f64 * dt, snap))
        .collect();
    Ok(RegularSeries { t0, dt, values: series })
}

/// Consecutive `tau`-blocks sharing boundary samples. When the series does
/// not end on a block boundary, the last block is a shorter remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub segments: Vec<HistorySegment>,
    pub has_remainder: bool,
}

pub fn partition_blocks(series: &RegularSeries, tau: f64) -> Result<Blocks> {
    let m = steps_per_window(tau, series.dt)?;
    let steps = series.n_steps();
    if steps < 2 * m {
        return Err(Error::SeriesTooShort { steps, required: 2 * m });
    }
    let mut segments = Vec::with_capacity(steps / m + 1);
    let mut start = 0;
    while start + m <= steps {
        let end = start + m;
        segments.push(HistorySegment::new(
            series.time(end),
            tau,
            series.values[start..=end].to_vec(),
        )?);
        start = end;
    }
    let has_remainder = start < steps;
    if has_remainder {
        let r = steps - start;
        segments.push(HistorySegment::new(
            series.time(steps),
            r as f64 * series.dt,
            series.values[start..].to_vec(),
        )?);
    }
    Ok(Blocks { segments, has_remainder })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Optimizer {
    NelderMead,
    /// One axis of candidate values per fitted parameter, in `initial` order.
    GridSearch { lattice: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub dt: f64,
    pub optimizer: Optimizer,
    pub max_evals: usize,
    pub n_restarts: usize,
    /// Parameters to fit, with starting values and optional bounds; bounds
    /// left open fall back to the model's own.
    pub initial: Params,
    pub seed: u64,
    /// Constant seed value of the squared-diffusion history for models
    /// that read one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_sigma2: Option<f64>,
}

impl FitOptions {
    pub fn new(dt: f64, initial: Params) -> Self {
        Self {
            dt,
            optimizer: Optimizer::NelderMead,
            max_evals: 2000,
            n_restarts: 3,
            initial,
            seed: 0,
            initial_sigma2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: BTreeMap<String, f64>,
    pub loglik: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub restart_logliks: Vec<f64>,
    /// Best log-likelihood after each evaluation, across all restarts.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

/// Maps a parameter vector to a model.
pub trait ModelFamily {
    fn tau(&self) -> f64;
    fn build(&self, names: &[String], theta: &[f64]) -> Result<ModelSpec>;
    /// Declared bounds of parameter `name`.
    fn bounds(&self, name: &str) -> (f64, f64) {
        let _ = name;
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

impl ModelFamily for ModelSpec {
    fn tau(&self) -> f64 {
        self.tau
    }

    fn build(&self, names: &[String], theta: &[f64]) -> Result<ModelSpec> {
        let mut m = self.clone();
        for (n, &v) in names.iter().zip(theta) {
            m.params.set(n, v)?;
        }
        Ok(m)
    }

    fn bounds(&self, name: &str) -> (f64, f64) {
        self.params
            .param(name)
            .map(|p| p.bounds())
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
    }
}

/// Interpolated data prepared for repeated likelihood evaluation. The
/// parameter-free leaves (current value, moving integral) are computed once
/// per step.
pub struct PreparedData {
    values: Vec<f64>,
    moving_integrals: Vec<f64>,
    t0: f64,
    dt: f64,
    tau: f64,
    m: usize,
    /// `(first step, step count)` of each bridged block.
    blocks: Vec<(usize, usize)>,
}

struct CachedLeaves<'a> {
    current: f64,
    moving_integral: f64,
    state: Window<'a>,
    sigma2: Option<Window<'a>>,
}

impl LeafValues for CachedLeaves<'_> {
    fn current_value(&self) -> f64 {
        self.current
    }

    fn moving_integral(&self) -> f64 {
        self.moving_integral
    }

    fn weighted_integral(
        &self,
        weight: &WeightFunction,
        source: HistorySource,
        params: &Params,
    ) -> Result<f64> {
        let window = match source {
            HistorySource::State => self.state,
            HistorySource::Sigma2 => self.sigma2.ok_or(Error::MissingSigma2History)?,
        };
        let w = weight.resolve(window.tau, params)?;
        Ok(window.full_weighted_integral(|u| w.at(u)))
    }
}

impl PreparedData {
    pub fn new(data: &Dataset, tau: f64, dt: f64) -> Result<Self> {
        Self::from_series(&interpolate_dataset(data, dt)?, tau)
    }

    pub fn from_series(series: &RegularSeries, tau: f64) -> Result<Self> {
        let blocks = partition_blocks(series, tau)?;
        let m = blocks.segments[0].cells();
        let values = series.values.clone();
        let n_steps = values.len() - 1 - m;
        let t0 = series.time(m);
        let moving_integrals = (0..n_steps)
            .map(|k| Ok(Window::new(t0 + k as f64 * series.dt, tau, &values[k..=k + m])?.full_integral()))
            .collect::<Result<Vec<_>>>()?;
        let spans = blocks.segments[1..]
            .iter()
            .scan(0usize, |start, seg| {
                let span = (*start, seg.cells());
                *start += seg.cells();
                Some(span)
            })
            .collect();
        Ok(Self { values, moving_integrals, t0, dt: series.dt, tau, m, blocks: spans })
    }

    /// Sum over block pairs of the bridging log-densities.
    pub fn log_likelihood(&self, model: &ModelSpec, initial_sigma2: Option<f64>) -> Result<f64> {
        model.check_tau(self.tau)?;
        let m = self.m;
        let mut s2buf = match (model.reads_sigma2(), initial_sigma2) {
            (false, _) => None,
            (true, None) => return Err(Error::MissingSigma2History),
            (true, Some(c)) => {
                let mut v = Vec::with_capacity(self.values.len());
                v.resize(m + 1, c);
                Some(v)
            }
        };
        let mut total = 0.0;
        for &(start, n) in &self.blocks {
            total += bridge_logdensity(
                &self.values[start..],
                m,
                n,
                self.dt,
                |k, s2| {
                    let step = start + k;
                    let t_end = self.t0 + step as f64 * self.dt;
                    model.coefficients(&CachedLeaves {
                        current: self.values[step + m],
                        moving_integral: self.moving_integrals[step],
                        state: Window::new(t_end, self.tau, &self.values[step..=step + m])?,
                        sigma2: s2.map(|s| Window::new(t_end, self.tau, s)).transpose()?,
                    })
                },
                s2buf.as_mut(),
                start,
            )?;
        }
        Ok(total)
    }
}

/// Log of the block-transition product over the interpolated data.
pub fn log_likelihood(model: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<f64> {
    PreparedData::new(data, model.tau, opts.dt)?.log_likelihood(model, opts.initial_sigma2)
}

/// Same quantity assembled pair by pair from
/// [`crate::inference::transition_logdensity`]; slower, used as a
/// cross-check of the cached path.
pub fn log_likelihood_by_blocks(model: &ModelSpec, data: &Dataset, opts: &FitOptions) -> Result<f64> {
    let series = interpolate_dataset(data, opts.dt)?;
    let blocks = partition_blocks(&series, model.tau)?;
    let mut sigma2 = match (model.reads_sigma2(), opts.initial_sigma2) {
        (false, _) => None,
        (true, None) => return Err(Error::MissingSigma2History),
        (true, Some(c)) => {
            let first = &blocks.segments[0];
            Some(HistorySegment::constant(first.t_end(), first.tau(), first.cells(), c)?)
        }
    };
    let mut total = 0.0;
    for pair in blocks.segments.windows(2) {
        let (ll, next) = transition_logdensity_with(model, &pair[0], &pair[1], sigma2.as_ref())?;
        total += ll;
        if let (Some(next), Some(prev)) = (next, sigma2.as_ref()) {
            // a short remainder yields a short history; pad from the previous one
            sigma2 = Some(if next.cells() == prev.cells() {
                next
            } else {
                let keep = prev.cells() - next.cells();
                let mut s = prev.samples()[prev.cells() - keep..].to_vec();
                s.extend_from_slice(&next.samples()[1..]);
                HistorySegment::new(next.t_end(), prev.tau(), s)?
            });
        }
    }
    Ok(total)
}

/// Maximizes the pseudo-likelihood over the parameters named in
/// `opts.initial`.
pub fn fit_mle(family: &impl ModelFamily, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    if opts.max_evals == 0 {
        return Err(invalid("max_evals must be at least 1"));
    }
    if opts.initial.is_empty() {
        return Err(invalid("no parameters to fit"));
    }
    let names = opts.initial.names();
    let x0: Vec<f64> = opts.initial.iter().map(|p| p.value).collect();
    let (lower, upper): (Vec<f64>, Vec<f64>) = opts
        .initial
        .iter()
        .map(|p| {
            let (flo, fhi) = family.bounds(&p.name);
            (p.lower.unwrap_or(flo), p.upper.unwrap_or(fhi))
        })
        .unzip();
    for (i, name) in names.iter().enumerate() {
        if !(lower[i] <= x0[i] && x0[i] <= upper[i]) {
            return Err(invalid(format!(
                "initial {name} = {} outside bounds [{}, {}]",
                x0[i], lower[i], upper[i]
            )));
        }
    }
    // surface configuration errors (unknown names, bad tau) before optimizing
    family.build(&names, &x0)?;
    let prepared = PreparedData::new(data, family.tau(), opts.dt)?;

    let loglik = |theta: &[f64]| -> f64 {
        family
            .build(&names, theta)
            .and_then(|m| prepared.log_likelihood(&m, opts.initial_sigma2))
            .unwrap_or(f64::NEG_INFINITY)
    };

    let mut restart_logliks = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut n_evals = 0;
    let mut best: Option<(Vec<f64>, f64, bool)> = None;

    let mut record = |x: Vec<f64>, fx: f64, converged: bool, t: Vec<f64>, evals: usize| {
        let ll = -fx;
        let floor = trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        trace.extend(t.into_iter().map(|v| (-v).max(floor)));
        restart_logliks.push(ll);
        n_evals += evals;
        let better = match &best {
            None => true,
            Some((_, b, _)) => ll > *b,
        };
        if better {
            best = Some((x, ll, converged));
        }
    };

    match &opts.optimizer {
        Optimizer::NelderMead => {
            let nm = NelderMead { max_evals: opts.max_evals, ..Default::default() };
            for r in 0..opts.n_restarts.max(1) {
                let start = if r == 0 {
                    x0.clone()
                } else {
                    jittered(&x0, &lower, &upper, opts.seed, r as u64)
                };
                let out = nm.minimize(|x| -loglik(x), &start, &lower, &upper);
                record(out.x, out.fx, out.converged, out.trace, out.n_evals);
            }
        }
        Optimizer::GridSearch { lattice } => {
            if lattice.len() != names.len() {
                return Err(invalid(format!(
                    "grid search lattice has {} axes for {} parameters",
                    lattice.len(),
                    names.len()
                )));
            }
            let axes: Vec<Vec<f64>> = lattice
                .iter()
                .enumerate()
                .map(|(i, a)| a.iter().map(|&v| v.clamp(lower[i], upper[i])).collect())
                .collect();
            let out = grid_search(|x| -loglik(x), &axes, opts.max_evals);
            record(out.x, out.fx, out.converged, out.trace, out.n_evals);
        }
    }

    let (theta, ll, converged) = best.expect("at least one restart");
    if !ll.is_finite() {
        return Err(Error::NoFiniteEvaluation { evals: n_evals });
    }
    Ok(FitResult {
        theta_hat: names.into_iter().zip(theta).collect(),
        loglik: ll,
        n_evals,
        converged,
        restart_logliks,
        trace,
    })
}

/// Restart point: each coordinate perturbed by 25% of its magnitude (at
/// least 0.05), clipped to the bounds.
fn jittered(x0: &[f64], lower: &[f64], upper: &[f64], seed: u64, restart: u64) -> Vec<f64> {
    let mut z = NormalStream::new(seed, restart, 0);
    let mut x: Vec<f64> = x0
        .iter()
        .map(|&v| v + 0.25 * v.abs().max(0.05) * z.next_normal())
        .collect();
    clip(&mut x, lower, upper);
    x
}
