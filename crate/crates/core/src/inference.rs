//! Monte-Carlo diagnostics of the process's probabilistic structure:
//! Kramers–Moyal jump moments, Euler transition densities between adjacent
//! history blocks, and a Chapman–Kolmogorov composition check on terminal
//! values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::history::{HistorySegment, Window};
use crate::models::{HistoryState, ModelSpec};
use crate::rng::{derive_seed, NormalStream};
use crate::simulate::{advance, steps_per_window, InitialCondition, RngKey};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMomentEstimate {
    pub order: u32,
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub delta_t: f64,
}

/// Estimates `D^(n)(H) = E[(y(t + dt) - y(t))^n] / (n! dt)` from
/// `n_samples` independent one-step draws out of `init`.
pub fn estimate_jump_moment(
    model: &ModelSpec,
    init: &InitialCondition,
    order: u32,
    delta_t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<JumpMomentEstimate> {
    if !(order == 1 || order == 2) {
        return Err(invalid(format!("jump moment order must be 1 or 2, got {order}")));
    }
    let grid_dt = init.history.dt();
    if !(delta_t > 0.0) || delta_t > grid_dt * (1.0 + 1e-9) {
        return Err(invalid(format!(
            "delta_t must lie in (0, {grid_dt}], got {delta_t}"
        )));
    }
    if n_samples < 2 {
        return Err(invalid("at least two samples are needed for a standard error"));
    }
    model.check_tau(init.history.tau())?;
    let sigma2 = match (&init.sigma2, model.reads_sigma2()) {
        (None, true) => return Err(Error::MissingSigma2History),
        (s, _) => s.as_ref().map(|s| s.view()),
    };
    let (drift, diffusion) = model.coefficients(&HistoryState::new(init.history.view(), sigma2))?;

    let factorial = if order == 1 { 1.0 } else { 2.0 };
    let scale = 1.0 / (factorial * delta_t);
    let noise = diffusion * delta_t.sqrt();
    let mut normals = NormalStream::new(seed, 0, 0);
    let terms: Vec<f64> = (0..n_samples)
        .map(|_| {
            let dy = drift * delta_t + noise * normals.next_normal();
            dy.powi(order as i32) * scale
        })
        .collect();
    let (mean, sd) = mean_and_sd(&terms);
    Ok(JumpMomentEstimate {
        order,
        value: mean,
        std_error: sd / (n_samples as f64).sqrt(),
        n_samples,
        delta_t,
    })
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Log of the Gaussian Euler kernel `N(y1; y0 + drift dt, diffusion^2 dt)`.
#[inline]
pub fn step_logdensity(y0: f64, y1: f64, drift: f64, diffusion: f64, dt: f64) -> f64 {
    let var = diffusion * diffusion * dt;
    let r = y1 - y0 - drift * dt;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var
}

/// Sums per-step kernels for steps `0..n` of a contiguous buffer whose
/// step-`k` window is `buf[k..=k + m]`. `coefficients_at` returns drift and
/// diffusion for each step; `sigma2` carries the squared-diffusion buffer for
/// models that read one, indexed by global step `step_base + k`, and is
/// extended in place.
pub(crate) fn bridge_logdensity(
    buf: &[f64],
    m: usize,
    n: usize,
    dt: f64,
    mut coefficients_at: impl FnMut(usize, Option<&[f64]>) -> Result<(f64, f64)>,
    mut sigma2: Option<&mut Vec<f64>>,
    step_base: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..n {
        let s2 = sigma2.as_deref().map(|v| &v[step_base + k..step_base + k + m + 1]);
        let (drift, diffusion) = coefficients_at(k, s2)?;
        if diffusion == 0.0 {
            return Err(Error::DegenerateDiffusion { step: step_base + k });
        }
        total += step_logdensity(buf[k + m], buf[k + m + 1], drift, diffusion, dt);
        if let Some(v) = sigma2.as_deref_mut() {
            v.push(diffusion * diffusion);
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("log-density = {total}")));
    }
    Ok(total)
}

pub(crate) fn check_adjacent(from: &HistorySegment, to: &HistorySegment) -> Result<()> {
    let dt = from.dt();
    if (to.dt() - dt).abs() > 1e-9 * dt {
        return Err(Error::GridMismatch(format!(
            "block spacings differ: {} vs {}",
            dt,
            to.dt()
        )));
    }
    if (to.start() - from.t_end()).abs() > 1e-9 * dt.max(from.t_end().abs()) {
        return Err(Error::NonAdjacentBlocks(format!(
            "next block starts at {} but previous ends at {}",
            to.start(),
            from.t_end()
        )));
    }
    if to.samples()[0] != from.current() {
        return Err(Error::NonAdjacentBlocks(
            "blocks must share their boundary sample".into(),
        ));
    }
    if to.tau() > from.tau() * (1.0 + 1e-9) {
        return Err(Error::NonAdjacentBlocks(format!(
            "next block spans {} > tau {}",
            to.tau(),
            from.tau()
        )));
    }
    Ok(())
}

/// Euler pseudo-log-likelihood of `to` given the preceding block `from`:
/// the sum over the grid steps bridging the two blocks of
/// `log N(y_{k+1}; y_k + drift(H_k) dt, diffusion(H_k)^2 dt)`, with `H_k`
/// rolling through the concatenated data. `to` may be shorter than `tau`
/// (a trailing remainder block).
pub fn transition_logdensity(
    model: &ModelSpec,
    from: &HistorySegment,
    to: &HistorySegment,
) -> Result<f64> {
    transition_logdensity_with(model, from, to, None).map(|(ll, _)| ll)
}

/// As [`transition_logdensity`], also threading the squared-diffusion
/// history for models that read one. Returns the history at the end of `to`.
pub fn transition_logdensity_with(
    model: &ModelSpec,
    from: &HistorySegment,
    to: &HistorySegment,
    sigma2_from: Option<&HistorySegment>,
) -> Result<(f64, Option<HistorySegment>)> {
    model.check_tau(from.tau())?;
    check_adjacent(from, to)?;
    let m = from.cells();
    let n = to.cells();
    let dt = from.dt();
    let tau = model.tau;

    let mut buf = Vec::with_capacity(m + 1 + n);
    buf.extend_from_slice(from.samples());
    buf.extend_from_slice(&to.samples()[1..]);

    let mut s2buf = match (sigma2_from, model.reads_sigma2()) {
        (None, true) => return Err(Error::MissingSigma2History),
        (Some(s), true) => {
            if !s.same_grid(from) {
                return Err(Error::GridMismatch(
                    "squared-diffusion history must share the block grid".into(),
                ));
            }
            Some(s.samples().to_vec())
        }
        _ => None,
    };

    let t0 = from.t_end();
    let ll = bridge_logdensity(
        &buf,
        m,
        n,
        dt,
        |k, s2| {
            let t_end = t0 + k as f64 * dt;
            model.coefficients(&HistoryState::new(
                Window::new(t_end, tau, &buf[k..k + m + 1])?,
                s2.map(|s| Window::new(t_end, tau, s)).transpose()?,
            ))
        },
        s2buf.as_mut(),
        0,
    )?;
    let sigma2_end = match s2buf {
        Some(v) => Some(HistorySegment::new(to.t_end(), tau, v[n..].to_vec())?),
        None => None,
    };
    Ok((ll, sigma2_end))
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("KS statistic needs non-empty samples"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN in KS sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Two-sided 1% critical value for equal arm sizes, `1.63 sqrt(2 / n)`.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 * (2.0 / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CKReport {
    pub ks_statistic: f64,
    pub critical_value: f64,
    pub n_samples: usize,
    pub t: f64,
    #[serde(rename = "T")]
    pub terminal_time: f64,
}

impl CKReport {
    pub fn passed(&self) -> bool {
        self.ks_statistic < self.critical_value
    }
}

/// Seeds of the three simulation legs in [`ck_consistency_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CkSeeds {
    pub direct: u64,
    pub first_leg: u64,
    pub continuation: u64,
}

impl CkSeeds {
    pub fn derive(seed: u64) -> Self {
        Self {
            direct: derive_seed(seed, 1),
            first_leg: derive_seed(seed, 2),
            continuation: derive_seed(seed, 3),
        }
    }

    /// All legs share one seed; arm B then replays arm A draw for draw.
    pub fn shared(seed: u64) -> Self {
        Self { direct: seed, first_leg: seed, continuation: seed }
    }
}

/// Compares the law of `y(T)` simulated directly from `f0` against the law
/// obtained by simulating to `t`, restarting from the extracted window
/// `H_t` with fresh randomness, and continuing to `T`. Times are measured
/// from the end of `f0`.
pub fn ck_consistency_check(
    model: &ModelSpec,
    f0: &InitialCondition,
    t: f64,
    terminal_time: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CKReport> {
    ck_consistency_check_with(model, f0, t, terminal_time, n_samples, CkSeeds::derive(seed))
}

pub fn ck_consistency_check_with(
    model: &ModelSpec,
    f0: &InitialCondition,
    t: f64,
    terminal_time: f64,
    n_samples: usize,
    seeds: CkSeeds,
) -> Result<CKReport> {
    if !(t > 0.0 && t < terminal_time) {
        return Err(invalid(format!(
            "need 0 < t < T, got t = {t}, T = {terminal_time}"
        )));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    let dt = f0.history.dt();
    let n_t = steps_per_window(t, dt)
        .map_err(|_| invalid(format!("t = {t} is not on the grid of spacing {dt}")))?;
    let n_total = steps_per_window(terminal_time, dt)
        .map_err(|_| invalid(format!("T = {terminal_time} is not on the grid of spacing {dt}")))?;

    let arms: Vec<(f64, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let direct = advance(model, f0, dt, n_total, RngKey::new(seeds.direct, i))?;
            let first = advance(model, f0, dt, n_t, RngKey::new(seeds.first_leg, i))?;
            let key = RngKey { seed: seeds.continuation, stream: i, step_offset: n_t as u64 };
            let second = advance(model, &first.final_state, dt, n_total - n_t, key)?;
            Ok((direct.values[n_total], second.values[n_total - n_t]))
        })
        .collect::<Result<_>>()?;
    let (a, b): (Vec<f64>, Vec<f64>) = arms.into_iter().unzip();
    Ok(CKReport {
        ks_statistic: ks_two_sample(&a, &b)?,
        critical_value: ks_critical_1pct(n_samples),
        n_samples,
        t,
        terminal_time,
    })
}
