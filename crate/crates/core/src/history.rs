//! History segments: the trajectory of a process over the trailing window
//! `[t - tau, t]`, sampled on a uniform grid and read back by linear
//! interpolation.
//!
//! Quadrature uses the trapezoidal rule on the same grid, so it is exact for
//! every piecewise-linear segment aligned to the grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Fraction of a grid step within which a coordinate is treated as a node.
const NODE_SNAP: f64 = 1e-9;

/// Uniform time grid `t0, t0 + dt, ..., t0 + n_steps * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(invalid("time grid needs at least one step"));
        }
        if !t0.is_finite() {
            return Err(invalid("grid origin must be finite"));
        }
        Ok(Self { t0, dt, n_steps })
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.time(k))
    }
}

/// Borrowed view of a history window. Simulation and likelihood code slide
/// one of these along a contiguous buffer instead of materializing segments.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub t_end: f64,
    pub tau: f64,
    samples: &'a [f64],
}

impl<'a> Window<'a> {
    /// `samples` must hold at least two values spanning `tau`.
    pub fn new(t_end: f64, tau: f64, samples: &'a [f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid("a history window needs at least two samples"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { t_end, tau, samples })
    }

    #[inline]
    pub fn samples(&self) -> &'a [f64] {
        self.samples
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.tau / (self.samples.len() - 1) as f64
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.t_end - self.tau
    }

    #[inline]
    pub fn current(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    fn cells(&self) -> usize {
        self.samples.len() - 1
    }

    /// Grid position of `x` measured in steps from the window start, with
    /// near-node coordinates snapped onto the node.
    fn position(&self, x: f64) -> Result<f64> {
        let dt = self.dt();
        let start = self.start();
        let slack = NODE_SNAP * dt;
        if !(x >= start - slack && x <= self.t_end + slack) {
            return Err(Error::OutOfWindow { x, start, end: self.t_end });
        }
        if x == self.t_end {
            return Ok(self.cells() as f64);
        }
        let pos = ((x - start) / dt).clamp(0.0, self.cells() as f64);
        let nearest = pos.round();
        if (pos - nearest).abs() <= NODE_SNAP {
            Ok(nearest)
        } else {
            Ok(pos)
        }
    }

    fn value_at_position(&self, pos: f64) -> f64 {
        let i = (pos.floor() as usize).min(self.cells() - 1);
        let frac = pos - i as f64;
        if frac == 0.0 {
            self.samples[i]
        } else if frac == 1.0 {
            self.samples[i + 1]
        } else {
            let lo = self.samples[i];
            lo + frac * (self.samples[i + 1] - lo)
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let pos = self.position(x)?;
        Ok(self.value_at_position(pos))
    }

    /// Trapezoidal integral of `H` over the full window.
    pub fn full_integral(&self) -> f64 {
        let s = self.samples;
        let n = s.len();
        let interior: f64 = s[1..n - 1].iter().sum();
        self.dt() * (interior + 0.5 * (s[0] + s[n - 1]))
    }

    /// Trapezoidal integral of `w(u) * H` over the full window, where `u` is
    /// the offset of each node from the window start.
    pub fn full_weighted_integral(&self, w: impl Fn(f64) -> f64) -> f64 {
        let s = self.samples;
        let n = s.len();
        let dt = self.dt();
        let mut acc = 0.0;
        for (i, &v) in s.iter().enumerate() {
            let f = w(i as f64 * dt) * v;
            acc += if i == 0 || i == n - 1 { 0.5 * f } else { f };
        }
        dt * acc
    }

    /// Trapezoidal integral of `w(x) * H(x)` over `[a, b]` with `x` in
    /// absolute time. Partial end cells use interpolated endpoint values.
    pub fn integral_between(&self, a: f64, b: f64, w: impl Fn(f64) -> f64) -> Result<f64> {
        if a > b {
            return Err(invalid(format!("integration bounds reversed: {a} > {b}")));
        }
        let pa = self.position(a)?;
        let pb = self.position(b)?;
        let dt = self.dt();
        let start = self.start();
        let x_of = |p: f64| start + p * dt;
        let f = |p: f64, x: f64| w(x) * self.value_at_position(p);

        let mut acc = 0.0;
        let mut prev_p = pa;
        let mut prev_f = f(pa, a);
        let mut node = pa.floor() as usize + 1;
        while (node as f64) < pb {
            let p = node as f64;
            let fx = f(p, x_of(p));
            acc += 0.5 * (prev_f + fx) * (p - prev_p);
            prev_p = p;
            prev_f = fx;
            node += 1;
        }
        if pb > prev_p {
            let fb = f(pb, b);
            acc += 0.5 * (prev_f + fb) * (pb - prev_p);
        }
        Ok(acc * dt)
    }

    pub fn to_segment(&self) -> HistorySegment {
        HistorySegment {
            t_end: self.t_end,
            tau: self.tau,
            samples: self.samples.to_vec(),
        }
    }
}

/// The state function of a higher-order Markov process: samples of the
/// trajectory over `[t_end - tau, t_end]`, sample `i` at
/// `t_end - tau + i * tau / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySegment {
    t_end: f64,
    tau: f64,
    samples: Vec<f64>,
}

impl HistorySegment {
    pub fn new(t_end: f64, tau: f64, samples: Vec<f64>) -> Result<Self> {
        Window::new(t_end, tau, &samples)?;
        if !t_end.is_finite() {
            return Err(invalid("window end must be finite"));
        }
        Ok(Self { t_end, tau, samples })
    }

    /// Constant history `value` on `m + 1` nodes ending at `t_end`.
    pub fn constant(t_end: f64, tau: f64, m: usize, value: f64) -> Result<Self> {
        Self::new(t_end, tau, vec![value; m + 1])
    }

    /// Samples `f` at the `m + 1` grid nodes.
    pub fn from_fn(t_end: f64, tau: f64, m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        let dt = tau / m as f64;
        let start = t_end - tau;
        let samples = (0..=m)
            .map(|i| if i == m { f(t_end) } else { f(start + i as f64 * dt) })
            .collect();
        Self::new(t_end, tau, samples)
    }

    /// Linearly interpolates irregular `(times, values)` onto the `m + 1`
    /// node grid of the window that ends at the last observation.
    pub fn from_samples(times: &[f64], values: &[f64], tau: f64, m: usize) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::LengthMismatch { left: times.len(), right: values.len() });
        }
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid(format!("tau must be positive, got {tau}")));
        }
        check_increasing(times)?;
        let t_end = *times
            .last()
            .ok_or_else(|| invalid("no observations supplied"))?;
        let start = t_end - tau;
        let dt = tau / m as f64;
        if times[0] > start + NODE_SNAP * dt {
            return Err(Error::WindowNotCovered { start, end: t_end });
        }
        let samples = (0..=m)
            .map(|i| {
                if i == m {
                    values[values.len() - 1]
                } else {
                    interpolate_at(times, values, start + i as f64 * dt, NODE_SNAP * dt)
                }
            })
            .collect();
        Self::new(t_end, tau, samples)
    }

    #[inline]
    pub fn view(&self) -> Window<'_> {
        Window { t_end: self.t_end, tau: self.tau, samples: &self.samples }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn start(&self) -> f64 {
        self.t_end - self.tau
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Number of grid cells `m`.
    pub fn cells(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.view().dt()
    }

    pub fn current(&self) -> f64 {
        self.view().current()
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        self.view().evaluate(x)
    }

    pub fn moving_integral(&self, a: f64, b: f64) -> Result<f64> {
        self.view().integral_between(a, b, |_| 1.0)
    }

    pub fn weighted_integral(&self, w: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        self.view().integral_between(a, b, w)
    }

    /// Advances the window by one grid step, appending `new_value`.
    pub fn roll(&self, new_value: f64) -> Self {
        let mut next = self.clone();
        next.roll_in_place(new_value);
        next
    }

    pub fn roll_in_place(&mut self, new_value: f64) {
        let dt = self.dt();
        self.samples.rotate_left(1);
        let last = self.samples.len() - 1;
        self.samples[last] = new_value;
        self.t_end += dt;
    }

    /// True if both segments sit on the same grid.
    pub fn same_grid(&self, other: &Self) -> bool {
        self.samples.len() == other.samples.len()
            && approx_eq(self.tau, other.tau)
            && approx_eq(self.t_end, other.t_end)
    }
}

/// Pointwise directional difference quotient `(V(H + eps h) - V(H)) / eps`.
pub fn gateaux_derivative(
    transform: impl Fn(f64) -> f64,
    history: &HistorySegment,
    direction: &HistorySegment,
    eps: f64,
) -> Result<HistorySegment> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if !history.same_grid(direction) {
        return Err(Error::GridMismatch(
            "direction must share the history's grid".into(),
        ));
    }
    let samples = history
        .samples
        .iter()
        .zip(&direction.samples)
        .map(|(&f, &h)| (transform(f + eps * h) - transform(f)) / eps)
        .collect();
    HistorySegment::new(history.t_end, history.tau, samples)
}

pub(crate) fn check_increasing(times: &[f64]) -> Result<()> {
    for (i, pair) in times.windows(2).enumerate() {
        if !(pair[1] > pair[0]) {
            return Err(Error::NonMonotoneTimes { index: i + 1 });
        }
    }
    if let Some(i) = times.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonMonotoneTimes { index: i });
    }
    Ok(())
}

/// Piecewise-linear interpolant of `(times, values)` at `x`; returns an
/// observed value unchanged when `x` is within `snap` of its time.
pub(crate) fn interpolate_at(times: &[f64], values: &[f64], x: f64, snap: f64) -> f64 {
    let j = times.partition_point(|&t| t <= x);
    if j > 0 && (x - times[j - 1]).abs() <= snap {
        return values[j - 1];
    }
    if j < times.len() && (times[j] - x).abs() <= snap {
        return values[j];
    }
    if j == 0 {
        return values[0];
    }
    if j == times.len() {
        return values[j - 1];
    }
    let (t0, t1) = (times[j - 1], times[j]);
    let (v0, v1) = (values[j - 1], values[j]);
    v0 + (v1 - v0) * (x - t0) / (t1 - t0)
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(samples: &[f64], t_end: f64, tau: f64) -> HistorySegment {
        HistorySegment::new(t_end, tau, samples.to_vec()).unwrap()
    }

    #[test]
    fn from_samples_midpoint() {
        let h = HistorySegment::from_samples(&[0.0, 1.0], &[0.0, 2.0], 1.0, 2).unwrap();
        assert_eq!(h.samples(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn from_samples_constant() {
        let h = HistorySegment::from_samples(&[0.0, 0.5, 1.0], &[5.0; 3], 1.0, 4).unwrap();
        assert_eq!(h.samples(), &[5.0; 5]);
    }

    #[test]
    fn from_samples_identity_on_grid() {
        let times = [0.0, 0.3, 1.0];
        let h = HistorySegment::from_samples(&times, &times, 1.0, 10).unwrap();
        for (i, &v) in h.samples().iter().enumerate() {
            // direct evaluation of the two-piece interpolant
            let x = i as f64 * 0.1;
            let expected = if x <= 0.3 { x } else { 0.3 + (1.0 - 0.3) * (x - 0.3) / 0.7 };
            assert!((v - expected).abs() < 1e-15, "node {i}: {v} vs {expected}");
        }
    }

    #[test]
    fn from_samples_errors() {
        assert!(matches!(
            HistorySegment::from_samples(&[0.5, 1.0], &[0.0, 1.0], 1.0, 2),
            Err(Error::WindowNotCovered { .. })
        ));
        assert!(matches!(
            HistorySegment::from_samples(&[0.0, 0.0, 1.0], &[0.0; 3], 1.0, 2),
            Err(Error::NonMonotoneTimes { index: 1 })
        ));
        assert!(matches!(
            HistorySegment::from_samples(&[0.0, 1.0], &[0.0], 1.0, 2),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn evaluate_examples() {
        let c = HistorySegment::constant(1.0, 1.0, 7, 3.0).unwrap();
        assert_eq!(c.evaluate(0.37).unwrap(), 3.0);
        let h = seg(&[0.0, 1.0, 2.0], 1.0, 1.0);
        assert_eq!(h.evaluate(0.25).unwrap(), 0.5);
        assert_eq!(h.evaluate(1.0).unwrap(), 2.0);
        assert_eq!(h.evaluate(0.0).unwrap(), 0.0);
        assert!(matches!(h.evaluate(1.5), Err(Error::OutOfWindow { .. })));
        assert!(h.evaluate(-0.01).is_err());
    }

    #[test]
    fn evaluate_sin_within_interpolation_bound() {
        let m = 100;
        let h = HistorySegment::from_fn(1.0, 1.0, m, f64::sin).unwrap();
        let dt = 1.0 / m as f64;
        let bound = dt * dt / 8.0 * 1.0_f64.sin();
        for &x in &[0.5, 0.123, 0.987] {
            assert!((h.evaluate(x).unwrap() - x.sin()).abs() <= bound);
        }
    }

    #[test]
    fn moving_integral_examples() {
        let c = HistorySegment::constant(3.0, 0.5, 10, 2.0).unwrap();
        assert!((c.moving_integral(2.5, 3.0).unwrap() - 1.0).abs() < 1e-15);
        let lin = HistorySegment::from_fn(1.0, 1.0, 7, |x| x).unwrap();
        assert!((lin.moving_integral(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let sq = HistorySegment::from_fn(1.0, 1.0, 100, |x| x * x).unwrap();
        assert!((sq.moving_integral(0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 2e-5);
        assert!(sq.moving_integral(0.5, 0.2).is_err());
        assert!(sq.moving_integral(-0.5, 0.2).is_err());
    }

    #[test]
    fn partial_cells_exact_for_linear() {
        let lin = HistorySegment::from_fn(1.0, 1.0, 4, |x| 2.0 * x + 1.0).unwrap();
        let got = lin.moving_integral(0.1, 0.63).unwrap();
        let exact = |x: f64| x * x + x;
        assert!((got - (exact(0.63) - exact(0.1))).abs() < 1e-14);
    }

    #[test]
    fn full_window_agrees_with_general_path() {
        let h = HistorySegment::from_fn(2.0, 1.0, 20, |x| (3.0 * x).cos()).unwrap();
        let a = h.view().full_integral();
        let b = h.moving_integral(1.0, 2.0).unwrap();
        assert!((a - b).abs() < 1e-14);
        let w = |u: f64| 0.5f64.powf(u);
        let c = h.view().full_weighted_integral(w);
        let d = h.weighted_integral(|x| w(x - 1.0), 1.0, 2.0).unwrap();
        assert!((c - d).abs() < 1e-14);
    }

    #[test]
    fn weighted_integral_examples() {
        let h = HistorySegment::from_fn(1.0, 1.0, 50, |x| x.exp()).unwrap();
        assert_eq!(
            h.weighted_integral(|_| 1.0, 0.2, 0.9).unwrap(),
            h.moving_integral(0.2, 0.9).unwrap()
        );
        let lambda: f64 = 0.5;
        let ones = HistorySegment::constant(1.0, 1.0, 1000, 1.0).unwrap();
        let got = ones.weighted_integral(|x| lambda.powf(x), 0.0, 1.0).unwrap();
        // antiderivative of lambda^u
        assert!((got - (lambda - 1.0) / lambda.ln()).abs() < 1e-4);
        let lin = HistorySegment::from_fn(1.0, 1.0, 1000, |x| x).unwrap();
        let got = lin.weighted_integral(|x| x, 0.0, 1.0).unwrap();
        // trapezoid error bound dt^2/12 * max|(x^2)''|
        assert!((got - 1.0 / 3.0).abs() <= 1e-6 / 12.0 * 2.0 + 1e-15);
    }

    #[test]
    fn roll_examples() {
        let c = HistorySegment::constant(1.0, 1.0, 4, 2.0).unwrap();
        let r = c.roll(2.0);
        assert_eq!(r.samples(), c.samples());
        assert!((r.t_end() - 1.25).abs() < 1e-15);
        let h = seg(&[1.0, 2.0, 3.0], 1.0, 1.0);
        assert_eq!(h.roll(4.0).samples(), &[2.0, 3.0, 4.0]);
        let mut full = h.clone();
        for v in [7.0, 8.0, 9.0] {
            full = full.roll(v);
        }
        assert_eq!(full.samples(), &[7.0, 8.0, 9.0]);
        assert_eq!(full.tau(), h.tau());
    }

    #[test]
    fn gateaux_examples() {
        let h = HistorySegment::from_fn(1.0, 1.0, 10, |x| x.sin()).unwrap();
        let ones = HistorySegment::constant(1.0, 1.0, 10, 1.0).unwrap();
        let d = gateaux_derivative(|f| f, &h, &ones, 1e-6).unwrap();
        assert!(d.samples().iter().all(|&v| (v - 1.0).abs() < 1e-9));

        let threes = HistorySegment::constant(1.0, 1.0, 10, 3.0).unwrap();
        let d = gateaux_derivative(|f| f * f, &threes, &ones, 1e-7).unwrap();
        assert!(d.samples().iter().all(|&v| (v - 6.0).abs() < 1e-6));

        let other = HistorySegment::constant(1.0, 1.0, 5, 1.0).unwrap();
        assert!(matches!(
            gateaux_derivative(|f| f, &h, &other, 1e-6),
            Err(Error::GridMismatch(_))
        ));
        assert!(gateaux_derivative(|f| f, &h, &ones, 0.0).is_err());
    }

    #[test]
    fn gateaux_cubic_converges_linearly() {
        let h = HistorySegment::from_fn(1.0, 1.0, 10, |x| x).unwrap();
        let ones = HistorySegment::constant(1.0, 1.0, 10, 1.0).unwrap();
        let err = |eps: f64| {
            let d = gateaux_derivative(|f| f.powi(3), &h, &ones, eps).unwrap();
            d.samples()
                .iter()
                .zip(h.samples())
                .map(|(&v, &x)| (v - 3.0 * x * x).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        assert!(e1 < 1e-2);
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 0).is_err());
        let g = TimeGrid::new(1.0, 0.5, 4).unwrap();
        assert_eq!(g.end(), 3.0);
        assert_eq!(g.times().count(), 5);
    }
}
