//! Drift and diffusion functionals of a history segment, and the built-in
//! model families (higher-order GBM, higher-order OU, EWMA volatility).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::history::{HistorySegment, Window};

pub const MAX_DEPTH: usize = 16;
pub const MAX_POLY_DEGREE: usize = 10;

/// Values in `[-DIFFUSION_CLAMP, 0)` are rounding noise and read as zero.
pub const DIFFUSION_CLAMP: f64 = 1e-12;

/// A literal or a reference to a named model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Value(f64),
    Param(String),
}

impl Scalar {
    pub fn resolve(&self, params: &Params) -> Result<f64> {
        match self {
            Scalar::Value(v) => Ok(*v),
            Scalar::Param(name) => params
                .get(name)
                .ok_or_else(|| Error::UnresolvedParameter(name.clone())),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Value(v)
    }
}

impl From<&str> for Scalar {
    fn from(name: &str) -> Self {
        Scalar::Param(name.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value, lower: None, upper: None }
    }

    pub fn bounded(mut self, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn bounds(&self) -> (f64, f64) {
        (
            self.lower.unwrap_or(f64::NEG_INFINITY),
            self.upper.unwrap_or(f64::INFINITY),
        )
    }
}

/// Named parameter vector with per-parameter bounds, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(Vec<Parameter>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, p: Parameter) -> Self {
        self.insert(p);
        self
    }

    /// Adds `p`, replacing any parameter of the same name.
    pub fn insert(&mut self, p: Parameter) {
        match self.0.iter_mut().find(|q| q.name == p.name) {
            Some(q) => *q = p,
            None => self.0.push(p),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.0.iter().find(|p| p.name == name)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let p = self
            .0
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnresolvedParameter(name.to_string()))?;
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.0.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|p| p.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which rolling history an integral leaf reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySource {
    /// The process values themselves.
    #[default]
    State,
    /// The realized squared-diffusion values (EWMA volatility models).
    Sigma2,
}

/// Weight `w_t(x)` over a window, expressed through the offset
/// `u = x - (t - tau)` in `[0, tau]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFunction {
    Constant(Scalar),
    /// `lambda^u`, or `lambda^(tau - u)` when `reverse` is set.
    Exponential {
        lambda: Scalar,
        #[serde(default)]
        reverse: bool,
    },
    /// `sum_j c_j (u / tau)^j`.
    Polynomial(Vec<Scalar>),
}

impl WeightFunction {
    pub fn exponential(lambda: impl Into<Scalar>) -> Self {
        WeightFunction::Exponential { lambda: lambda.into(), reverse: false }
    }

    pub fn resolve(&self, tau: f64, params: &Params) -> Result<ResolvedWeight> {
        match self {
            WeightFunction::Constant(c) => Ok(ResolvedWeight::Constant(c.resolve(params)?)),
            WeightFunction::Exponential { lambda, reverse } => {
                let lambda = lambda.resolve(params)?;
                check_lambda(lambda)?;
                Ok(ResolvedWeight::Exponential { ln_lambda: lambda.ln(), reverse: *reverse, tau })
            }
            WeightFunction::Polynomial(coeffs) => {
                if coeffs.is_empty() || coeffs.len() > MAX_POLY_DEGREE + 1 {
                    return Err(invalid(format!(
                        "polynomial weight needs 1..={} coefficients, got {}",
                        MAX_POLY_DEGREE + 1,
                        coeffs.len()
                    )));
                }
                let coeffs = coeffs.iter().map(|c| c.resolve(params)).collect::<Result<_>>()?;
                Ok(ResolvedWeight::Polynomial { coeffs, tau })
            }
        }
    }

    fn params_into(&self, out: &mut Vec<String>) {
        let mut push = |s: &Scalar| {
            if let Scalar::Param(n) = s {
                out.push(n.clone());
            }
        };
        match self {
            WeightFunction::Constant(c) => push(c),
            WeightFunction::Exponential { lambda, .. } => push(lambda),
            WeightFunction::Polynomial(cs) => cs.iter().for_each(push),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || lambda == 1.0 || !lambda.is_finite() {
        return Err(invalid(format!("exponential weight needs lambda > 0 and != 1, got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedWeight {
    Constant(f64),
    Exponential { ln_lambda: f64, reverse: bool, tau: f64 },
    Polynomial { coeffs: Vec<f64>, tau: f64 },
}

impl ResolvedWeight {
    /// Weight at window offset `u`.
    #[inline]
    pub fn at(&self, u: f64) -> f64 {
        match self {
            ResolvedWeight::Constant(c) => *c,
            ResolvedWeight::Exponential { ln_lambda, reverse, tau } => {
                let e = if *reverse { tau - u } else { u };
                (e * ln_lambda).exp()
            }
            ResolvedWeight::Polynomial { coeffs, tau } => {
                let z = u / tau;
                coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
            }
        }
    }
}

/// Expression tree over history functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalExpr {
    Const(f64),
    Param(String),
    /// `H_t(t)`.
    CurrentValue,
    /// Unnormalized `∫_{t-tau}^{t} H dx`.
    MovingIntegral,
    /// `∫_{t-tau}^{t} w(x) S(x) dx` with `S` the chosen history.
    WeightedMovingIntegral {
        weight: WeightFunction,
        #[serde(default)]
        source: HistorySource,
    },
    Add(Box<FunctionalExpr>, Box<FunctionalExpr>),
    Mul(Box<FunctionalExpr>, Box<FunctionalExpr>),
    Neg(Box<FunctionalExpr>),
    Pow(Box<FunctionalExpr>, f64),
    Sqrt(Box<FunctionalExpr>),
}

/// Leaf values for one evaluation point. Implemented by windows over
/// in-memory histories and by precomputed caches along observed paths.
pub trait LeafValues {
    fn current_value(&self) -> f64;
    fn moving_integral(&self) -> f64;
    fn weighted_integral(
        &self,
        weight: &WeightFunction,
        source: HistorySource,
        params: &Params,
    ) -> Result<f64>;
}

/// State and optional squared-diffusion windows at one instant.
#[derive(Debug, Clone, Copy)]
pub struct HistoryState<'a> {
    pub state: Window<'a>,
    pub sigma2: Option<Window<'a>>,
}

impl<'a> HistoryState<'a> {
    pub fn new(state: Window<'a>, sigma2: Option<Window<'a>>) -> Self {
        Self { state, sigma2 }
    }
}

impl LeafValues for HistoryState<'_> {
    fn current_value(&self) -> f64 {
        self.state.current()
    }

    fn moving_integral(&self) -> f64 {
        self.state.full_integral()
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

impl FunctionalExpr {
    pub fn param(name: &str) -> Self {
        FunctionalExpr::Param(name.to_string())
    }

    pub fn add(a: Self, b: Self) -> Self {
        FunctionalExpr::Add(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Self, b: Self) -> Self {
        FunctionalExpr::Mul(Box::new(a), Box::new(b))
    }

    pub fn neg(a: Self) -> Self {
        FunctionalExpr::Neg(Box::new(a))
    }

    pub fn pow(a: Self, exponent: f64) -> Self {
        FunctionalExpr::Pow(Box::new(a), exponent)
    }

    pub fn sqrt(a: Self) -> Self {
        FunctionalExpr::Sqrt(Box::new(a))
    }

    /// Normalized moving average `(1/tau) ∫ H dx`. Unlike the raw integral,
    /// this reduces to the current value as `tau -> 0`.
    pub fn mean(tau: f64) -> Self {
        Self::mul(FunctionalExpr::Const(1.0 / tau), FunctionalExpr::MovingIntegral)
    }

    pub fn depth(&self) -> usize {
        use FunctionalExpr::*;
        match self {
            Const(_) | Param(_) | CurrentValue | MovingIntegral | WeightedMovingIntegral { .. } => 1,
            Add(a, b) | Mul(a, b) => 1 + a.depth().max(b.depth()),
            Neg(a) | Pow(a, _) | Sqrt(a) => 1 + a.depth(),
        }
    }

    /// Parameter names referenced anywhere in the tree, including weights.
    pub fn referenced_params(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_params(&self, out: &mut Vec<String>) {
        use FunctionalExpr::*;
        match self {
            Param(n) => out.push(n.clone()),
            WeightedMovingIntegral { weight, .. } => weight.params_into(out),
            Add(a, b) | Mul(a, b) => {
                a.collect_params(out);
                b.collect_params(out);
            }
            Neg(a) | Pow(a, _) | Sqrt(a) => a.collect_params(out),
            Const(_) | CurrentValue | MovingIntegral => {}
        }
    }

    pub fn reads_sigma2(&self) -> bool {
        use FunctionalExpr::*;
        match self {
            WeightedMovingIntegral { source, .. } => *source == HistorySource::Sigma2,
            Add(a, b) | Mul(a, b) => a.reads_sigma2() || b.reads_sigma2(),
            Neg(a) | Pow(a, _) | Sqrt(a) => a.reads_sigma2(),
            _ => false,
        }
    }

    pub fn eval(&self, leaves: &impl LeafValues, params: &Params) -> Result<f64> {
        use FunctionalExpr::*;
        Ok(match self {
            Const(c) => *c,
            Param(name) => params
                .get(name)
                .ok_or_else(|| Error::UnresolvedParameter(name.clone()))?,
            CurrentValue => leaves.current_value(),
            MovingIntegral => leaves.moving_integral(),
            WeightedMovingIntegral { weight, source } => {
                leaves.weighted_integral(weight, *source, params)?
            }
            Add(a, b) => a.eval(leaves, params)? + b.eval(leaves, params)?,
            Mul(a, b) => a.eval(leaves, params)? * b.eval(leaves, params)?,
            Neg(a) => -a.eval(leaves, params)?,
            Pow(a, p) => {
                let base = a.eval(leaves, params)?;
                let v = base.powf(*p);
                if v.is_nan() && !base.is_nan() {
                    return Err(Error::NonFinite(format!("{base}^{p}")));
                }
                v
            }
            Sqrt(a) => {
                let v = a.eval(leaves, params)?;
                if v < 0.0 {
                    return Err(Error::NegativeSqrt(v));
                }
                v.sqrt()
            }
        })
    }
}

/// Evaluates `expr` on a single history segment.
pub fn eval_functional(expr: &FunctionalExpr, history: &HistorySegment, params: &Params) -> Result<f64> {
    expr.eval(&HistoryState::new(history.view(), None), params)
}

/// Order `tau`, drift and diffusion functionals, and the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub tau: f64,
    pub drift: FunctionalExpr,
    pub diffusion: FunctionalExpr,
    pub params: Params,
}

impl ModelSpec {
    pub fn new(tau: f64, drift: FunctionalExpr, diffusion: FunctionalExpr, params: Params) -> Result<Self> {
        let model = Self { tau, drift, diffusion, params };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        for expr in [&self.drift, &self.diffusion] {
            let d = expr.depth();
            if d > MAX_DEPTH {
                return Err(Error::ExpressionTooDeep(d));
            }
            for name in expr.referenced_params() {
                if self.params.get(&name).is_none() {
                    return Err(Error::UnresolvedParameter(name));
                }
            }
        }
        Ok(())
    }

    pub fn reads_sigma2(&self) -> bool {
        self.drift.reads_sigma2() || self.diffusion.reads_sigma2()
    }

    /// Copy with the named parameter set to `value`.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut m = self.clone();
        m.params.set(name, value)?;
        Ok(m)
    }

    /// Drift and diffusion at one evaluation point.
    #[inline]
    pub fn coefficients(&self, leaves: &impl LeafValues) -> Result<(f64, f64)> {
        let drift = self.drift.eval(leaves, &self.params)?;
        if !drift.is_finite() {
            return Err(Error::NonFinite(format!("drift = {drift}")));
        }
        let diffusion = clamp_diffusion(self.diffusion.eval(leaves, &self.params)?)?;
        Ok((drift, diffusion))
    }

    fn state_for<'a>(
        &self,
        history: &'a HistorySegment,
        sigma2: Option<&'a HistorySegment>,
    ) -> Result<HistoryState<'a>> {
        self.check_tau(history.tau())?;
        if let Some(s) = sigma2 {
            self.check_tau(s.tau())?;
        }
        Ok(HistoryState::new(history.view(), sigma2.map(|s| s.view())))
    }

    pub(crate) fn check_tau(&self, tau: f64) -> Result<()> {
        if (tau - self.tau).abs() > 1e-9 * self.tau {
            return Err(Error::TauMismatch { model: self.tau, history: tau });
        }
        Ok(())
    }

    pub fn drift(&self, history: &HistorySegment) -> Result<f64> {
        self.drift_with(history, None)
    }

    pub fn diffusion(&self, history: &HistorySegment) -> Result<f64> {
        self.diffusion_with(history, None)
    }

    pub fn drift_with(&self, history: &HistorySegment, sigma2: Option<&HistorySegment>) -> Result<f64> {
        let st = self.state_for(history, sigma2)?;
        let v = self.drift.eval(&st, &self.params)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("drift = {v}")));
        }
        Ok(v)
    }

    pub fn diffusion_with(&self, history: &HistorySegment, sigma2: Option<&HistorySegment>) -> Result<f64> {
        let st = self.state_for(history, sigma2)?;
        clamp_diffusion(self.diffusion.eval(&st, &self.params)?)
    }
}

fn clamp_diffusion(v: f64) -> Result<f64> {
    if v.is_nan() || v.is_infinite() {
        return Err(Error::NonFinite(format!("diffusion = {v}")));
    }
    if v < -DIFFUSION_CLAMP {
        return Err(Error::NegativeDiffusion(v));
    }
    Ok(v.max(0.0))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(invalid(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// `dy = alpha ∫H dt + beta ∫H dW`.
pub fn make_ho_gbm(alpha: f64, beta: f64, tau: f64) -> Result<ModelSpec> {
    use FunctionalExpr as E;
    check_tau(tau)?;
    if beta < 0.0 {
        return Err(invalid(format!("beta must be non-negative, got {beta}")));
    }
    let params = Params::new()
        .with(Parameter::new("alpha", alpha))
        .with(Parameter::new("beta", beta).bounded(Some(0.0), None));
    ModelSpec::new(
        tau,
        E::mul(E::param("alpha"), E::MovingIntegral),
        E::mul(E::param("beta"), E::MovingIntegral),
        params,
    )
}

/// `dy = -theta ∫H dt + sigma dW`.
pub fn make_ho_ou(theta: f64, sigma: f64, tau: f64) -> Result<ModelSpec> {
    use FunctionalExpr as E;
    check_tau(tau)?;
    if !(sigma >= 0.0) {
        return Err(invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    let params = Params::new()
        .with(Parameter::new("theta", theta))
        .with(Parameter::new("sigma", sigma).bounded(Some(0.0), None));
    ModelSpec::new(
        tau,
        E::neg(E::mul(E::param("theta"), E::MovingIntegral)),
        E::param("sigma"),
        params,
    )
}

/// Diffusion `sqrt(∫ lambda^(x - (t - tau)) sigma^2(x) dx)` over the realized
/// squared-diffusion history, with the supplied drift. Parameters used by
/// `drift` must be added to the returned spec's `params`.
pub fn make_ewma_vol(lambda: f64, tau: f64, drift: FunctionalExpr) -> Result<ModelSpec> {
    make_ewma_vol_with(lambda, tau, drift, false)
}

/// As [`make_ewma_vol`]; `reverse_weights` swaps in `lambda^(t - x)`, which
/// favours recent values when `lambda < 1`.
pub fn make_ewma_vol_with(
    lambda: f64,
    tau: f64,
    drift: FunctionalExpr,
    reverse_weights: bool,
) -> Result<ModelSpec> {
    use FunctionalExpr as E;
    check_tau(tau)?;
    check_lambda(lambda)?;
    let params = Params::new().with(Parameter::new("lambda", lambda).bounded(Some(0.0), None));
    let diffusion = E::sqrt(E::WeightedMovingIntegral {
        weight: WeightFunction::Exponential { lambda: "lambda".into(), reverse: reverse_weights },
        source: HistorySource::Sigma2,
    });
    let model = ModelSpec { tau, drift, diffusion, params };
    if model.drift.depth() > MAX_DEPTH {
        return Err(Error::ExpressionTooDeep(model.drift.depth()));
    }
    Ok(model)
}
