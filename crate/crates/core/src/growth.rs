//! Closed-form growth curves and their ODE right-hand sides.
//!
//! Single-phase laws solve `dy/dt = r y f(y)` with the Gompertz, Logistic and
//! Richards crowding functions; the Weibull curve is an alternative
//! data-generating law. Flexible variants replace the time argument of the
//! solution by the spline warp `B(t)` and multiply the right-hand side by
//! `B'(t)`. The two-phase (double Gompertz) law switches at `eta`, feeding the
//! phase-1 value at `eta` into phase 2.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::params::{EffectsVector, NaturalParams, ParamVector};

/// Growth law of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gompertz,
    Logistic,
    DoubleGompertz,
    FlexGompertz,
    FlexLogistic,
    FlexDoubleGompertz,
    Richards,
    Weibull,
}

impl ModelKind {
    pub fn is_flexible(self) -> bool {
        matches!(
            self,
            ModelKind::FlexGompertz | ModelKind::FlexLogistic | ModelKind::FlexDoubleGompertz
        )
    }

    /// Two-phase weight models, observed as repeated measures on several fruit.
    pub fn is_two_phase(self) -> bool {
        matches!(self, ModelKind::DoubleGompertz | ModelKind::FlexDoubleGompertz)
    }
}

/// How the flexible double Gompertz phase-2 solution uses the warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase2Exponent {
    /// `exp(-r (B2(t) - eta))`.
    #[default]
    AsPrinted,
    /// `exp(-r B2(t - eta))`: the phase-2 clock starts at the switch.
    TimeShifted,
}

/// Structural description of a growth model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthModelSpec {
    pub kind: ModelKind,
    /// Initial response at `t = 0`.
    pub y0: f64,
    /// End of the sampling horizon.
    pub t_max: f64,
    /// Knots of the single-phase spline, or of phase 1, in time units.
    #[serde(default)]
    pub knots: Vec<f64>,
    /// Knots of the phase-2 spline.
    #[serde(default)]
    pub knots2: Vec<f64>,
    #[serde(default = "default_shape")]
    pub richards_shape: f64,
    #[serde(default = "default_shape")]
    pub weibull_shape: f64,
    /// Number of fruit for repeated-measures models.
    #[serde(default = "default_fruit_count")]
    pub fruit_count: usize,
    /// Time unit in which the spline polynomial basis is evaluated
    /// (`s = t / unit`). `1.0` evaluates the basis on raw time.
    pub spline_time_unit: f64,
    #[serde(default)]
    pub phase2_exponent: Phase2Exponent,
}

fn default_shape() -> f64 {
    2.0
}

fn default_fruit_count() -> usize {
    5
}

/// Default initial dry-matter fraction.
pub const DRY_MATTER_Y0: f64 = 0.01;
/// Default initial fruit weight in grams.
pub const FRUIT_WEIGHT_Y0: f64 = 1.0;
/// Dry-matter horizon in weeks.
pub const DRY_MATTER_T_MAX: f64 = 30.0;
/// Fruit-weight horizon in days.
pub const FRUIT_WEIGHT_T_MAX: f64 = 350.0;

/// `count` equally spaced interior knots of `[0, t_max]`.
pub fn equispaced_knots(count: usize, t_max: f64) -> Vec<f64> {
    (1..=count)
        .map(|k| k as f64 * t_max / (count as f64 + 1.0))
        .collect()
}

impl GrowthModelSpec {
    /// Single-phase dry-matter model over 30 weeks with `knots` spline knots
    /// (ignored for non-flexible kinds).
    pub fn dry_matter(kind: ModelKind, knots: usize) -> Self {
        let t_max = DRY_MATTER_T_MAX;
        Self {
            kind,
            y0: DRY_MATTER_Y0,
            t_max,
            knots: if kind.is_flexible() { equispaced_knots(knots, t_max) } else { Vec::new() },
            knots2: Vec::new(),
            richards_shape: default_shape(),
            weibull_shape: default_shape(),
            fruit_count: 1,
            spline_time_unit: t_max,
            phase2_exponent: Phase2Exponent::AsPrinted,
        }
    }

    /// Two-phase fruit-weight model over 350 days.
    pub fn fruit_weight(kind: ModelKind, knots1: usize, knots2: usize, fruit_count: usize) -> Self {
        let t_max = FRUIT_WEIGHT_T_MAX;
        let flex = kind.is_flexible();
        Self {
            kind,
            y0: FRUIT_WEIGHT_Y0,
            t_max,
            knots: if flex { equispaced_knots(knots1, t_max) } else { Vec::new() },
            knots2: if flex { equispaced_knots(knots2, t_max) } else { Vec::new() },
            richards_shape: default_shape(),
            weibull_shape: default_shape(),
            fruit_count,
            spline_time_unit: t_max,
            phase2_exponent: Phase2Exponent::AsPrinted,
        }
    }

    /// Sizes of the random-effect blocks `(phase-1 spline, phase-2 spline, fruit)`.
    pub fn effect_sizes(&self) -> (usize, usize, usize) {
        let g = if self.kind.is_two_phase() { self.fruit_count } else { 0 };
        if !self.kind.is_flexible() {
            return (0, 0, g);
        }
        if self.kind.is_two_phase() {
            (self.knots.len(), self.knots2.len(), g)
        } else {
            (self.knots.len(), 0, 0)
        }
    }

    pub fn effects_dim(&self) -> usize {
        let (a, b, c) = self.effect_sizes();
        a + b + c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return config(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.y0 > 0.0 && self.y0.is_finite()) {
            return config(format!("y0 must be positive, got {}", self.y0));
        }
        if !(self.spline_time_unit > 0.0 && self.spline_time_unit.is_finite()) {
            return config(format!("spline_time_unit must be positive, got {}", self.spline_time_unit));
        }
        if self.kind == ModelKind::Richards && !(self.richards_shape > 0.0) {
            return config(format!("richards_shape must be positive, got {}", self.richards_shape));
        }
        if self.kind == ModelKind::Weibull && !(self.weibull_shape > 0.0) {
            return config(format!("weibull_shape must be positive, got {}", self.weibull_shape));
        }
        if self.kind.is_two_phase() && self.fruit_count == 0 {
            return config("fruit_count must be at least 1");
        }
        if !self.kind.is_flexible() && (!self.knots.is_empty() || !self.knots2.is_empty()) {
            return config(format!("{:?} does not take spline knots", self.kind));
        }
        if !self.kind.is_two_phase() && !self.knots2.is_empty() {
            return config("phase-2 knots given for a single-phase model");
        }
        for (label, knots) in [("knots", &self.knots), ("knots2", &self.knots2)] {
            for w in knots.windows(2) {
                if !(w[1] > w[0]) {
                    return config(format!("{label} must be strictly increasing"));
                }
            }
            if let Some(k) = knots.iter().find(|&&k| !(k > 0.0 && k < self.t_max)) {
                return config(format!("{label} entry {k} outside (0, {})", self.t_max));
            }
        }
        Ok(())
    }
}

// 1 / (k + 2) for the basis antiderivative
const RECIPROCALS: [f64; 64] = {
    let mut out = [0.0; 64];
    let mut k = 0;
    while k < 64 {
        out[k] = 1.0 / (k as f64 + 2.0);
        k += 1;
    }
    out
};

/// Spline time warp `B(t)` with derivative `B'(t)`.
///
/// The polynomial basis is evaluated on `s = t / unit`:
/// `B(t) = b0 t + b1 t^2/2 + sum_k c_k (s^{k+1}/(k+1) - tau_k s)` and
/// `B'(t) = b0 + b1 t + (1/unit) sum_k c_k (s^k - tau_k)`, with knots
/// `tau_k` expressed in the same unit. `B(0) = 0`.
#[derive(Debug, Clone, Copy)]
pub struct SplineWarp<'a> {
    pub beta0: f64,
    pub beta1: f64,
    pub coefs: &'a [f64],
    /// Knots in time units.
    pub knots: &'a [f64],
    pub unit: f64,
}

impl SplineWarp<'_> {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        let inv = 1.0 / self.unit;
        let s = t * inv;
        let mut pow = s; // s^{k+1} at step k
        let mut acc = 0.0;
        for (k, (&c, &tau)) in self.coefs.iter().zip(self.knots).enumerate() {
            pow *= s;
            let recip = RECIPROCALS.get(k).copied().unwrap_or_else(|| 1.0 / (k as f64 + 2.0));
            acc += c * (pow * recip - tau * inv * s);
        }
        self.beta0 * t + 0.5 * self.beta1 * t * t + acc
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        let inv = 1.0 / self.unit;
        let s = t * inv;
        let mut pow = 1.0;
        let mut acc = 0.0;
        for (&c, &tau) in self.coefs.iter().zip(self.knots) {
            pow *= s;
            acc += c * (pow - tau * inv);
        }
        self.beta0 + self.beta1 * t + acc * inv
    }
}

/// Basis terms `phi_k(t)` of the warp, so that
/// `B(t) = beta0 t + beta1 t^2/2 + sum_k c_k phi_k(t)`.
pub(crate) fn spline_basis(knots: &[f64], unit: f64, t: f64, out: &mut [f64]) {
    let inv = 1.0 / unit;
    let s = t * inv;
    let mut pow = s;
    for (k, (o, &tau)) in out.iter_mut().zip(knots).enumerate() {
        pow *= s;
        *o = pow / (k as f64 + 2.0) - tau * inv * s;
    }
}

fn check_spline_args(t: f64, b: &[f64], knots: &[f64]) -> Result<()> {
    if b.len() != knots.len() {
        return config(format!(
            "{} spline coefficients for {} knots",
            b.len(),
            knots.len()
        ));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("spline evaluated at t = {t}")));
    }
    Ok(())
}

/// `B'(t) = beta0 + beta1 t + sum_k b_k (t^k - tau_k)` on raw time.
pub fn spline_b_prime(t: f64, beta0: f64, beta1: f64, b: &[f64], knots: &[f64]) -> Result<f64> {
    check_spline_args(t, b, knots)?;
    Ok(SplineWarp { beta0, beta1, coefs: b, knots, unit: 1.0 }.derivative(t))
}

/// `B(t) = beta0 t + beta1 t^2/2 + sum_k b_k (t^{k+1}/(k+1) - tau_k t)` on raw time.
pub fn spline_b(t: f64, beta0: f64, beta1: f64, b: &[f64], knots: &[f64]) -> Result<f64> {
    check_spline_args(t, b, knots)?;
    Ok(SplineWarp { beta0, beta1, coefs: b, knots, unit: 1.0 }.value(t))
}

#[inline]
fn gompertz(lambda: f64, y0: f64, r: f64, w: f64) -> f64 {
    lambda * (-(lambda / y0).ln() * (-r * w).exp()).exp()
}

#[inline]
fn logistic(lambda: f64, y0: f64, r: f64, w: f64) -> f64 {
    lambda * y0 / (y0 + (lambda - y0) * (-r * w).exp())
}

#[inline]
fn richards(lambda: f64, y0: f64, r: f64, a: f64, t: f64) -> f64 {
    lambda / (1.0 + ((lambda / y0).powf(a) - 1.0) * (-a * r * t).exp()).powf(1.0 / a)
}

#[inline]
fn weibull(lambda: f64, y0: f64, r: f64, a: f64, t: f64) -> f64 {
    lambda - (lambda - y0) * (-(r * t).powf(a)).exp()
}

/// Borrowed view of a flat effects vector split into its blocks.
#[derive(Debug, Clone, Copy, Default)]
pub struct EffectsView<'a> {
    pub spline: &'a [f64],
    pub spline2: &'a [f64],
    pub fruit: &'a [f64],
}

impl<'a> EffectsView<'a> {
    pub fn split(spec: &GrowthModelSpec, flat: &'a [f64]) -> Self {
        let (k1, k2, _) = spec.effect_sizes();
        Self {
            spline: &flat[..k1],
            spline2: &flat[k1..k1 + k2],
            fruit: &flat[k1 + k2..],
        }
    }

    pub fn of(effects: &'a EffectsVector) -> Self {
        Self {
            spline: &effects.spline,
            spline2: &effects.spline2,
            fruit: &effects.fruit,
        }
    }
}

impl GrowthModelSpec {
    fn warp1<'a>(&'a self, p: &NaturalParams, e: &EffectsView<'a>) -> SplineWarp<'a> {
        SplineWarp {
            beta0: p.beta0,
            beta1: p.beta1,
            coefs: e.spline,
            knots: &self.knots,
            unit: self.spline_time_unit,
        }
    }

    fn warp2<'a>(&'a self, p: &NaturalParams, e: &EffectsView<'a>) -> SplineWarp<'a> {
        SplineWarp {
            beta0: p.beta02,
            beta1: p.beta12,
            coefs: e.spline2,
            knots: &self.knots2,
            unit: self.spline_time_unit,
        }
    }

    fn rate(&self, p: &NaturalParams, e: &EffectsView<'_>, fruit: Option<usize>) -> f64 {
        match fruit {
            Some(g) if self.kind.is_two_phase() && !e.fruit.is_empty() => (p.r.ln() + e.fruit[g]).exp(),
            _ => p.r,
        }
    }

    /// Unchecked mean evaluation used by likelihood hot paths.
    #[inline]
    pub(crate) fn mean_unchecked(
        &self,
        p: &NaturalParams,
        e: &EffectsView<'_>,
        t: f64,
        fruit: Option<usize>,
    ) -> f64 {
        let r = self.rate(p, e, fruit);
        match self.kind {
            ModelKind::Gompertz => gompertz(p.lambda, self.y0, r, t),
            ModelKind::Logistic => logistic(p.lambda, self.y0, r, t),
            ModelKind::Richards => richards(p.lambda, self.y0, r, self.richards_shape, t),
            ModelKind::Weibull => weibull(p.lambda, self.y0, r, self.weibull_shape, t),
            ModelKind::FlexGompertz => gompertz(p.lambda, self.y0, r, self.warp1(p, e).value(t)),
            ModelKind::FlexLogistic => logistic(p.lambda, self.y0, r, self.warp1(p, e).value(t)),
            ModelKind::DoubleGompertz => {
                if t <= p.eta {
                    gompertz(p.lambda, self.y0, r, t)
                } else {
                    let at_switch = gompertz(p.lambda, self.y0, r, p.eta);
                    gompertz(p.lambda2, at_switch, r, t - p.eta)
                }
            }
            ModelKind::FlexDoubleGompertz => {
                let w1 = self.warp1(p, e);
                if t <= p.eta {
                    gompertz(p.lambda, self.y0, r, w1.value(t))
                } else {
                    let at_switch = gompertz(p.lambda, self.y0, r, w1.value(p.eta));
                    let w2 = self.warp2(p, e);
                    let shifted = match self.phase2_exponent {
                        Phase2Exponent::AsPrinted => w2.value(t) - p.eta,
                        Phase2Exponent::TimeShifted => w2.value(t - p.eta),
                    };
                    gompertz(p.lambda2, at_switch, r, shifted)
                }
            }
        }
    }

    fn check_eval(&self, params: &ParamVector, effects: &EffectsVector, fruit: Option<usize>) -> Result<()> {
        if params.layout().names() != crate::params::ParamLayout::for_kind(self.kind).names() {
            return config(format!("parameter layout does not match {:?}", self.kind));
        }
        effects.check(self)?;
        if let Some(g) = fruit {
            if self.kind.is_two_phase() && g >= self.fruit_count {
                return config(format!("fruit {g} out of range (G = {})", self.fruit_count));
            }
        }
        Ok(())
    }
}

/// Closed-form mean response at time `t` for fruit `fruit` (weight models;
/// `None` uses the population rate).
pub fn mean_response(
    spec: &GrowthModelSpec,
    params: &ParamVector,
    effects: &EffectsVector,
    t: f64,
    fruit: Option<usize>,
) -> Result<f64> {
    spec.check_eval(params, effects, fruit)?;
    if !(0.0..=spec.t_max).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", spec.t_max)));
    }
    let p = NaturalParams::from_vector(params);
    let m = spec.mean_unchecked(&p, &EffectsView::of(effects), t, fruit);
    if !m.is_finite() {
        return Err(Error::Evaluation(format!(
            "non-finite mean {m} at t = {t} for parameters {:?}",
            params.values()
        )));
    }
    Ok(m)
}

/// Right-hand side `dy/dt` of the model ODE at `(t, y)`.
pub fn ode_rhs(
    spec: &GrowthModelSpec,
    params: &ParamVector,
    effects: &EffectsVector,
    t: f64,
    y: f64,
    fruit: Option<usize>,
) -> Result<f64> {
    spec.check_eval(params, effects, fruit)?;
    if !(y > 0.0) {
        return Err(Error::Domain(format!("ode_rhs needs y > 0, got {y}")));
    }
    let p = NaturalParams::from_vector(params);
    let e = EffectsView::of(effects);
    let r = spec.rate(&p, &e, fruit);
    let out = match spec.kind {
        ModelKind::Gompertz => r * y * (p.lambda / y).ln(),
        ModelKind::Logistic => r * y * (1.0 - y / p.lambda),
        ModelKind::Richards => r * y * (1.0 - (y / p.lambda).powf(spec.richards_shape)),
        ModelKind::Weibull => {
            let a = spec.weibull_shape;
            a * r * (r * t).powf(a - 1.0) * (p.lambda - y)
        }
        ModelKind::FlexGompertz => r * y * (p.lambda / y).ln() * spec.warp1(&p, &e).derivative(t),
        ModelKind::FlexLogistic => r * y * (1.0 - y / p.lambda) * spec.warp1(&p, &e).derivative(t),
        ModelKind::DoubleGompertz => {
            let cap = if t <= p.eta { p.lambda } else { p.lambda2 };
            r * y * (cap / y).ln()
        }
        ModelKind::FlexDoubleGompertz => {
            if t <= p.eta {
                r * y * (p.lambda / y).ln() * spec.warp1(&p, &e).derivative(t)
            } else {
                let w2 = spec.warp2(&p, &e);
                let mult = match spec.phase2_exponent {
                    Phase2Exponent::AsPrinted => w2.derivative(t),
                    Phase2Exponent::TimeShifted => w2.derivative(t - p.eta),
                };
                r * y * (p.lambda2 / y).ln() * mult
            }
        }
    };
    if !out.is_finite() {
        return Err(Error::Evaluation(format!("non-finite rate at t = {t}, y = {y}")));
    }
    Ok(out)
}
