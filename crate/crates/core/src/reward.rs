//! Increasing, logconcave, right-continuous reward functions.
//!
//! A reward `g` is stored through its logarithm `h = log g` so that rewards
//! growing like `e^{βx}` never overflow before they are compared. The left and
//! right derivatives of `h` follow the convention `h'(x±) = +∞` wherever
//! `g(x) = 0`.

use std::fmt;
use std::sync::Arc;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::RewardError;

/// Relative slack used by the three-point concavity test.
const CONCAVITY_TOL: f64 = 1e-12;

/// Number of probe points used to validate a custom log-reward.
pub const CUSTOM_PROBE_POINTS: usize = 256;

/// A log-reward supplied as closures. Only evaluable in-process; it never
/// serializes.
#[derive(Clone)]
pub struct CustomLogReward {
    pub log_value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub deriv_left: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub deriv_right: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub x0: f64,
    pub beta: f64,
    /// Range sampled by the construction-time concavity probe.
    pub probe: (f64, f64),
    /// Points where `h'` jumps or a linear piece starts or ends.
    pub critical_points: Vec<f64>,
}

impl fmt::Debug for CustomLogReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLogReward")
            .field("x0", &self.x0)
            .field("beta", &self.beta)
            .field("probe", &self.probe)
            .finish_non_exhaustive()
    }
}

/// Piecewise-linear concave `h`.
///
/// Segment `i` has slope `slopes[i]`; segment 0 runs from `x0` to the first
/// breakpoint and the last segment is unbounded to the right.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLogLinear {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    anchor_x: f64,
    anchor_logvalue: f64,
    x0: f64,
    /// `h` at each breakpoint, precomputed from the anchor.
    knot_values: Vec<f64>,
}

impl PiecewiseLogLinear {
    pub fn new(
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        anchor_x: f64,
        anchor_logvalue: f64,
        x0: f64,
    ) -> Result<Self, RewardError> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(RewardError::InvalidParameter(format!(
                "piecewise form needs one more slope than breakpoints (got {} slopes, {} breakpoints)",
                slopes.len(),
                breakpoints.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || !anchor_x.is_finite() || !anchor_logvalue.is_finite() {
            return Err(RewardError::InvalidParameter("breakpoints and anchor must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RewardError::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        if slopes.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(RewardError::NotIncreasing);
        }
        if slopes.windows(2).any(|w| w[1] > w[0]) {
            return Err(RewardError::NotLogConcave("piecewise slopes must be nonincreasing".into()));
        }
        if x0.is_nan() || x0 == f64::INFINITY {
            return Err(RewardError::InvalidParameter("x0 must be finite or -inf".into()));
        }
        if x0.is_finite() {
            if breakpoints.first().is_some_and(|b| *b <= x0) {
                return Err(RewardError::InvalidParameter("breakpoints must lie above x0".into()));
            }
            if anchor_x < x0 {
                return Err(RewardError::InvalidParameter("anchor must lie at or above x0".into()));
            }
        } else if slopes[0] <= 0.0 {
            // g > 0 everywhere with a flat left piece forces g constant.
            return Err(RewardError::Constant);
        }

        let mut pw = Self {
            breakpoints,
            slopes,
            anchor_x,
            anchor_logvalue,
            x0,
            knot_values: Vec::new(),
        };
        let anchor_seg = pw.segment_right(anchor_x);
        let mut knots = vec![0.0; pw.breakpoints.len()];
        // Walk outward from the anchor's segment.
        for i in anchor_seg..pw.breakpoints.len() {
            let (from_x, from_h) = if i == anchor_seg {
                (anchor_x, anchor_logvalue)
            } else {
                (pw.breakpoints[i - 1], knots[i - 1])
            };
            knots[i] = from_h + pw.slopes[i] * (pw.breakpoints[i] - from_x);
        }
        for i in (0..anchor_seg).rev() {
            let (from_x, from_h) = if i + 1 == anchor_seg {
                (anchor_x, anchor_logvalue)
            } else {
                (pw.breakpoints[i + 1], knots[i + 1])
            };
            knots[i] = from_h - pw.slopes[i + 1] * (from_x - pw.breakpoints[i]);
        }
        pw.knot_values = knots;
        Ok(pw)
    }

    /// Index of the segment containing `x` when ties at breakpoints go right.
    fn segment_right(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|b| *b <= x)
    }

    /// Index of the segment containing `x` when ties at breakpoints go left.
    fn segment_left(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|b| *b < x)
    }

    fn log_value(&self, x: f64) -> f64 {
        if x < self.x0 {
            return f64::NEG_INFINITY;
        }
        let seg = self.segment_right(x);
        if seg == 0 {
            match self.breakpoints.first() {
                Some(&b) => self.knot_values[0] - self.slopes[0] * (b - x),
                None => self.anchor_logvalue + self.slopes[0] * (x - self.anchor_x),
            }
        } else {
            self.knot_values[seg - 1] + self.slopes[seg] * (x - self.breakpoints[seg - 1])
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn anchor(&self) -> (f64, f64) {
        (self.anchor_x, self.anchor_logvalue)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
}

/// The supported reward families.
#[derive(Debug, Clone)]
pub enum RewardKind {
    /// `(x⁺)^ν`
    PowerPlus { nu: f64 },
    /// `(eˣ − K)⁺`
    ExpCall { strike: f64 },
    /// `(K − e⁻ˣ)⁺`
    ExpPut { strike: f64 },
    /// `1_{[a, ∞)}`
    Indicator { at: f64 },
    /// `exp(c + β₀ x)`
    ExpLinear { intercept: f64, slope: f64 },
    PiecewiseLogLinear(PiecewiseLogLinear),
    /// `h = λx − x²` for `x ≤ 0`, `λx` on `(0, L]`, `λ(2L − L²/x)` beyond `L`.
    ///
    /// Smooth, with `log g` linear exactly on `[0, L]`.
    LinearSpan { slope: f64, span: f64 },
    /// `g(min(x, cap))`
    Truncated { inner: Box<RewardFunction>, cap: f64 },
    /// `c·g`
    Scaled { inner: Box<RewardFunction>, factor: f64 },
    Custom(CustomLogReward),
}

/// A nonnegative, nonconstant, increasing, logconcave, right-continuous reward.
#[derive(Debug, Clone)]
pub struct RewardFunction {
    kind: RewardKind,
    x0: f64,
    beta: f64,
}

fn positive(name: &str, v: f64) -> Result<f64, RewardError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(RewardError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RewardFunction {
    pub fn power_plus(nu: f64) -> Result<Self, RewardError> {
        let nu = positive("nu", nu)?;
        Ok(Self { kind: RewardKind::PowerPlus { nu }, x0: 0.0, beta: 0.0 })
    }

    pub fn exp_call(strike: f64) -> Result<Self, RewardError> {
        let strike = positive("strike", strike)?;
        Ok(Self { kind: RewardKind::ExpCall { strike }, x0: strike.ln(), beta: 1.0 })
    }

    pub fn exp_put(strike: f64) -> Result<Self, RewardError> {
        let strike = positive("strike", strike)?;
        Ok(Self { kind: RewardKind::ExpPut { strike }, x0: -strike.ln(), beta: 0.0 })
    }

    pub fn indicator(at: f64) -> Result<Self, RewardError> {
        if !at.is_finite() {
            return Err(RewardError::InvalidParameter("indicator level must be finite".into()));
        }
        Ok(Self { kind: RewardKind::Indicator { at }, x0: at, beta: 0.0 })
    }

    pub fn exp_linear(intercept: f64, slope: f64) -> Result<Self, RewardError> {
        if !intercept.is_finite() {
            return Err(RewardError::InvalidParameter("intercept must be finite".into()));
        }
        if !slope.is_finite() || slope < 0.0 {
            return Err(RewardError::NotIncreasing);
        }
        if slope == 0.0 {
            return Err(RewardError::Constant);
        }
        Ok(Self { kind: RewardKind::ExpLinear { intercept, slope }, x0: f64::NEG_INFINITY, beta: slope })
    }

    pub fn piecewise(pw: PiecewiseLogLinear) -> Self {
        let x0 = pw.x0;
        let beta = *pw.slopes.last().expect("piecewise has at least one slope");
        Self { kind: RewardKind::PiecewiseLogLinear(pw), x0, beta }
    }

    pub fn linear_span(slope: f64, span: f64) -> Result<Self, RewardError> {
        let slope = positive("slope", slope)?;
        let span = positive("span", span)?;
        Ok(Self { kind: RewardKind::LinearSpan { slope, span }, x0: f64::NEG_INFINITY, beta: 0.0 })
    }

    /// Builds a reward from closures, rejecting it unless `h` passes the
    /// three-point concavity and monotonicity probe.
    pub fn custom(custom: CustomLogReward) -> Result<Self, RewardError> {
        let (lo, hi) = custom.probe;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(RewardError::InvalidParameter("custom probe range must be a finite interval".into()));
        }
        if !(custom.beta.is_finite() && custom.beta >= 0.0) {
            return Err(RewardError::InvalidParameter("custom beta must be finite and nonnegative".into()));
        }
        let n = CUSTOM_PROBE_POINTS;
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let hs: Vec<f64> = xs.iter().map(|&x| (custom.log_value)(x)).collect();
        let finite: Vec<(f64, f64)> = xs.iter().copied().zip(hs.iter().copied()).filter(|(_, h)| h.is_finite()).collect();
        if finite.len() < 3 {
            return Err(RewardError::InvalidParameter("custom reward is zero on almost all of its probe range".into()));
        }
        if hs.windows(2).any(|w| w[1] < w[0]) {
            return Err(RewardError::NotIncreasing);
        }
        check_concave_samples(&finite)?;
        if finite.first().map(|p| p.1) == finite.last().map(|p| p.1) && !custom.x0.is_finite() {
            return Err(RewardError::Constant);
        }
        let x0 = custom.x0;
        let beta = custom.beta;
        Ok(Self { kind: RewardKind::Custom(custom), x0, beta })
    }

    pub fn kind(&self) -> &RewardKind {
        &self.kind
    }

    /// `x0 = inf{s : g(s) > 0}`, possibly `-∞`.
    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// `β = lim h'(x−)` as `x → ∞`.
    pub fn asymptotic_slope(&self) -> f64 {
        self.beta
    }

    /// `h(x) = log g(x)`, `-∞` where `g` vanishes.
    pub fn log_value(&self, x: f64) -> f64 {
        match &self.kind {
            RewardKind::PowerPlus { nu } => {
                if x > 0.0 {
                    nu * x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            RewardKind::ExpCall { strike } => {
                if x > self.x0 {
                    x + (-strike * (-x).exp()).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
            RewardKind::ExpPut { strike } => {
                if x > self.x0 {
                    strike.ln() + (-(-x).exp() / strike).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
            RewardKind::Indicator { at } => {
                if x >= *at {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            RewardKind::ExpLinear { intercept, slope } => intercept + slope * x,
            RewardKind::PiecewiseLogLinear(pw) => pw.log_value(x),
            RewardKind::LinearSpan { slope, span } => {
                if x <= 0.0 {
                    slope * x - x * x
                } else if x <= *span {
                    slope * x
                } else {
                    slope * (2.0 * span - span * span / x)
                }
            }
            RewardKind::Truncated { inner, cap } => inner.log_value(x.min(*cap)),
            RewardKind::Scaled { inner, factor } => factor.ln() + inner.log_value(x),
            RewardKind::Custom(c) => {
                if x < c.x0 {
                    f64::NEG_INFINITY
                } else {
                    (c.log_value)(x)
                }
            }
        }
    }

    /// `g(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            RewardKind::PowerPlus { nu } => return if x > 0.0 { x.powf(*nu) } else { 0.0 },
            RewardKind::ExpCall { strike } => return (x.exp() - strike).max(0.0),
            RewardKind::Truncated { inner, cap } => return inner.eval(x.min(*cap)),
            RewardKind::Scaled { inner, factor } => return factor * inner.eval(x),
            _ => {}
        }
        let h = self.log_value(x);
        if h == f64::NEG_INFINITY {
            0.0
        } else {
            h.exp()
        }
    }

    /// `h'(x−)`, `+∞` where `g(x) = 0` and at a jump of `g` at `x0`.
    pub fn log_deriv_left(&self, x: f64) -> f64 {
        if x < self.x0 || (x == self.x0 && self.x0.is_finite()) {
            return f64::INFINITY;
        }
        match &self.kind {
            RewardKind::PowerPlus { nu } => nu / x,
            RewardKind::ExpCall { strike } => 1.0 / (1.0 - strike * (-x).exp()),
            RewardKind::ExpPut { strike } => 1.0 / (strike * x.exp() - 1.0),
            RewardKind::Indicator { .. } => 0.0,
            RewardKind::ExpLinear { slope, .. } => *slope,
            RewardKind::PiecewiseLogLinear(pw) => pw.slopes[pw.segment_left(x)],
            RewardKind::LinearSpan { slope, span } => linear_span_deriv(*slope, *span, x, true),
            RewardKind::Truncated { inner, cap } => {
                if x <= *cap {
                    inner.log_deriv_left(x)
                } else {
                    0.0
                }
            }
            RewardKind::Scaled { inner, .. } => inner.log_deriv_left(x),
            RewardKind::Custom(c) => (c.deriv_left)(x),
        }
    }

    /// `h'(x+)`, `+∞` where `g` vanishes just to the right of `x`.
    pub fn log_deriv_right(&self, x: f64) -> f64 {
        if x < self.x0 {
            return f64::INFINITY;
        }
        match &self.kind {
            RewardKind::PowerPlus { nu } => {
                if x > 0.0 {
                    nu / x
                } else {
                    f64::INFINITY
                }
            }
            RewardKind::ExpCall { strike } => {
                if x > self.x0 {
                    1.0 / (1.0 - strike * (-x).exp())
                } else {
                    f64::INFINITY
                }
            }
            RewardKind::ExpPut { strike } => {
                if x > self.x0 {
                    1.0 / (strike * x.exp() - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            RewardKind::Indicator { .. } => 0.0,
            RewardKind::ExpLinear { slope, .. } => *slope,
            RewardKind::PiecewiseLogLinear(pw) => pw.slopes[pw.segment_right(x)],
            RewardKind::LinearSpan { slope, span } => linear_span_deriv(*slope, *span, x, false),
            RewardKind::Truncated { inner, cap } => {
                if x < *cap {
                    inner.log_deriv_right(x)
                } else {
                    0.0
                }
            }
            RewardKind::Scaled { inner, .. } => inner.log_deriv_right(x),
            RewardKind::Custom(c) => (c.deriv_right)(x),
        }
    }

    /// `g'(x−) = g(x) h'(x−)`, zero where `g` vanishes to the left.
    pub fn deriv_left(&self, x: f64) -> f64 {
        let g = self.eval(x);
        if g == 0.0 || (x == self.x0 && self.x0.is_finite()) {
            // One-sided difference from the zero region is not a derivative
            // of the positive part.
            return if g == 0.0 { 0.0 } else { f64::INFINITY };
        }
        g * self.log_deriv_left(x)
    }

    /// `g'(x+) = g(x) h'(x+)`.
    pub fn deriv_right(&self, x: f64) -> f64 {
        let g = self.eval(x);
        if g == 0.0 {
            let d = self.log_deriv_right(x);
            // g(x) = 0 with g continuous at x: derivative of (x⁺)^ν at 0 etc.
            return if x < self.x0 || d.is_infinite() { self.right_derivative_from_zero(x) } else { 0.0 };
        }
        g * self.log_deriv_right(x)
    }

    fn right_derivative_from_zero(&self, x: f64) -> f64 {
        if x < self.x0 {
            return 0.0;
        }
        match &self.kind {
            RewardKind::PowerPlus { nu } if *nu == 1.0 => 1.0,
            RewardKind::PowerPlus { nu } if *nu > 1.0 => 0.0,
            RewardKind::ExpCall { strike } => *strike,
            RewardKind::ExpPut { strike } => *strike,
            RewardKind::Scaled { inner, factor } => factor * inner.right_derivative_from_zero(x),
            _ => f64::INFINITY,
        }
    }

    /// Reward `x ↦ g(min(x, b))`.
    pub fn truncate_above(&self, cap: f64) -> Result<Self, RewardError> {
        if !cap.is_finite() || cap <= self.x0 {
            return Err(RewardError::InvalidTruncation { cap, x0: self.x0 });
        }
        if self.eval(cap) == 0.0 {
            return Err(RewardError::InvalidTruncation { cap, x0: self.x0 });
        }
        Ok(Self {
            kind: RewardKind::Truncated { inner: Box::new(self.clone()), cap },
            x0: self.x0,
            beta: 0.0,
        })
    }

    /// Reward `c·g`; `h` shifts by `log c`.
    pub fn scaled(&self, factor: f64) -> Result<Self, RewardError> {
        let factor = positive("factor", factor)?;
        Ok(Self { kind: RewardKind::Scaled { inner: Box::new(self.clone()), factor }, x0: self.x0, beta: self.beta })
    }

    /// Points where `h'` jumps or a linear stretch of `h` begins or ends.
    pub fn critical_points(&self) -> Vec<f64> {
        let mut pts = match &self.kind {
            RewardKind::PowerPlus { .. } => vec![0.0],
            RewardKind::ExpCall { .. } | RewardKind::ExpPut { .. } | RewardKind::Indicator { .. } => vec![self.x0],
            RewardKind::ExpLinear { .. } => vec![],
            RewardKind::PiecewiseLogLinear(pw) => {
                let mut v = pw.breakpoints.clone();
                if pw.x0.is_finite() {
                    v.insert(0, pw.x0);
                }
                v
            }
            RewardKind::LinearSpan { span, .. } => vec![0.0, *span],
            RewardKind::Truncated { inner, cap } => {
                let mut v = inner.critical_points();
                v.retain(|p| p < cap);
                v.push(*cap);
                v
            }
            RewardKind::Scaled { inner, .. } => inner.critical_points(),
            RewardKind::Custom(c) => c.critical_points.clone(),
        };
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Whether `h'(x−) > β` holds for every `x`, and whether that answer is
    /// known analytically or only from a probe grid.
    pub fn strict_slope_gap(&self, probe_hi: f64) -> SlopeGap {
        let analytic = match &self.kind {
            RewardKind::Scaled { inner, .. } => return inner.strict_slope_gap(probe_hi),
            RewardKind::PowerPlus { .. }
            | RewardKind::ExpCall { .. }
            | RewardKind::ExpPut { .. }
            | RewardKind::LinearSpan { .. } => Some(true),
            RewardKind::Indicator { .. } | RewardKind::ExpLinear { .. } | RewardKind::Truncated { .. } => Some(false),
            RewardKind::PiecewiseLogLinear(_) => Some(false),
            RewardKind::Custom(_) => None,
        };
        match analytic {
            Some(holds) => SlopeGap::Analytic(holds),
            None => {
                let (lo, probe_hi) = match &self.kind {
                    RewardKind::Custom(c) => (c.probe.0.max(self.x0), c.probe.1),
                    _ => (if self.x0.is_finite() { self.x0 } else { probe_hi - 200.0 }, probe_hi),
                };
                let n = 512;
                let holds = (1..=n).all(|i| {
                    let x = lo + (probe_hi - lo) * i as f64 / n as f64;
                    self.log_deriv_left(x) > self.beta
                });
                SlopeGap::GridOnly(holds)
            }
        }
    }

    /// `lim h'(x−)` as `x → −∞` when the family gives it in closed form.
    pub fn left_limit_slope(&self) -> Option<f64> {
        if self.x0.is_finite() {
            return Some(f64::INFINITY);
        }
        match &self.kind {
            RewardKind::ExpLinear { slope, .. } => Some(*slope),
            RewardKind::PiecewiseLogLinear(pw) => Some(pw.slopes[0]),
            RewardKind::LinearSpan { .. } => Some(f64::INFINITY),
            RewardKind::Truncated { inner, .. } | RewardKind::Scaled { inner, .. } => inner.left_limit_slope(),
            _ => None,
        }
    }

    /// Piecewise-log-linear interpolant of `h` through the grid points that lie
    /// in `{g > 0}`.
    pub fn to_piecewise(&self, grid: &[f64]) -> Result<PiecewiseLogLinear, RewardError> {
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .map(|&x| (x, self.log_value(x)))
            .filter(|(_, h)| h.is_finite())
            .collect();
        if pts.len() < 2 {
            return Err(RewardError::InvalidParameter("grid must contain two points where g > 0".into()));
        }
        if pts.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(RewardError::InvalidParameter("grid must be strictly increasing".into()));
        }
        let secants: Vec<f64> = pts.windows(2).map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).max(0.0)).collect();
        let breakpoints: Vec<f64> = pts[1..pts.len() - 1].iter().map(|p| p.0).collect();
        // Secants of a concave function are already nonincreasing; clamp
        // rounding noise so the interchange form validates.
        let mut slopes = secants;
        for i in 1..slopes.len() {
            if slopes[i] > slopes[i - 1] {
                slopes[i] = slopes[i - 1];
            }
        }
        let x0 = if self.x0.is_finite() { self.x0.min(pts[0].0) } else { f64::NEG_INFINITY };
        PiecewiseLogLinear::new(breakpoints, slopes, pts[0].0, pts[0].1, x0)
    }
}

/// Outcome of the strict slope-gap proviso `h'(x−) > β` for all `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "holds", rename_all = "snake_case")]
pub enum SlopeGap {
    Analytic(bool),
    GridOnly(bool),
}

impl SlopeGap {
    pub fn holds(self) -> bool {
        matches!(self, SlopeGap::Analytic(true) | SlopeGap::GridOnly(true))
    }
}

fn linear_span_deriv(slope: f64, span: f64, x: f64, left: bool) -> f64 {
    if x < 0.0 || (x == 0.0 && left) {
        slope - 2.0 * x
    } else if x < span || (x == span && left) {
        slope
    } else {
        slope * span * span / (x * x)
    }
}

/// Three-point concavity test over consecutive sample triples.
fn check_concave_samples(pts: &[(f64, f64)]) -> Result<(), RewardError> {
    for w in pts.windows(3) {
        let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
        if s2 > s1 + CONCAVITY_TOL * (1.0 + s1.abs()) {
            return Err(RewardError::NotLogConcave(format!(
                "slope increases from {s1} to {s2} around x = {}",
                w[1].0
            )));
        }
    }
    Ok(())
}

/// Checks the concavity inequality on one triple `x1 < x2 < x3` with
/// `g(x1) > 0`.
pub fn three_point_concave(f: &RewardFunction, x1: f64, x2: f64, x3: f64) -> bool {
    let (h1, h2, h3) = (f.log_value(x1), f.log_value(x2), f.log_value(x3));
    if !h1.is_finite() {
        return true;
    }
    let s1 = (h2 - h1) / (x2 - x1);
    let s2 = (h3 - h2) / (x3 - x2);
    s1 >= s2 - CONCAVITY_TOL * (1.0 + s1.abs().max(s2.abs()))
}

// ---------------------------------------------------------------------------
// JSON form
// ---------------------------------------------------------------------------

/// `x0` in JSON is a number or the string `"-inf"`.
fn ser_x0<S: Serializer>(x0: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x0.is_finite() {
        s.serialize_f64(*x0)
    } else {
        s.serialize_str("-inf")
    }
}

fn de_x0<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
        Raw::Text(t) => Err(de::Error::custom(format!("x0 must be a number or \"-inf\", got {t:?}"))),
    }
}

fn default_neg_inf() -> f64 {
    f64::NEG_INFINITY
}

/// Serializable description of a reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    PowerPlus { nu: f64 },
    ExpCall { strike: f64 },
    ExpPut { strike: f64 },
    Indicator { at: f64 },
    ExpLinear { #[serde(default)] intercept: f64, slope: f64 },
    PiecewiseLogLinear {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        anchor_x: f64,
        anchor_logvalue: f64,
        #[serde(serialize_with = "ser_x0", deserialize_with = "de_x0", default = "default_neg_inf")]
        x0: f64,
    },
    LinearSpan { slope: f64, span: f64 },
    Truncated { inner: Box<RewardSpec>, cap: f64 },
    Scaled { inner: Box<RewardSpec>, factor: f64 },
}

impl TryFrom<&RewardSpec> for RewardFunction {
    type Error = RewardError;

    fn try_from(spec: &RewardSpec) -> Result<Self, Self::Error> {
        match spec {
            RewardSpec::PowerPlus { nu } => Self::power_plus(*nu),
            RewardSpec::ExpCall { strike } => Self::exp_call(*strike),
            RewardSpec::ExpPut { strike } => Self::exp_put(*strike),
            RewardSpec::Indicator { at } => Self::indicator(*at),
            RewardSpec::ExpLinear { intercept, slope } => Self::exp_linear(*intercept, *slope),
            RewardSpec::PiecewiseLogLinear { breakpoints, slopes, anchor_x, anchor_logvalue, x0 } => Ok(
                Self::piecewise(PiecewiseLogLinear::new(breakpoints.clone(), slopes.clone(), *anchor_x, *anchor_logvalue, *x0)?),
            ),
            RewardSpec::LinearSpan { slope, span } => Self::linear_span(*slope, *span),
            RewardSpec::Truncated { inner, cap } => RewardFunction::try_from(inner.as_ref())?.truncate_above(*cap),
            RewardSpec::Scaled { inner, factor } => RewardFunction::try_from(inner.as_ref())?.scaled(*factor),
        }
    }
}

impl TryFrom<&RewardFunction> for RewardSpec {
    type Error = RewardError;

    fn try_from(f: &RewardFunction) -> Result<Self, Self::Error> {
        Ok(match &f.kind {
            RewardKind::PowerPlus { nu } => RewardSpec::PowerPlus { nu: *nu },
            RewardKind::ExpCall { strike } => RewardSpec::ExpCall { strike: *strike },
            RewardKind::ExpPut { strike } => RewardSpec::ExpPut { strike: *strike },
            RewardKind::Indicator { at } => RewardSpec::Indicator { at: *at },
            RewardKind::ExpLinear { intercept, slope } => RewardSpec::ExpLinear { intercept: *intercept, slope: *slope },
            RewardKind::PiecewiseLogLinear(pw) => RewardSpec::PiecewiseLogLinear {
                breakpoints: pw.breakpoints.clone(),
                slopes: pw.slopes.clone(),
                anchor_x: pw.anchor_x,
                anchor_logvalue: pw.anchor_logvalue,
                x0: pw.x0,
            },
            RewardKind::LinearSpan { slope, span } => RewardSpec::LinearSpan { slope: *slope, span: *span },
            RewardKind::Truncated { inner, cap } => RewardSpec::Truncated {
                inner: Box::new(RewardSpec::try_from(inner.as_ref())?),
                cap: *cap,
            },
            RewardKind::Scaled { inner, factor } => RewardSpec::Scaled {
                inner: Box::new(RewardSpec::try_from(inner.as_ref())?),
                factor: *factor,
            },
            RewardKind::Custom(_) => return Err(RewardError::NotSerializable),
        })
    }
}

impl Serialize for RewardFunction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RewardSpec::try_from(self).map_err(serde::ser::Error::custom)?.serialize(s)
    }
}

impl<'de> Deserialize<'de> for RewardFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let spec = RewardSpec::deserialize(d)?;
        RewardFunction::try_from(&spec).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(RewardFunction::power_plus(1.0).unwrap().eval(2.0), 2.0);
        assert_eq!(RewardFunction::exp_call(1.0).unwrap().eval(0.0), 0.0);
        assert_eq!(RewardFunction::indicator(0.0).unwrap().eval(-0.5), 0.0);
        assert_eq!(RewardFunction::indicator(0.0).unwrap().eval(0.0), 1.0);
        let put = RewardFunction::exp_put(2.0).unwrap();
        assert!((put.eval(1.0) - (2.0 - (-1.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn log_derivative_examples() {
        let p2 = RewardFunction::power_plus(2.0).unwrap();
        assert!((p2.log_deriv_left(4.0) - 0.5).abs() < 1e-15);
        assert_eq!(RewardFunction::indicator(0.0).unwrap().log_deriv_left(-1.0), f64::INFINITY);
        let lin = RewardFunction::exp_linear(0.3, 1.0).unwrap();
        for x in [-10.0, 0.0, 7.5] {
            assert_eq!(lin.log_deriv_left(x), 1.0);
            assert_eq!(lin.log_deriv_right(x), 1.0);
        }
    }

    #[test]
    fn indicator_jump_at_x0() {
        let ind = RewardFunction::indicator(0.0).unwrap();
        assert_eq!(ind.log_deriv_left(0.0), f64::INFINITY);
        assert_eq!(ind.log_deriv_right(0.0), 0.0);
        assert_eq!(ind.x0(), 0.0);
    }

    #[test]
    fn scaled_reward() {
        let call = RewardFunction::exp_call(1.0).unwrap();
        let s = call.scaled(3.0).unwrap();
        assert_eq!(s.eval(1.0), 3.0 * call.eval(1.0));
        assert_eq!(s.log_deriv_left(0.7), call.log_deriv_left(0.7));
        assert_eq!(s.x0(), call.x0());
        assert_eq!(s.deriv_right(0.0), 3.0);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"scaled","inner":{"kind":"exp_call","strike":1.0},"factor":3.0}"#);
        assert!(call.scaled(0.0).is_err());
    }

    #[test]
    fn asymptotic_slopes() {
        assert_eq!(RewardFunction::power_plus(3.0).unwrap().asymptotic_slope(), 0.0);
        let call = RewardFunction::exp_call(1.0).unwrap();
        assert_eq!(call.asymptotic_slope(), 1.0);
        // h' = eˣ/(eˣ − K) at x = 50 is 1 to machine precision.
        assert!((call.log_deriv_left(50.0) - 1.0).abs() < 1e-15);
        assert_eq!(RewardFunction::exp_linear(0.0, 0.7).unwrap().asymptotic_slope(), 0.7);
    }

    #[test]
    fn truncation_examples() {
        let f = RewardFunction::power_plus(1.0).unwrap();
        let t = f.truncate_above(3.0).unwrap();
        assert!((t.eval(5.0) - 3.0).abs() < 1e-14);
        assert!((t.eval(2.0) - 2.0).abs() < 1e-14);
        assert_eq!(t.asymptotic_slope(), 0.0);
        let ind = RewardFunction::indicator(0.0).unwrap();
        assert!(matches!(ind.truncate_above(-1.0), Err(RewardError::InvalidTruncation { .. })));
    }

    #[test]
    fn exp_linear_zero_slope_is_constant() {
        assert!(matches!(RewardFunction::exp_linear(0.0, 0.0), Err(RewardError::Constant)));
    }

    #[test]
    fn piecewise_matches_closed_form() {
        // min{e^{2x}, 1}
        let pw = PiecewiseLogLinear::new(vec![0.0], vec![2.0, 0.0], 0.0, 0.0, f64::NEG_INFINITY).unwrap();
        let f = RewardFunction::piecewise(pw);
        for x in [-3.0, -0.5, 0.0, 0.25, 4.0] {
            assert!((f.eval(x) - (2.0 * x).exp().min(1.0)).abs() < 1e-14, "x = {x}");
        }
        assert_eq!(f.log_deriv_left(0.0), 2.0);
        assert_eq!(f.log_deriv_right(0.0), 0.0);
        assert_eq!(f.asymptotic_slope(), 0.0);
    }

    #[test]
    fn piecewise_anchor_in_middle() {
        let pw = PiecewiseLogLinear::new(vec![-1.0, 1.0], vec![3.0, 1.0, 0.5], 0.0, 2.0, f64::NEG_INFINITY).unwrap();
        let f = RewardFunction::piecewise(pw);
        assert!((f.log_value(0.0) - 2.0).abs() < 1e-14);
        assert!((f.log_value(1.0) - 3.0).abs() < 1e-14);
        assert!((f.log_value(-1.0) - 1.0).abs() < 1e-14);
        assert!((f.log_value(-2.0) - (-2.0)).abs() < 1e-14);
        assert!((f.log_value(3.0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_rejects_convex_slopes() {
        let err = PiecewiseLogLinear::new(vec![0.0], vec![1.0, 2.0], 0.0, 0.0, f64::NEG_INFINITY);
        assert!(matches!(err, Err(RewardError::NotLogConcave(_))));
    }

    #[test]
    fn custom_rejects_convex() {
        let bad = CustomLogReward {
            log_value: Arc::new(|x: f64| x * x * x),
            deriv_left: Arc::new(|x: f64| 3.0 * x * x),
            deriv_right: Arc::new(|x: f64| 3.0 * x * x),
            x0: f64::NEG_INFINITY,
            beta: 0.0,
            probe: (0.0, 5.0),
            critical_points: vec![],
        };
        assert!(matches!(RewardFunction::custom(bad), Err(RewardError::NotLogConcave(_))));
    }

    #[test]
    fn linear_span_is_smooth_and_concave() {
        let f = RewardFunction::linear_span(1.25, 1.0).unwrap();
        for x in [0.0, 1.0] {
            assert!((f.log_deriv_left(x) - f.log_deriv_right(x)).abs() < 1e-14);
        }
        let xs = grid(-3.0, 6.0, 400);
        for w in xs.windows(3) {
            assert!(three_point_concave(&f, w[0], w[1], w[2]));
        }
    }

    #[test]
    fn to_piecewise_interpolates() {
        let f = RewardFunction::exp_call(1.0).unwrap();
        let xs = grid(0.1, 5.0, 50);
        let pw = RewardFunction::piecewise(f.to_piecewise(&xs).unwrap());
        for &x in &xs {
            assert!((pw.log_value(x) - f.log_value(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"kind":"piecewise_log_linear","breakpoints":[0.0],"slopes":[2.0,0.0],"anchor_x":0.0,"anchor_logvalue":0.0,"x0":"-inf"}"#;
        let f: RewardFunction = serde_json::from_str(text).unwrap();
        assert_eq!(f.eval(1.0), 1.0);
        let back = serde_json::to_string(&f).unwrap();
        let g: RewardFunction = serde_json::from_str(&back).unwrap();
        assert_eq!(g.eval(-1.0), f.eval(-1.0));
        let bad = r#"{"kind":"piecewise_log_linear","breakpoints":[0.0],"slopes":[0.0,2.0],"anchor_x":0.0,"anchor_logvalue":0.0}"#;
        assert!(serde_json::from_str::<RewardFunction>(bad).is_err());
    }
}
