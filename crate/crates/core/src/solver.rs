//! One-step ratio, threshold search, value functions and regime reports.

use serde::{Deserialize, Serialize};

use crate::classify::{light_tail_characterization, FinitenessVerdict, Verdict};
use crate::error::{PassageError, SolverError};
use crate::reward::RewardFunction;
use crate::stats::{z_for_confidence, Estimate};
use crate::stochastic::{first_passage_mc, ContinuousModel, IncrementLaw, LadderTable, PassageKind, PassageSet, SimOptions};

/// Relative slack of the exact `ρ ≤ 1` comparison.
pub const EXACT_RATIO_SLACK: f64 = 1e-12;

/// Floor and ceiling of bracket expansion, in units of the law's scale.
pub const EXPANSION_LIMIT: f64 = 1e6;

/// Iterates of `Q_y(0)` beyond this count as divergence to `W = ∞`.
pub const DIVERGENCE_CAP: f64 = 1e12;

const LADDER_DOMAIN: u64 = 0x4C41_4444;
const VALUE_DOMAIN: u64 = 0x5641_4C55;
const NEVER_STOP_DOMAIN: u64 = 0x4E45_5653;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactLattice,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// `u = −∞`.
    StopEverywhere,
    Finite { u: f64 },
    NeverStop {
        #[serde(with = "crate::ext_float")]
        w: f64,
        beta: f64,
    },
    Inconclusive { reason: String },
}

impl Regime {
    /// The threshold as an extended real; `None` when inconclusive.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            Regime::StopEverywhere => Some(f64::NEG_INFINITY),
            Regime::Finite { u } => Some(*u),
            Regime::NeverStop { .. } => Some(f64::INFINITY),
            Regime::Inconclusive { .. } => None,
        }
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, Regime::Inconclusive { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub x: f64,
    #[serde(with = "crate::ext_float")]
    pub rho: f64,
    #[serde(with = "crate::ext_float")]
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelIterate {
    pub level: f64,
    #[serde(with = "crate::ext_float")]
    pub value: f64,
    #[serde(with = "crate::ext_float")]
    pub se: f64,
}

/// `W` with the iterates `Q_y(0)` it was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeverStopValue {
    #[serde(with = "crate::ext_float")]
    pub w: f64,
    #[serde(with = "crate::ext_float")]
    pub se: f64,
    pub beta: f64,
    pub iterates: Vec<LevelIterate>,
    pub diverged: bool,
    pub extrapolated: bool,
}

impl NeverStopValue {
    /// `V(x) = e^{βx} W`.
    pub fn value(&self, x: f64) -> f64 {
        if self.w.is_infinite() {
            f64::INFINITY
        } else {
            (self.beta * x).exp() * self.w
        }
    }
}

/// Numerical options of [`solve`]; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// `None` picks the exact method for lattice laws.
    pub method: Option<Method>,
    pub bracket: Option<[f64; 2]>,
    pub tol: f64,
    pub confidence: f64,
    /// Initial ladder sample in Monte Carlo mode; doubled on ambiguity.
    pub budget: usize,
    pub max_budget: usize,
    /// Paths per value estimate in Monte Carlo mode.
    pub value_budget: usize,
    pub seed: u64,
    /// Levels for `Q_y(0)`; default `[10, 20, 40, 80, 160]` times the law's scale.
    pub levels: Option<Vec<f64>>,
    pub never_stop_tol: f64,
    pub allow_undiscounted: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: None,
            bracket: None,
            tol: 1e-9,
            confidence: 0.99,
            budget: 16_384,
            max_budget: 262_144,
            value_budget: 200_000,
            seed: 0,
            levels: None,
            never_stop_tol: 1e-6,
            allow_undiscounted: false,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0) {
            return Err(SolverError::PreconditionViolated(format!("tol = {} must be positive", self.tol)));
        }
        if let Some([a, b]) = self.bracket {
            if !(a < b) {
                return Err(SolverError::PreconditionViolated(format!("bracket [{a}, {b}] must have lo < hi")));
            }
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SolverError::PreconditionViolated("confidence must lie in (0, 1)".into()));
        }
        if self.budget == 0 || self.max_budget < self.budget || self.value_budget == 0 {
            return Err(SolverError::PreconditionViolated("budgets must be positive with max_budget >= budget".into()));
        }
        Ok(())
    }

    fn sim(&self) -> SimOptions {
        SimOptions { allow_undiscounted: self.allow_undiscounted, step_cap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub regime: Regime,
    /// Half-width of the final bracket around `u`.
    pub tolerance: f64,
    pub ratio_trace: Vec<RatioPoint>,
    pub method: Method,
    pub classification: FinitenessVerdict,
    /// `V(u−)` when `u = x0` and `g` jumps there.
    #[serde(with = "crate::ext_float::option")]
    pub value_left_of_u: Option<f64>,
    pub never_stop: Option<NeverStopValue>,
    /// The ratio search and the finiteness classifier disagree.
    #[serde(default)]
    pub classifier_conflict: bool,
    /// Ladder paths behind the last ratio comparison (0 in exact mode).
    pub budget_used: usize,
    pub seed: u64,
    pub options: SolveOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Above,
    Below,
    Ambiguous,
}

/// What the ratio and value estimators simulate.
#[derive(Debug, Clone)]
pub(crate) enum Dynamics {
    Walk(IncrementLaw),
    /// Event-driven compound Poisson paths with nonpositive drift; `law` is
    /// the time-one increment used for classification and scales.
    Continuous { model: ContinuousModel, law: IncrementLaw },
}

impl Dynamics {
    fn law(&self) -> &IncrementLaw {
        match self {
            Dynamics::Walk(l) => l,
            Dynamics::Continuous { law, .. } => law,
        }
    }

    /// Passage records over `targets` with `S ≥ d` (entry) semantics, or
    /// strict `S > d` for continuous ladders.
    fn passages(&self, q: f64, targets: &[f64], strict: bool, budget: usize, seed: u64, domain: u64, opts: &SolveOptions) -> Result<PassageSet, PassageError> {
        match self {
            Dynamics::Walk(law) => PassageSet::simulate(law, q, targets, budget, seed, domain, opts.sim()),
            Dynamics::Continuous { model, .. } => {
                let m = ContinuousModel { strict, ..model.clone() };
                PassageSet::simulate_continuous(&m, q, targets, budget, seed, domain, opts.sim())
            }
        }
    }

    fn default_method(&self) -> Method {
        match self {
            Dynamics::Walk(l) if l.as_lattice().is_some() => Method::ExactLattice,
            _ => Method::MonteCarlo,
        }
    }
}

enum Engine {
    Exact(LadderTable),
    Mc { ladder: PassageSet, z: f64, max_budget: usize },
}

impl Engine {
    fn new(dynamics: &Dynamics, q: f64, opts: &SolveOptions) -> Result<(Self, Method), PassageError> {
        let method = opts.method.unwrap_or(dynamics.default_method());
        Ok(match method {
            Method::ExactLattice => {
                let lat = match dynamics {
                    Dynamics::Walk(law) => law.as_lattice().ok_or(PassageError::NotLattice)?,
                    Dynamics::Continuous { .. } => return Err(PassageError::NotLattice),
                };
                (Engine::Exact(LadderTable::new(lat, q)?), method)
            }
            Method::MonteCarlo => {
                let ladder = dynamics.passages(q, &[0.0], true, opts.budget, opts.seed, LADDER_DOMAIN, opts)?;
                (Engine::Mc { ladder, z: z_for_confidence(opts.confidence), max_budget: opts.max_budget }, method)
            }
        })
    }

    fn ratio(&self, f: &RewardFunction, x: f64) -> Result<Estimate, PassageError> {
        match self {
            Engine::Exact(t) => Ok(Estimate::exact(t.ratio(f, x))),
            Engine::Mc { ladder, .. } => {
                let hx = f.log_value(x);
                if hx == f64::NEG_INFINITY {
                    return Ok(Estimate::exact(f64::INFINITY));
                }
                let e = ladder.estimate_target(0, |s| (f.log_value(x + s) - hx).exp());
                ladder.check_truncation(&e)?;
                Ok(e)
            }
        }
    }

    fn side(&mut self, law: &IncrementLaw, f: &RewardFunction, x: f64, trace: &mut Vec<RatioPoint>) -> Result<Side, PassageError> {
        loop {
            let e = self.ratio(f, x)?;
            match self {
                Engine::Exact(_) => {
                    trace.push(RatioPoint { x, rho: e.mean, se: 0.0 });
                    return Ok(if e.mean <= 1.0 + EXACT_RATIO_SLACK { Side::Below } else { Side::Above });
                }
                Engine::Mc { ladder, z, max_budget } => {
                    let side = if e.mean.is_infinite() {
                        Some(Side::Above)
                    } else if e.mean - *z * e.se > 1.0 {
                        Some(Side::Above)
                    } else if e.mean + *z * e.se <= 1.0 {
                        Some(Side::Below)
                    } else if ladder.paths() >= *max_budget {
                        Some(Side::Ambiguous)
                    } else {
                        None
                    };
                    if let Some(s) = side {
                        trace.push(RatioPoint { x, rho: e.mean, se: e.se });
                        return Ok(s);
                    }
                    let more = ladder.paths().min(*max_budget - ladder.paths());
                    ladder.extend(law, more);
                }
            }
        }
    }

    fn paths(&self) -> usize {
        match self {
            Engine::Exact(_) => 0,
            Engine::Mc { ladder, .. } => ladder.paths(),
        }
    }
}

enum Located {
    AtX0,
    Found { u: f64, tol: f64 },
    Floor { floor: f64 },
    Ceiling { ambiguous: bool },
}

struct Search<'a> {
    law: &'a IncrementLaw,
    f: &'a RewardFunction,
    engine: Engine,
    trace: Vec<RatioPoint>,
}

impl Search<'_> {
    fn side(&mut self, x: f64) -> Result<Side, PassageError> {
        self.engine.side(self.law, self.f, x, &mut self.trace)
    }

    fn locate(&mut self, x_lo: f64, x_hi: f64, scale: f64, tol: f64) -> Result<Located, PassageError> {
        let x0 = self.f.x0();
        let floor = x_lo - EXPANSION_LIMIT * scale;
        let ceiling = x_hi + EXPANSION_LIMIT * scale;
        let mut amb: Option<f64> = None;
        let mut below: Option<f64> = None;
        let mut lo;
        let mut width = x_hi - x_lo;
        if x0.is_finite() {
            lo = x0;
            match self.side(x0)? {
                Side::Below => return Ok(Located::AtX0),
                Side::Ambiguous => amb = Some(x0),
                Side::Above => {}
            }
        } else {
            lo = x_lo;
            let mut w = width;
            loop {
                match self.side(lo)? {
                    Side::Above => break,
                    Side::Ambiguous => {
                        amb.get_or_insert(lo);
                    }
                    Side::Below => below = Some(lo),
                }
                lo -= w;
                w *= 2.0;
                if lo < floor {
                    return Ok(Located::Floor { floor });
                }
            }
        }
        let mut hi = match below {
            Some(b) => b,
            None => {
                let mut hi = x_hi.max(lo + width);
                loop {
                    match self.side(hi)? {
                        Side::Below => break hi,
                        Side::Above => {
                            lo = hi;
                            amb = None;
                        }
                        Side::Ambiguous => {
                            amb.get_or_insert(hi);
                        }
                    }
                    hi += width;
                    width *= 2.0;
                    if hi > ceiling {
                        return Ok(Located::Ceiling { ambiguous: amb.is_some() });
                    }
                }
            }
        };
        if let Some(m) = amb {
            return self.zone(lo, m, hi, tol);
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match self.side(mid)? {
                Side::Above => lo = mid,
                Side::Below => hi = mid,
                Side::Ambiguous => return self.zone(lo, mid, hi, tol),
            }
        }
        Ok(Located::Found { u: 0.5 * (lo + hi), tol: 0.5 * (hi - lo) })
    }

    /// Brackets the region where `ρ` cannot be told from 1 around `mid`.
    fn zone(&mut self, lo: f64, mid: f64, hi: f64, tol: f64) -> Result<Located, PassageError> {
        let (mut a_lo, mut a_hi) = (lo, mid);
        while a_hi - a_lo > tol {
            let m = 0.5 * (a_lo + a_hi);
            if m <= a_lo || m >= a_hi {
                break;
            }
            if self.side(m)? == Side::Above {
                a_lo = m;
            } else {
                a_hi = m;
            }
        }
        let (mut b_lo, mut b_hi) = (mid, hi);
        while b_hi - b_lo > tol {
            let m = 0.5 * (b_lo + b_hi);
            if m <= b_lo || m >= b_hi {
                break;
            }
            if self.side(m)? == Side::Below {
                b_hi = m;
            } else {
                b_lo = m;
            }
        }
        let (a, b) = (a_lo, b_hi);
        Ok(Located::Found { u: 0.5 * (a + b), tol: 0.5 * (b - a) + tol })
    }
}

fn scale_of(law: &IncrementLaw) -> f64 {
    law.scale()
}

fn default_bracket(f: &RewardFunction, scale: f64) -> [f64; 2] {
    let x0 = f.x0();
    if x0.is_finite() {
        [x0 + 1e-6 * scale, x0 + 100.0 * scale]
    } else {
        [-100.0 * scale, 100.0 * scale]
    }
}

/// `ρ(x) = E_x[e^{−qT_x} g(X_{T_x}); T_x < ∞] / g(x)`, `+∞` where `g(x) = 0`.
pub fn one_step_ratio(law: &IncrementLaw, f: &RewardFunction, q: f64, x: f64, opts: &SolveOptions) -> Result<Estimate, SolverError> {
    opts.validate()?;
    let (engine, _) = Engine::new(&Dynamics::Walk(law.clone()), q, opts)?;
    Ok(engine.ratio(f, x)?)
}

/// Threshold-rule value `Q_y(x) = E_x[e^{−qτ_y} g(X_{τ_y}); τ_y < ∞]`.
pub fn value_with_threshold(
    law: &IncrementLaw,
    f: &RewardFunction,
    q: f64,
    threshold: f64,
    x: f64,
    opts: &SolveOptions,
) -> Result<Estimate, SolverError> {
    if x >= threshold {
        return Ok(Estimate::exact(f.eval(x)));
    }
    if threshold == f64::INFINITY {
        return Err(SolverError::PreconditionViolated("threshold +inf has no threshold-rule value".into()));
    }
    let method = opts.method.unwrap_or(if law.as_lattice().is_some() { Method::ExactLattice } else { Method::MonteCarlo });
    match method {
        Method::ExactLattice => {
            let lat = law.as_lattice().ok_or(PassageError::NotLattice)?;
            Ok(Estimate::exact(LadderTable::new(lat, q)?.threshold_value(f, threshold, x)))
        }
        Method::MonteCarlo => Ok(first_passage_mc(
            law,
            f,
            q,
            threshold,
            x,
            PassageKind::Entry,
            opts.value_budget,
            opts.seed ^ VALUE_DOMAIN,
            opts.sim(),
        )?),
    }
}

fn default_levels(law: &IncrementLaw) -> Vec<f64> {
    let s = scale_of(law);
    [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|l| l * s).collect()
}

/// `W = lim_y Q_y(0)` along an increasing level schedule, with
/// `V(x) = e^{βx} W`. Only meaningful once `u = ∞` is established.
pub fn never_stop_value(
    law: &IncrementLaw,
    f: &RewardFunction,
    q: f64,
    regime: &Regime,
    opts: &SolveOptions,
) -> Result<NeverStopValue, SolverError> {
    if !matches!(regime, Regime::NeverStop { .. }) {
        return Err(SolverError::PreconditionViolated(format!("regime must be never-stop, got {regime:?}")));
    }
    never_stop_iterates(&Dynamics::Walk(law.clone()), f, q, None, opts)
}

fn never_stop_iterates(
    dynamics: &Dynamics,
    f: &RewardFunction,
    q: f64,
    table: Option<&LadderTable>,
    opts: &SolveOptions,
) -> Result<NeverStopValue, SolverError> {
    let law = dynamics.law();
    let levels = opts.levels.clone().unwrap_or_else(|| default_levels(law));
    if levels.len() < 2 || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SolverError::PreconditionViolated("level schedule must be increasing with at least two levels".into()));
    }
    let tol = opts.never_stop_tol;
    let beta = f.asymptotic_slope();
    let method = opts.method.unwrap_or(dynamics.default_method());
    let iterates: Vec<LevelIterate> = match method {
        Method::ExactLattice => {
            let owned;
            let table = match table {
                Some(t) => t,
                None => {
                    let lat = law.as_lattice().ok_or(PassageError::NotLattice)?;
                    owned = LadderTable::new(lat, q)?;
                    &owned
                }
            };
            levels.iter().map(|&y| LevelIterate { level: y, value: table.threshold_value(f, y, 0.0), se: 0.0 }).collect()
        }
        Method::MonteCarlo => {
            let set = dynamics.passages(q, &levels, false, opts.value_budget, opts.seed, NEVER_STOP_DOMAIN, opts)?;
            levels
                .iter()
                .enumerate()
                .map(|(j, &y)| {
                    let e = set.estimate_target(j, |s| f.eval(s));
                    LevelIterate { level: y, value: e.mean, se: e.se }
                })
                .collect()
        }
    };
    let mut out = NeverStopValue { w: f64::NAN, se: f64::NAN, beta, iterates: iterates.clone(), diverged: false, extrapolated: false };
    if iterates.iter().any(|it| !(it.value <= DIVERGENCE_CAP)) {
        out.w = f64::INFINITY;
        out.diverged = true;
        return Ok(out);
    }
    let n = iterates.len();
    let (a, b) = (iterates[n - 2], iterates[n - 1]);
    let last = b.value - a.value;
    let noise = 3.0 * (a.se * a.se + b.se * b.se).sqrt();
    if n >= 3 {
        let prev = a.value - iterates[n - 3].value;
        if last > tol.max(noise) && last >= 0.9 * prev {
            out.w = f64::INFINITY;
            out.diverged = true;
            return Ok(out);
        }
    }
    if last.abs() > tol.max(noise) {
        return Err(SolverError::ScheduleTooShort { prev: a.value, last: b.value, tol });
    }
    out.w = b.value;
    out.se = b.se;
    if n >= 3 {
        let c = iterates[n - 3].value;
        let denom = (b.value - a.value) - (a.value - c);
        if denom < 0.0 && last > 0.0 {
            let aitken = b.value - last * last / denom;
            if aitken.is_finite() && aitken >= b.value {
                out.w = aitken;
                out.extrapolated = true;
            }
        }
    }
    Ok(out)
}

/// Solution together with the machinery to evaluate `V`.
pub struct Solved {
    pub solution: ThresholdSolution,
    dynamics: Dynamics,
    reward: RewardFunction,
    q: f64,
    table: Option<LadderTable>,
}

impl std::fmt::Debug for Solved {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("Solved").field("solution", &self.solution).finish_non_exhaustive()
    }
}

impl Solved {
    pub fn reward(&self) -> &RewardFunction {
        &self.reward
    }

    /// Increment law; the time-one law for continuous-time solves.
    pub fn law(&self) -> &IncrementLaw {
        self.dynamics.law()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Same dynamics and reward with the threshold rule at `u` in place of
    /// the solved regime.
    pub fn with_threshold(&self, u: f64) -> Solved {
        let mut solution = self.solution.clone();
        solution.regime = Regime::Finite { u };
        Solved { solution, dynamics: self.dynamics.clone(), reward: self.reward.clone(), q: self.q, table: self.table.clone() }
    }

    /// `V(x)`: `g` on `[u, ∞)`, the threshold-rule value below `u`, and
    /// `e^{βx} W` when stopping is never optimal.
    pub fn value(&self, x: f64) -> Result<Estimate, SolverError> {
        Ok(self.value_grid(&[x])?.remove(0))
    }

    /// `V` on a grid, sharing random numbers across grid points.
    pub fn value_grid(&self, xs: &[f64]) -> Result<Vec<Estimate>, SolverError> {
        let f = &self.reward;
        match &self.solution.regime {
            Regime::StopEverywhere => Ok(xs.iter().map(|&x| Estimate::exact(f.eval(x))).collect()),
            Regime::NeverStop { .. } => {
                let ns = self.solution.never_stop.as_ref().expect("never-stop regime carries W");
                Ok(xs
                    .iter()
                    .map(|&x| {
                        let v = ns.value(x);
                        let se = if ns.se.is_finite() { (ns.beta * x).exp() * ns.se } else { 0.0 };
                        Estimate { mean: v, se, n: 0, reliable: true, truncation_bound: 0.0 }
                    })
                    .collect())
            }
            Regime::Inconclusive { reason } => {
                Err(SolverError::PreconditionViolated(format!("no value function for an inconclusive solve: {reason}")))
            }
            Regime::Finite { u } => self.threshold_grid(*u, xs),
        }
    }

    fn threshold_grid(&self, u: f64, xs: &[f64]) -> Result<Vec<Estimate>, SolverError> {
        let f = &self.reward;
        if let Some(t) = &self.table {
            return Ok(xs
                .iter()
                .map(|&x| Estimate::exact(if x >= u { f.eval(x) } else { t.threshold_value(f, u, x) }))
                .collect());
        }
        let below: Vec<f64> = xs.iter().filter(|&&x| x < u).map(|&x| u - x).collect();
        if below.is_empty() {
            return Ok(xs.iter().map(|&x| Estimate::exact(f.eval(x))).collect());
        }
        let opts = &self.solution.options;
        let set = self.dynamics.passages(self.q, &below, false, opts.value_budget, opts.seed, VALUE_DOMAIN, opts)?;
        let targets = set.targets().to_vec();
        xs.iter()
            .map(|&x| {
                if x >= u {
                    return Ok(Estimate::exact(f.eval(x)));
                }
                let d = u - x;
                let j = targets.partition_point(|t| *t < d);
                let e = set.estimate_target(j, |s| f.eval(x + s));
                set.check_truncation(&e)?;
                Ok(e)
            })
            .collect()
    }
}

/// Locates `u`, consults the finiteness classifier and packages the regime.
pub fn find_threshold(law: &IncrementLaw, f: &RewardFunction, q: f64, opts: &SolveOptions) -> Result<ThresholdSolution, SolverError> {
    Ok(solve(law, f, q, opts)?.solution)
}

/// End-to-end solve: classify, search the threshold, attach `W` or the
/// one-sided limit at `u` where needed. Sub-module failures surface as an
/// inconclusive regime with the reason chain.
pub fn solve(law: &IncrementLaw, f: &RewardFunction, q: f64, opts: &SolveOptions) -> Result<Solved, SolverError> {
    solve_dynamics(Dynamics::Walk(law.clone()), f, q, opts)
}

pub(crate) fn solve_dynamics(dynamics: Dynamics, f: &RewardFunction, q: f64, opts: &SolveOptions) -> Result<Solved, SolverError> {
    opts.validate()?;
    let law = &dynamics.law().clone();
    if !(q >= 0.0 && q.is_finite()) {
        return Err(SolverError::PreconditionViolated(format!("discount q = {q} must be finite and nonnegative")));
    }
    let classification = light_tail_characterization(law, f, q);
    let default_method = dynamics.default_method();
    let mut solution = ThresholdSolution {
        regime: Regime::Inconclusive { reason: String::new() },
        tolerance: 0.0,
        ratio_trace: Vec::new(),
        method: opts.method.unwrap_or(default_method),
        classification,
        value_left_of_u: None,
        never_stop: None,
        classifier_conflict: false,
        budget_used: 0,
        seed: opts.seed,
        options: opts.clone(),
    };
    let mut solved = Solved { solution: solution.clone(), dynamics: dynamics.clone(), reward: f.clone(), q, table: None };

    let engine = match Engine::new(&dynamics, q, opts) {
        Ok((e, _)) => e,
        Err(e) => {
            solution.regime = if solution.classification.verdict == Verdict::Infinite {
                never_stop_regime(&dynamics, f, q, None, opts, &mut solution, &format!("ratio engine unavailable ({e})"))
            } else {
                Regime::Inconclusive { reason: format!("solver: ratio engine: {e}") }
            };
            solved.solution = solution;
            return Ok(solved);
        }
    };
    let scale = match &engine {
        Engine::Exact(t) => t.unit(),
        Engine::Mc { .. } => scale_of(law),
    };
    let [x_lo, x_hi] = opts.bracket.unwrap_or_else(|| default_bracket(f, scale));
    let mut search = Search { law, f, engine, trace: Vec::new() };
    let located = search.locate(x_lo, x_hi, scale, opts.tol);
    let Search { engine, mut trace, .. } = search;
    trace.sort_by(|a, b| a.x.total_cmp(&b.x));
    trace.dedup_by(|a, b| a.x == b.x);
    solution.ratio_trace = trace;
    solution.budget_used = engine.paths();
    let table = match engine {
        Engine::Exact(t) => Some(t),
        Engine::Mc { .. } => None,
    };
    let infinite = solution.classification.verdict == Verdict::Infinite;

    solution.regime = match located {
        Err(e) => Regime::Inconclusive { reason: format!("solver: ratio evaluation: {e}") },
        Ok(Located::AtX0) => Regime::Finite { u: f.x0() },
        Ok(Located::Found { u, tol }) => {
            solution.tolerance = tol;
            Regime::Finite { u }
        }
        Ok(Located::Floor { floor }) => {
            let s = f.left_limit_slope().unwrap_or_else(|| f.log_deriv_left(floor));
            if -q + law.log_mgf(s) <= 0.0 {
                Regime::StopEverywhere
            } else {
                Regime::Inconclusive {
                    reason: format!("solver: rho <= 1 down to {floor:.3e} but e^-q phi({s}) > 1, u = -inf not certified"),
                }
            }
        }
        Ok(Located::Ceiling { ambiguous }) => {
            if infinite {
                never_stop_regime(&dynamics, f, q, table.as_ref(), opts, &mut solution, "")
            } else if ambiguous {
                Regime::Inconclusive { reason: "solver: rho indistinguishable from 1 up to the ceiling".into() }
            } else {
                solution.classifier_conflict = solution.classification.verdict == Verdict::Finite;
                Regime::Inconclusive { reason: "solver: rho > 1 up to the ceiling without a classifier certificate for u = inf".into() }
            }
        }
    };
    if infinite && matches!(solution.regime, Regime::Finite { .. } | Regime::StopEverywhere) {
        solution.classifier_conflict = true;
        solution.regime = Regime::Inconclusive {
            reason: format!("solver found {:?} but the classifier certifies u = inf", solution.regime),
        };
    }
    if let Regime::Finite { u } = solution.regime {
        if u == f.x0() && f.eval(u) > 0.0 {
            let below = u - 1e-9 * scale.max(u.abs() * 1e-3);
            if f.eval(below) < f.eval(u) {
                solved.table = table.clone();
                solved.solution = solution.clone();
                solution.value_left_of_u = solved.threshold_grid(u, &[below]).ok().map(|v| v[0].mean);
            }
        }
    }
    solved.table = table;
    solved.solution = solution;
    Ok(solved)
}

fn never_stop_regime(
    dynamics: &Dynamics,
    f: &RewardFunction,
    q: f64,
    table: Option<&LadderTable>,
    opts: &SolveOptions,
    solution: &mut ThresholdSolution,
    context: &str,
) -> Regime {
    match never_stop_iterates(dynamics, f, q, table, opts) {
        Ok(ns) => {
            let r = Regime::NeverStop { w: ns.w, beta: ns.beta };
            solution.never_stop = Some(ns);
            r
        }
        Err(e) => Regime::Inconclusive {
            reason: if context.is_empty() {
                format!("solver: u = inf certified but W failed: {e}")
            } else {
                format!("solver: {context}; u = inf certified but W failed: {e}")
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Verdict;

    fn walk(p: f64) -> IncrementLaw {
        IncrementLaw::simple(p).unwrap()
    }

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn ratio_examples() {
        let law = walk(0.25);
        let f = RewardFunction::power_plus(1.0).unwrap();
        let r = one_step_ratio(&law, &f, 0.0, 1.0, &opts()).unwrap();
        assert!((r.mean - 0.75).abs() < 1e-12);
        let r = one_step_ratio(&law, &f, 0.0, 0.25, &opts()).unwrap();
        assert!((r.mean - 1.5).abs() < 1e-12);
        let ind = RewardFunction::indicator(0.0).unwrap();
        assert_eq!(one_step_ratio(&walk(0.5), &ind, 0.2, -1.0, &opts()).unwrap().mean, f64::INFINITY);
    }

    #[test]
    fn expected_maximum_threshold() {
        let s = solve(&walk(0.25), &RewardFunction::power_plus(1.0).unwrap(), 0.0, &opts()).unwrap();
        let Regime::Finite { u } = s.solution.regime else { panic!("{:?}", s.solution.regime) };
        assert!((u - 0.5).abs() < 1e-6);
        assert!((s.value(0.0).unwrap().mean - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(s.value(1.0).unwrap().mean, 1.0);
        let tr = &s.solution.ratio_trace;
        assert!(tr.windows(2).all(|w| w[1].rho <= w[0].rho + 1e-12));
    }

    #[test]
    fn recurrent_walk_never_stops() {
        let s = solve(&walk(0.5), &RewardFunction::power_plus(1.0).unwrap(), 0.0, &opts()).unwrap();
        assert_eq!(s.solution.classification.verdict, Verdict::Infinite);
        match s.solution.regime {
            Regime::NeverStop { w, beta } => {
                assert_eq!(w, f64::INFINITY);
                assert_eq!(beta, 0.0);
            }
            r => panic!("{r:?}"),
        }
        assert_eq!(s.value(3.0).unwrap().mean, f64::INFINITY);
    }

    #[test]
    fn strict_supermartingale_stops_everywhere() {
        let f = RewardFunction::exp_linear(0.0, 1.0).unwrap();
        let s = solve(&walk(0.5), &f, 0.7, &opts()).unwrap();
        assert_eq!(s.solution.regime, Regime::StopEverywhere);
        assert_eq!(s.value(-2.0).unwrap().mean, (-2f64).exp());
    }

    #[test]
    fn indicator_threshold_at_x0() {
        let law = walk(0.5);
        let f = RewardFunction::indicator(0.0).unwrap();
        let s = solve(&law, &f, 0.2, &opts()).unwrap();
        assert_eq!(s.solution.regime, Regime::Finite { u: 0.0 });
        // E_x e^{−0.2 τ₀} = r^{|x|} for the skip-free walk
        let r = {
            let a = (-0.2f64).exp();
            (1.0 - (1.0 - a * a).sqrt()) / a
        };
        assert!((s.value(-2.0).unwrap().mean - r * r).abs() < 1e-10);
        assert!((s.solution.value_left_of_u.unwrap() - r).abs() < 1e-9);
    }

    #[test]
    fn threshold_values() {
        let law = walk(0.25);
        let f = RewardFunction::power_plus(1.0).unwrap();
        let v = value_with_threshold(&law, &f, 0.0, 0.5, 0.0, &opts()).unwrap();
        assert!((v.mean - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(value_with_threshold(&law, &f, 0.0, f64::NEG_INFINITY, 2.0, &opts()).unwrap().mean, 2.0);
        assert_eq!(value_with_threshold(&law, &f, 0.0, 1.0, 3.0, &opts()).unwrap().mean, 3.0);
    }

    #[test]
    fn never_stop_iterates_examples() {
        let mut o = opts();
        o.levels = Some(vec![10.0, 20.0, 40.0]);
        let f = RewardFunction::power_plus(1.0).unwrap();
        let ns = never_stop_value(&walk(0.5), &f, 0.0, &Regime::NeverStop { w: f64::INFINITY, beta: 0.0 }, &o).unwrap();
        assert!(ns.diverged);
        assert_eq!(ns.w, f64::INFINITY);
        let vals: Vec<f64> = ns.iterates.iter().map(|i| i.value).collect();
        assert!((vals[0] - 10.0).abs() < 1e-6 && (vals[2] - 40.0).abs() < 1e-6, "{vals:?}");

        let mart = RewardFunction::exp_linear(0.0, 1.0).unwrap();
        let ns = never_stop_iterates(&Dynamics::Walk(walk(0.5)), &mart, 1f64.cosh().ln(), None, &o).unwrap();
        for it in &ns.iterates {
            assert!((it.value - 1.0).abs() < 1e-8, "{ns:?}");
        }
        assert!((ns.w - 1.0).abs() < 1e-8);

        let finite = Regime::Finite { u: 0.5 };
        assert!(matches!(never_stop_value(&walk(0.5), &f, 0.0, &finite, &o), Err(SolverError::PreconditionViolated(_))));
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let law = walk(0.25);
        let f = RewardFunction::power_plus(1.0).unwrap();
        let mut o = opts();
        o.method = Some(Method::MonteCarlo);
        o.tol = 1e-3;
        o.seed = 5;
        let s = solve(&law, &f, 0.0, &o).unwrap();
        let Regime::Finite { u } = s.solution.regime else { panic!("{:?}", s.solution.regime) };
        assert!((u - 0.5).abs() <= s.solution.tolerance + 1e-3, "{u} ± {}", s.solution.tolerance);
        let v = s.value(0.0).unwrap();
        assert!((v.mean - 1.0 / 3.0).abs() < 4.0 * v.se + 1e-3, "{v:?}");
    }

    #[test]
    fn solution_json_round_trip() {
        let s = solve(&walk(0.5), &RewardFunction::power_plus(1.0).unwrap(), 0.0, &opts()).unwrap();
        let text = serde_json::to_string(&s.solution).unwrap();
        assert!(text.contains(r#""w":"inf""#));
        let back: ThresholdSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back.regime, s.solution.regime);
    }

    #[test]
    fn bad_options_rejected() {
        let mut o = opts();
        o.tol = 0.0;
        assert!(solve(&walk(0.25), &RewardFunction::power_plus(1.0).unwrap(), 0.0, &o).is_err());
        let mut o = opts();
        o.bracket = Some([1.0, 1.0]);
        assert!(solve(&walk(0.25), &RewardFunction::power_plus(1.0).unwrap(), 0.0, &o).is_err());
    }
}
