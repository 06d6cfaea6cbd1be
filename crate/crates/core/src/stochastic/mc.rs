//! Monte Carlo first passages of random walks.
//!
//! One simulated increment sequence serves several passage targets at once:
//! a target `d` is reached at the first `n ≥ 1` with `S_n ≥ d`, where `S` is
//! the walk started at 0. Starting points `x` and levels `y` enter only
//! through `d = y − x`, so estimates at different starting points share
//! random numbers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::PassageError;
use crate::stats::{run_batches, Estimate};
use crate::stochastic::law::{poisson_draw, IncrementLaw, JumpLaw, SamplerFamily, SamplerLaw};

/// Discounted return weight below which a path is abandoned.
pub const ABANDON_WEIGHT: f64 = 1e-14;

/// Step cap applied when there is no discounting.
pub const UNDISCOUNTED_STEP_CAP: u64 = 10_000_000;

/// Caller options for passage simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Permit `q = 0` without a verified negative drift.
    pub allow_undiscounted: bool,
    /// Step cap; defaults to [`UNDISCOUNTED_STEP_CAP`] when `q = 0`.
    pub step_cap: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { allow_undiscounted: false, step_cap: None }
    }
}

/// Path generator that skips runs of jumpless steps exactly when the law is
/// a nonpositive drift plus compound Poisson jumps.
pub(crate) struct Stepper<'a> {
    law: &'a IncrementLaw,
    skip: Option<Skip<'a>>,
}

struct Skip<'a> {
    drift: f64,
    rate: f64,
    jump: &'a JumpLaw,
    gaps: Geometric,
    cap: Option<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(law: &'a IncrementLaw) -> Self {
        let skip = law.pure_jump_parts().and_then(|(drift, rate, jump)| {
            (drift <= 0.0).then(|| Skip {
                drift,
                rate,
                jump,
                gaps: Geometric::new(-(-rate).exp_m1()).expect("jump probability in (0,1]"),
                cap: match law {
                    IncrementLaw::Sampler(s) => s.cap(),
                    IncrementLaw::Lattice(_) => None,
                },
            })
        });
        Self { law, skip }
    }

    /// Advances to the next step at which the walk can move up; returns the
    /// number of steps consumed and the total increment.
    #[inline]
    pub(crate) fn advance(&self, rng: &mut ChaCha8Rng) -> (u64, f64) {
        match &self.skip {
            None => (1, self.law.sample(rng)),
            Some(s) => {
                let idle = s.gaps.sample(rng);
                let n = poisson_draw(rng, s.rate, 1);
                let mut x = s.drift;
                for _ in 0..n {
                    x += s.jump.draw(rng);
                }
                if let Some(c) = s.cap {
                    x = x.min(c);
                }
                (idle + 1, idle as f64 * s.drift + x)
            }
        }
    }
}

/// How a simulated path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEnd {
    Completed,
    Abandoned,
    /// Removed by roulette; unbiasedness is carried by the survivors.
    Rouletted,
    Capped,
}

/// A single first passage of the zero-started walk over a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPassageSample {
    /// `None` stands for a passage that never happened (abandoned or capped).
    pub time: Option<f64>,
    /// `S` at the passage; meaningful only when `time` is finite.
    pub position: f64,
    pub discount_weight: f64,
}

/// Passage records for a fixed set of targets over many paths.
#[derive(Debug, Clone)]
pub struct PassageSet {
    q: f64,
    /// Exponential rate certifying abandonment and, when `exact_root`, the
    /// martingale control variate.
    decay: f64,
    exact_root: bool,
    targets: Vec<f64>,
    /// Row-major `paths × targets`; `NaN` time for passages that never happened.
    times: Vec<f64>,
    positions: Vec<f64>,
    /// Roulette weight of each record.
    weights: Vec<f64>,
    abandoned: usize,
    capped: usize,
    batches: u64,
    seed: u64,
    domain: u64,
    cap: u64,
    continuous: Option<ContinuousModel>,
}

/// Compound Poisson process with nonpositive drift, simulated event by event.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub drift: f64,
    pub rate: f64,
    pub jump: JumpLaw,
    /// Passages require `S > d` instead of `S ≥ d`.
    pub strict: bool,
}

impl ContinuousModel {
    /// Law of the increment over one time unit.
    pub fn time_one_law(&self) -> Result<IncrementLaw, crate::error::LawError> {
        Ok(IncrementLaw::Sampler(SamplerLaw::new(SamplerFamily::JumpDiffusion {
            drift: self.drift,
            sd: 0.0,
            jump_rate: self.rate,
            jump: self.jump.clone(),
        })?))
    }
}

/// Bound on a path's remaining contribution below which it plays roulette.
pub const ROULETTE_WEIGHT: f64 = 1e-3;

#[derive(Default)]
struct PathState {
    clock: f64,
    s: f64,
    next: usize,
    /// Roulette weight; survivors of a roulette round double it.
    weight: f64,
}

impl PathState {
    /// Ends the path when every target is reached, or when its remaining
    /// contribution `weight·e^{−q·clock − decay·(d − S)}` is negligible.
    /// Between the roulette and abandonment bounds the path survives with
    /// probability 1/2 at doubled weight, which keeps estimates unbiased.
    fn check(&mut self, targets: &[f64], q: f64, decay: f64, rng: &mut ChaCha8Rng) -> Option<PathEnd> {
        if self.next == targets.len() {
            return Some(PathEnd::Completed);
        }
        let w = if self.weight == 0.0 { 1.0 } else { self.weight };
        let log_bound = w.ln() - q * self.clock - decay * (targets[self.next] - self.s);
        if log_bound < ABANDON_WEIGHT.ln() {
            return Some(PathEnd::Abandoned);
        }
        if log_bound < ROULETTE_WEIGHT.ln() {
            if rng.random::<bool>() {
                self.weight = 2.0 * w;
            } else {
                return Some(PathEnd::Rouletted);
            }
        }
        None
    }
}

struct Records {
    nt: usize,
    times: Vec<f64>,
    positions: Vec<f64>,
    weights: Vec<f64>,
    abandoned: usize,
    capped: usize,
}

impl Records {
    fn new(size: usize, nt: usize) -> Self {
        Self {
            nt,
            times: vec![f64::NAN; size * nt],
            positions: vec![0.0; size * nt],
            weights: vec![0.0; size * nt],
            abandoned: 0,
            capped: 0,
        }
    }

    #[inline]
    fn record(&mut self, p: usize, targets: &[f64], path: &mut PathState, reached: impl Fn(f64, f64) -> bool) {
        while path.next < targets.len() && reached(path.s, targets[path.next]) {
            let k = p * self.nt + path.next;
            self.times[k] = path.clock;
            self.positions[k] = path.s;
            self.weights[k] = if path.weight == 0.0 { 1.0 } else { path.weight };
            path.next += 1;
        }
    }

    fn finish(&mut self, end: PathEnd) {
        match end {
            PathEnd::Abandoned => self.abandoned += 1,
            PathEnd::Capped => self.capped += 1,
            PathEnd::Completed | PathEnd::Rouletted => {}
        }
    }
}

fn check_discount(law: &IncrementLaw, q: f64, opts: &SimOptions) -> Result<(), PassageError> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(PassageError::PreconditionViolated(format!("discount q = {q} must be finite and nonnegative")));
    }
    if q == 0.0 && !opts.allow_undiscounted {
        match law.mean() {
            Some(m) if m != 0.0 => {}
            _ => {
                return Err(PassageError::PreconditionViolated(
                    "q = 0 needs a nonzero finite drift or an explicit override".into(),
                ))
            }
        }
    }
    Ok(())
}

impl PassageSet {
    /// Simulates `budget` paths of the walk with increments `law` and records
    /// the first passage over each target distance.
    pub fn simulate(
        law: &IncrementLaw,
        q: f64,
        targets: &[f64],
        budget: usize,
        seed: u64,
        domain: u64,
        opts: SimOptions,
    ) -> Result<Self, PassageError> {
        if budget == 0 {
            return Err(PassageError::PreconditionViolated("budget must be at least 1".into()));
        }
        check_discount(law, q, &opts)?;
        let root = law.mgf_root(q);
        let decay = law.decay_rate(q);
        let mut sorted = targets.to_vec();
        sorted.sort_by(f64::total_cmp);
        let cap = opts.step_cap.unwrap_or(if q == 0.0 { UNDISCOUNTED_STEP_CAP } else { u64::MAX });
        let mut set = Self {
            q,
            decay,
            exact_root: root.is_some(),
            targets: sorted,
            times: Vec::new(),
            positions: Vec::new(),
            weights: Vec::new(),
            abandoned: 0,
            capped: 0,
            batches: 0,
            seed,
            domain,
            cap,
            continuous: None,
        };
        set.extend(law, budget);
        Ok(set)
    }

    /// Continuous-time counterpart for `drift·t + compound Poisson` with
    /// `drift ≤ 0`; passages can only happen at jump times.
    pub fn simulate_continuous(
        model: &ContinuousModel,
        q: f64,
        targets: &[f64],
        budget: usize,
        seed: u64,
        domain: u64,
        opts: SimOptions,
    ) -> Result<Self, PassageError> {
        if budget == 0 {
            return Err(PassageError::PreconditionViolated("budget must be at least 1".into()));
        }
        if !(model.drift <= 0.0 && model.rate > 0.0 && model.rate.is_finite()) {
            return Err(PassageError::PreconditionViolated("event-driven paths need drift <= 0 and a finite positive jump rate".into()));
        }
        let law = model.time_one_law().map_err(|e| PassageError::PreconditionViolated(e.to_string()))?;
        check_discount(&law, q, &opts)?;
        let mut sorted = targets.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut set = Self {
            q,
            decay: law.decay_rate(q),
            exact_root: law.mgf_root(q).is_some(),
            targets: sorted,
            times: Vec::new(),
            positions: Vec::new(),
            weights: Vec::new(),
            abandoned: 0,
            capped: 0,
            batches: 0,
            seed,
            domain,
            cap: opts.step_cap.unwrap_or(if q == 0.0 { UNDISCOUNTED_STEP_CAP } else { u64::MAX }),
            continuous: Some(model.clone()),
        };
        set.extend_continuous(budget);
        Ok(set)
    }

    pub fn paths(&self) -> usize {
        self.times.len() / self.targets.len().max(1)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn abandoned(&self) -> usize {
        self.abandoned
    }

    pub fn capped(&self) -> usize {
        self.capped
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Adds `more` paths using fresh batch streams.
    pub fn extend(&mut self, law: &IncrementLaw, more: usize) {
        if self.continuous.is_some() {
            self.extend_continuous(more);
            return;
        }
        let targets = self.targets.clone();
        let (q, decay, cap) = (self.q, self.decay, self.cap);
        let out = run_batches(self.seed, self.domain, self.batches, more, |rng, size| {
            let stepper = Stepper::new(law);
            let mut rec = Records::new(size, targets.len());
            for p in 0..size {
                let mut path = PathState::default();
                let end = loop {
                    let (dn, dx) = stepper.advance(rng);
                    path.clock += dn as f64;
                    path.s += dx;
                    rec.record(p, &targets, &mut path, |s, d| s >= d);
                    if let Some(end) = path.check(&targets, q, decay, rng) {
                        break end;
                    }
                    if path.clock >= cap as f64 {
                        break PathEnd::Capped;
                    }
                };
                rec.finish(end);
            }
            rec
        });
        self.absorb(out, more);
    }

    fn extend_continuous(&mut self, more: usize) {
        let model = self.continuous.clone().expect("continuous model");
        let targets = self.targets.clone();
        let (q, decay) = (self.q, self.decay);
        let event_cap = self.cap;
        let out = run_batches(self.seed, self.domain, self.batches, more, |rng, size| {
            let wait = rand_distr::Exp::new(model.rate).expect("positive rate");
            let mut rec = Records::new(size, targets.len());
            let strict = model.strict;
            for p in 0..size {
                let mut path = PathState::default();
                let mut events = 0u64;
                let end = loop {
                    let dt = wait.sample(rng);
                    path.clock += dt;
                    path.s += model.drift * dt + model.jump.draw(rng);
                    events += 1;
                    rec.record(p, &targets, &mut path, |s, d| s > d || (!strict && s >= d));
                    if let Some(end) = path.check(&targets, q, decay, rng) {
                        break end;
                    }
                    if events >= event_cap {
                        break PathEnd::Capped;
                    }
                };
                rec.finish(end);
            }
            rec
        });
        self.absorb(out, more);
    }

    fn absorb(&mut self, out: Vec<Records>, more: usize) {
        self.batches += more.div_ceil(crate::stats::BATCH) as u64;
        for r in out {
            self.times.extend(r.times);
            self.positions.extend(r.positions);
            self.weights.extend(r.weights);
            self.abandoned += r.abandoned;
            self.capped += r.capped;
        }
    }

    /// Passage of target `j` on path `i`.
    pub fn sample(&self, i: usize, j: usize) -> FirstPassageSample {
        let k = i * self.targets.len() + j;
        let t = self.times[k];
        if t.is_nan() {
            FirstPassageSample { time: None, position: f64::NAN, discount_weight: 0.0 }
        } else {
            FirstPassageSample { time: Some(t), position: self.positions[k], discount_weight: self.weights[k] * (-self.q * t).exp() }
        }
    }

    /// Estimates `E[Σ_j w_j e^{−q·time_j} payoff(j, S_j)]`, using the
    /// martingale `e^{−q·time + αS}` (mean 1 per target) as a control
    /// variate when `α` is an exact MGF root.
    pub fn estimate<F: Fn(usize, f64) -> f64>(&self, weights: &[f64], payoff: F) -> Estimate {
        let nt = self.targets.len();
        let n = self.paths();
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let (mut yi, mut zi) = (0.0, 0.0);
            for (j, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let k = i * nt + j;
                let t = self.times[k];
                if t.is_nan() {
                    continue;
                }
                let s = self.positions[k];
                let d = -self.q * t;
                let pw = w * self.weights[k];
                yi += pw * d.exp() * payoff(j, s);
                zi += pw * (d + self.decay * s).exp();
            }
            y.push(yi);
            z.push(zi);
        }
        let z_mean: f64 = weights.iter().sum();
        self.finish_estimate(&y, &z, z_mean)
    }

    /// Estimate for target `j` alone, `E[e^{−q·time_j} payoff(S_j)]`.
    pub fn estimate_target<F: Fn(f64) -> f64>(&self, j: usize, payoff: F) -> Estimate {
        let nt = self.targets.len();
        let n = self.paths();
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let k = i * nt + j;
            let t = self.times[k];
            if t.is_nan() {
                y.push(0.0);
                z.push(0.0);
                continue;
            }
            let s = self.positions[k];
            let d = -self.q * t;
            let w = self.weights[k];
            y.push(w * d.exp() * payoff(s));
            z.push(w * (d + self.decay * s).exp());
        }
        self.finish_estimate(&y, &z, 1.0)
    }

    fn finish_estimate(&self, y: &[f64], z: &[f64], z_mean: f64) -> Estimate {
        let control = (self.exact_root && self.decay.is_finite()).then_some((z, z_mean));
        let mut e = Estimate::with_control(y, control);
        let envelope = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        e.truncation_bound = (self.capped as f64 * envelope + self.abandoned as f64 * ABANDON_WEIGHT * envelope) / y.len() as f64;
        e
    }

    /// Fails with `TruncationDominates` when capped paths could move the
    /// estimate by more than 10%.
    pub fn check_truncation(&self, e: &Estimate) -> Result<(), PassageError> {
        if e.truncation_bound > 0.1 * e.mean.abs() && self.capped > 0 {
            return Err(PassageError::TruncationDominates { bound: e.truncation_bound, estimate: e.mean });
        }
        Ok(())
    }
}

/// Draws a single first passage over `d` for callers that want raw samples.
pub fn sample_first_passage(law: &IncrementLaw, q: f64, d: f64, rng: &mut ChaCha8Rng) -> FirstPassageSample {
    let decay = law.decay_rate(q);
    let stepper = Stepper::new(law);
    let cap = if q == 0.0 { UNDISCOUNTED_STEP_CAP } else { u64::MAX };
    let (mut n, mut s) = (0u64, 0.0f64);
    loop {
        let (dn, dx) = stepper.advance(rng);
        n += dn;
        s += dx;
        if s >= d {
            return FirstPassageSample { time: Some(n as f64), position: s, discount_weight: (-q * n as f64).exp() };
        }
        if -q * n as f64 - decay * (d - s) < ABANDON_WEIGHT.ln() || n >= cap {
            return FirstPassageSample { time: None, position: f64::NAN, discount_weight: 0.0 };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_free_ladder_probabilities() {
        let law = IncrementLaw::simple(0.25).unwrap();
        let set = PassageSet::simulate(&law, 0.0, &[0.0], 50_000, 3, 0, SimOptions::default()).unwrap();
        let mass = set.estimate(&[1.0], |_, _| 1.0);
        // P(T0 < ∞) = 0.25 + 0.75/3 = 0.5
        assert!((mass.mean - 0.5).abs() < 4.0 * mass.se + 1e-12, "{mass:?}");
    }

    #[test]
    fn undiscounted_needs_drift() {
        let law = IncrementLaw::simple(0.5).unwrap();
        assert!(PassageSet::simulate(&law, 0.0, &[0.0], 10, 1, 0, SimOptions::default()).is_err());
        assert!(PassageSet::simulate(&law, 0.0, &[0.0], 0, 1, 0, SimOptions::default()).is_err());
    }

    #[test]
    fn skipping_matches_plain_stepping() {
        use crate::stochastic::law::{SamplerFamily, SamplerLaw};
        let fam = SamplerFamily::JumpDiffusion { drift: -0.05, sd: 0.0, jump_rate: 0.05, jump: JumpLaw::Fixed { size: 1.0 } };
        let law = IncrementLaw::Sampler(SamplerLaw::new(fam).unwrap());
        let set = PassageSet::simulate(&law, 0.01, &[0.0, 0.5], 20_000, 5, 0, SimOptions::default()).unwrap();
        // Plain stepping reference through the law's own sampler.
        let mut rng = crate::stats::batch_rng(11, 0, 0);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (mut k, mut s) = (0u64, 0.0);
            loop {
                k += 1;
                s += law.sample(&mut rng);
                if s >= 0.5 {
                    acc += (-0.01 * k as f64).exp();
                    break;
                }
                if k > 20_000 {
                    break;
                }
            }
        }
        let reference = acc / n as f64;
        let e = set.estimate(&[0.0, 1.0], |_, _| 1.0);
        assert!((e.mean - reference).abs() < 0.02, "{} vs {reference}", e.mean);
    }

    #[test]
    fn deterministic_given_seed() {
        let law = IncrementLaw::gaussian(-0.3, 1.0).unwrap();
        let a = PassageSet::simulate(&law, 0.1, &[0.0, 1.0], 3000, 42, 7, SimOptions::default()).unwrap();
        let b = PassageSet::simulate(&law, 0.1, &[0.0, 1.0], 3000, 42, 7, SimOptions::default()).unwrap();
        assert_eq!(a.estimate(&[1.0, 1.0], |_, s| s), b.estimate(&[1.0, 1.0], |_, s| s));
    }
}
