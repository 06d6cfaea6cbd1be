//! One-step increment laws and their moment generating functions.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal, StudentT as StudentTDist};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::LawError;

/// Tolerance on the total mass of a lattice law.
pub const MASS_TOL: f64 = 1e-12;

/// Absolute tolerance of the bisection in [`IncrementLaw::mgf_root`].
pub const ROOT_TOL: f64 = 1e-10;

/// Distribution of a single jump of a compound Poisson component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    Fixed { size: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Positive exponential jumps with the given rate.
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
    Discrete { atoms: Vec<(f64, f64)> },
}

impl JumpLaw {
    pub fn validate(&self) -> Result<(), LawError> {
        let bad = |m: &str| Err(LawError::InvalidParameter(m.to_string()));
        match self {
            JumpLaw::Fixed { size } if !size.is_finite() => bad("jump size must be finite"),
            JumpLaw::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                bad("uniform jumps need finite lo < hi")
            }
            JumpLaw::Exponential { rate } if !(rate.is_finite() && *rate > 0.0) => bad("exponential jump rate must be positive"),
            JumpLaw::Normal { mean, sd } if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) => {
                bad("normal jumps need finite mean and sd >= 0")
            }
            JumpLaw::Discrete { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|(v, p)| !v.is_finite() || !(*p >= 0.0)) {
                    return bad("discrete jumps need finite values and nonnegative probabilities");
                }
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return bad("discrete jump probabilities must sum to 1");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `log E e^{λJ}`.
    pub fn log_mgf(&self, lambda: f64) -> f64 {
        match self {
            JumpLaw::Fixed { size } => lambda * size,
            JumpLaw::Uniform { lo, hi } => {
                if lambda == 0.0 {
                    0.0
                } else {
                    // log((e^{λb} − e^{λa}) / (λ(b − a))) written to avoid overflow
                    let (a, b) = if lambda > 0.0 { (*lo, *hi) } else { (*hi, *lo) };
                    lambda * b + (-(-(lambda * (b - a)).abs()).exp_m1()).ln() - (lambda * (hi - lo)).abs().ln()
                }
            }
            JumpLaw::Exponential { rate } => {
                if lambda < *rate {
                    (rate / (rate - lambda)).ln()
                } else {
                    f64::INFINITY
                }
            }
            JumpLaw::Normal { mean, sd } => lambda * mean + 0.5 * lambda * lambda * sd * sd,
            JumpLaw::Discrete { atoms } => log_sum_exp(atoms.iter().map(|(v, p)| (lambda * v, *p))),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            JumpLaw::Fixed { size } => *size,
            JumpLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            JumpLaw::Exponential { rate } => 1.0 / rate,
            JumpLaw::Normal { mean, .. } => *mean,
            JumpLaw::Discrete { atoms } => atoms.iter().map(|(v, p)| v * p).sum(),
        }
    }

    pub fn has_positive_mass(&self) -> bool {
        match self {
            JumpLaw::Fixed { size } => *size > 0.0,
            JumpLaw::Uniform { hi, .. } => *hi > 0.0,
            JumpLaw::Exponential { .. } => true,
            JumpLaw::Normal { mean, sd } => *sd > 0.0 || *mean > 0.0,
            JumpLaw::Discrete { atoms } => atoms.iter().any(|(v, p)| *v > 0.0 && *p > 0.0),
        }
    }

    /// Essential supremum of the jump size.
    pub fn sup(&self) -> f64 {
        match self {
            JumpLaw::Fixed { size } => *size,
            JumpLaw::Uniform { hi, .. } => *hi,
            JumpLaw::Exponential { .. } => f64::INFINITY,
            JumpLaw::Normal { mean, sd } => {
                if *sd > 0.0 {
                    f64::INFINITY
                } else {
                    *mean
                }
            }
            JumpLaw::Discrete { atoms } => atoms
                .iter()
                .filter(|a| a.1 > 0.0)
                .map(|a| a.0)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Largest λ for which `E e^{λJ}` is finite.
    pub fn mgf_bound(&self) -> f64 {
        match self {
            JumpLaw::Exponential { rate } => *rate,
            _ => f64::INFINITY,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            JumpLaw::Fixed { size } => *size,
            JumpLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            JumpLaw::Exponential { rate } => Exp::new(*rate).expect("validated rate").sample(rng),
            JumpLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            JumpLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in atoms {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                atoms.last().expect("nonempty").0
            }
        }
    }
}

/// Parametric families available in sampler mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerFamily {
    Gaussian { mean: f64, sd: f64 },
    /// `+Exp(rate_up)` with probability `p_up`, else `−Exp(rate_down)`.
    ExponentialMix { p_up: f64, rate_up: f64, rate_down: f64 },
    /// Location-scale Student t; no exponential moments.
    StudentT { df: f64, location: f64, scale: f64 },
    /// `drift + sd·N(0,1) + Σ_{i ≤ N} J_i` with `N ~ Poisson(jump_rate)`.
    JumpDiffusion { drift: f64, sd: f64, jump_rate: f64, jump: JumpLaw },
}

impl SamplerFamily {
    fn validate(&self) -> Result<(), LawError> {
        let bad = |m: &str| Err(LawError::InvalidParameter(m.to_string()));
        match self {
            SamplerFamily::Gaussian { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) {
                    return bad("gaussian needs finite mean and sd >= 0");
                }
            }
            SamplerFamily::ExponentialMix { p_up, rate_up, rate_down } => {
                if !(*p_up > 0.0 && *p_up <= 1.0) || !(*rate_up > 0.0 && rate_up.is_finite()) || !(*rate_down > 0.0 && rate_down.is_finite()) {
                    return bad("exponential_mix needs p_up in (0,1] and positive rates");
                }
            }
            SamplerFamily::StudentT { df, location, scale } => {
                if !(*df > 0.0 && location.is_finite() && *scale > 0.0 && scale.is_finite()) {
                    return bad("student_t needs df > 0, finite location and scale > 0");
                }
            }
            SamplerFamily::JumpDiffusion { drift, sd, jump_rate, jump } => {
                if !(drift.is_finite() && sd.is_finite() && *sd >= 0.0) {
                    return bad("jump_diffusion needs finite drift and sd >= 0");
                }
                if !(jump_rate.is_finite() && *jump_rate >= 0.0) {
                    return bad("jump rate must be finite and nonnegative");
                }
                jump.validate()?;
            }
        }
        Ok(())
    }

    fn up_mass_positive(&self) -> bool {
        match self {
            SamplerFamily::Gaussian { mean, sd } => *sd > 0.0 || *mean > 0.0,
            SamplerFamily::ExponentialMix { .. } | SamplerFamily::StudentT { .. } => true,
            SamplerFamily::JumpDiffusion { drift, sd, jump_rate, jump } => {
                *sd > 0.0 || *drift > 0.0 || (*jump_rate > 0.0 && jump.has_positive_mass())
            }
        }
    }

    /// Largest λ where the family's MGF is finite.
    fn mgf_bound(&self) -> f64 {
        match self {
            SamplerFamily::Gaussian { .. } => f64::INFINITY,
            SamplerFamily::ExponentialMix { rate_up, .. } => *rate_up,
            SamplerFamily::StudentT { .. } => 0.0,
            SamplerFamily::JumpDiffusion { jump_rate, jump, .. } => {
                if *jump_rate > 0.0 {
                    jump.mgf_bound()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn log_mgf(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        match self {
            SamplerFamily::Gaussian { mean, sd } => lambda * mean + 0.5 * lambda * lambda * sd * sd,
            SamplerFamily::ExponentialMix { p_up, rate_up, rate_down } => {
                if lambda >= *rate_up || lambda <= -rate_down {
                    return f64::INFINITY;
                }
                (p_up * rate_up / (rate_up - lambda) + (1.0 - p_up) * rate_down / (rate_down + lambda)).ln()
            }
            SamplerFamily::StudentT { .. } => f64::INFINITY,
            SamplerFamily::JumpDiffusion { drift, sd, jump_rate, jump } => {
                let jump_part = if *jump_rate > 0.0 { jump_rate * jump.log_mgf(lambda).exp_m1() } else { 0.0 };
                drift * lambda + 0.5 * sd * sd * lambda * lambda + jump_part
            }
        }
    }

    fn mean(&self) -> Option<f64> {
        match self {
            SamplerFamily::Gaussian { mean, .. } => Some(*mean),
            SamplerFamily::ExponentialMix { p_up, rate_up, rate_down } => Some(p_up / rate_up - (1.0 - p_up) / rate_down),
            SamplerFamily::StudentT { df, location, .. } => (*df > 1.0).then_some(*location),
            SamplerFamily::JumpDiffusion { drift, jump_rate, jump, .. } => Some(drift + jump_rate * jump.mean()),
        }
    }
}

/// Exact law on the lattice `step·ℤ` with finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeLaw {
    step: f64,
    /// Sorted, merged `(offset, probability)` pairs with positive probability.
    atoms: Vec<(i64, f64)>,
}

impl LatticeLaw {
    /// Builds a lattice law from `(value, probability)` pairs; values must be
    /// integer multiples of `step`.
    pub fn new(step: f64, atoms: &[(f64, f64)]) -> Result<Self, LawError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(LawError::InvalidParameter("lattice step must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(atoms.len());
        for &(v, p) in atoms {
            if !v.is_finite() || !(p >= 0.0) || !p.is_finite() {
                return Err(LawError::InvalidParameter(format!("bad atom ({v}, {p})")));
            }
            let k = (v / step).round();
            if (k * step - v).abs() > 1e-9 * step.max(v.abs()) {
                return Err(LawError::InvalidParameter(format!("atom {v} is not a multiple of step {step}")));
            }
            offsets.push((k as i64, p));
        }
        Self::from_offsets(step, offsets)
    }

    /// Builds a lattice law from integer offsets.
    pub fn from_offsets(step: f64, mut atoms: Vec<(i64, f64)>) -> Result<Self, LawError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(LawError::InvalidParameter("lattice step must be positive".into()));
        }
        if atoms.is_empty() {
            return Err(LawError::InvalidParameter("lattice law needs at least one atom".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(LawError::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        atoms.sort_by_key(|a| a.0);
        let mut merged: Vec<(i64, f64)> = Vec::with_capacity(atoms.len());
        for (k, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == k => last.1 += p,
                _ => merged.push((k, p)),
            }
        }
        merged.retain(|a| a.1 > 0.0);
        if !merged.iter().any(|a| a.0 > 0) {
            return Err(LawError::NoUpwardMass);
        }
        Ok(Self { step, atoms: merged })
    }

    /// The symmetric-step walk `±step` with `P(+step) = p`.
    pub fn simple(p: f64, step: f64) -> Result<Self, LawError> {
        Self::from_offsets(step, vec![(-1, 1.0 - p), (1, p)])
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn atoms(&self) -> &[(i64, f64)] {
        &self.atoms
    }

    /// Largest upward offset in lattice units.
    pub fn max_up(&self) -> i64 {
        self.atoms.last().map(|a| a.0).unwrap_or(0).max(0)
    }

    /// Largest downward offset in lattice units (as a nonnegative number).
    pub fn max_down(&self) -> i64 {
        (-self.atoms[0].0).max(0)
    }

    pub fn log_mgf(&self, lambda: f64) -> f64 {
        let h = self.step;
        log_sum_exp(self.atoms.iter().map(|&(k, p)| (lambda * k as f64 * h, p)))
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(k, p)| k as f64 * self.step * p).sum()
    }

    /// `Σ p_k` over offsets with `k > 0`.
    pub fn up_mass(&self) -> f64 {
        self.atoms.iter().filter(|a| a.0 > 0).map(|a| a.1).sum()
    }

    pub fn is_skip_free_up(&self) -> bool {
        self.max_up() == 1
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(k, p) in &self.atoms {
            acc += p;
            if u < acc {
                return k as f64 * self.step;
            }
        }
        self.atoms.last().expect("nonempty").0 as f64 * self.step
    }
}

/// A parametric law known through a sampler and its MGF.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerLaw {
    family: SamplerFamily,
    /// Upper end of the declared MGF finiteness domain `[0, λmax]`.
    mgf_max: f64,
    /// Increments are `min{ξ, cap}` when set.
    cap: Option<f64>,
}

impl SamplerLaw {
    pub fn new(family: SamplerFamily) -> Result<Self, LawError> {
        family.validate()?;
        if !family.up_mass_positive() {
            return Err(LawError::NoUpwardMass);
        }
        let mgf_max = family.mgf_bound();
        Ok(Self { family, mgf_max, cap: None })
    }

    /// Narrows the MGF domain to `[0, λmax]`; a wider declaration than the
    /// family supports is clamped to the family's bound.
    pub fn with_mgf_domain(mut self, lambda_max: f64) -> Result<Self, LawError> {
        if !(lambda_max >= 0.0) {
            return Err(LawError::InvalidParameter("mgf_domain upper end must be nonnegative".into()));
        }
        self.mgf_max = self.mgf_max.min(lambda_max);
        Ok(self)
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self, LawError> {
        Self::new(SamplerFamily::Gaussian { mean, sd })
    }

    pub fn family(&self) -> &SamplerFamily {
        &self.family
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn mgf_max(&self) -> f64 {
        self.mgf_max
    }

    fn log_mgf(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        if lambda < 0.0 || lambda > self.mgf_max {
            // Only the declared nonnegative domain is trusted; the cap makes
            // the MGF finite everywhere, but only closed forms are reported.
            if self.cap.is_none() || lambda < 0.0 {
                return f64::INFINITY;
            }
        }
        match self.cap {
            None => self.family.log_mgf(lambda),
            Some(k) => capped_log_mgf(&self.family, lambda, k),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = match &self.family {
            SamplerFamily::Gaussian { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            SamplerFamily::ExponentialMix { p_up, rate_up, rate_down } => {
                if rng.random::<f64>() < *p_up {
                    Exp::new(*rate_up).expect("validated").sample(rng)
                } else {
                    -Exp::new(*rate_down).expect("validated").sample(rng)
                }
            }
            SamplerFamily::StudentT { df, location, scale } => {
                location + scale * StudentTDist::new(*df).expect("validated").sample(rng)
            }
            SamplerFamily::JumpDiffusion { drift, sd, jump_rate, jump } => {
                let mut x = *drift;
                if *sd > 0.0 {
                    x += sd * rng.sample::<f64, _>(StandardNormal);
                }
                if *jump_rate > 0.0 {
                    let n = poisson_draw(rng, *jump_rate, 0);
                    for _ in 0..n {
                        x += jump.draw(rng);
                    }
                }
                x
            }
        };
        match self.cap {
            Some(k) => x.min(k),
            None => x,
        }
    }
}

/// `log E e^{λ min{ξ,k}}` where a closed form exists, else `+∞`.
fn capped_log_mgf(family: &SamplerFamily, lambda: f64, k: f64) -> f64 {
    match family {
        SamplerFamily::Gaussian { mean, sd } => {
            if *sd == 0.0 {
                return lambda * mean.min(k);
            }
            let n = NormalCdf::new(0.0, 1.0).expect("standard normal");
            let below = lambda * mean + 0.5 * lambda * lambda * sd * sd + n.cdf((k - mean - lambda * sd * sd) / sd).ln();
            let above = lambda * k + n.sf((k - mean) / sd).ln();
            log_add(below, above)
        }
        SamplerFamily::ExponentialMix { p_up, rate_up, rate_down } => {
            if k <= 0.0 {
                return f64::INFINITY;
            }
            let r = *rate_up;
            let up_below = if (lambda - r).abs() < 1e-14 {
                p_up * r * k
            } else {
                p_up * r * ((lambda - r) * k).exp_m1() / (lambda - r)
            };
            let up_atom = p_up * (lambda * k - r * k).exp();
            let down = (1.0 - p_up) * rate_down / (rate_down + lambda);
            (up_below + up_atom + down).ln()
        }
        _ => f64::INFINITY,
    }
}

/// One-step law of a random walk.
#[derive(Debug, Clone, PartialEq)]
pub enum IncrementLaw {
    Lattice(LatticeLaw),
    Sampler(SamplerLaw),
}

impl IncrementLaw {
    pub fn lattice(step: f64, atoms: &[(f64, f64)]) -> Result<Self, LawError> {
        LatticeLaw::new(step, atoms).map(IncrementLaw::Lattice)
    }

    pub fn simple(p: f64) -> Result<Self, LawError> {
        LatticeLaw::simple(p, 1.0).map(IncrementLaw::Lattice)
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self, LawError> {
        SamplerLaw::gaussian(mean, sd).map(IncrementLaw::Sampler)
    }

    pub fn as_lattice(&self) -> Option<&LatticeLaw> {
        match self {
            IncrementLaw::Lattice(l) => Some(l),
            IncrementLaw::Sampler(_) => None,
        }
    }

    /// `log φ(λ)`, `+∞` outside the finiteness domain.
    pub fn log_mgf(&self, lambda: f64) -> f64 {
        match self {
            IncrementLaw::Lattice(l) => l.log_mgf(lambda),
            IncrementLaw::Sampler(s) => s.log_mgf(lambda),
        }
    }

    /// `φ(λ) = E e^{λξ}`; `+∞` stands for an infinite MGF.
    pub fn mgf(&self, lambda: f64) -> f64 {
        self.log_mgf(lambda).exp()
    }

    /// Upper end of the set of nonnegative λ where φ is trusted finite.
    pub fn mgf_domain_max(&self) -> f64 {
        match self {
            IncrementLaw::Lattice(_) => f64::INFINITY,
            IncrementLaw::Sampler(s) => {
                if s.cap.is_some() && matches!(s.family, SamplerFamily::Gaussian { .. } | SamplerFamily::ExponentialMix { .. }) {
                    f64::INFINITY
                } else {
                    s.mgf_max
                }
            }
        }
    }

    /// `E ξ`, `None` when undefined or infinite.
    pub fn mean(&self) -> Option<f64> {
        match self {
            IncrementLaw::Lattice(l) => Some(l.mean()),
            IncrementLaw::Sampler(s) => {
                let m = s.family.mean()?;
                match s.cap {
                    None => Some(m),
                    Some(k) => capped_mean(&s.family, k),
                }
            }
        }
    }

    /// Whether `E[(ξ⁺)^p] < ∞`, decided analytically.
    pub fn positive_moment_finite(&self, p: f64) -> bool {
        match self {
            IncrementLaw::Lattice(_) => true,
            IncrementLaw::Sampler(s) => {
                if s.cap.is_some() {
                    return true;
                }
                match &s.family {
                    SamplerFamily::StudentT { df, .. } => p < *df,
                    // Positive exponential moments bound every polynomial moment.
                    fam => fam.mgf_bound() > 0.0 || matches!(fam, SamplerFamily::Gaussian { .. }),
                }
            }
        }
    }

    /// `E[(ξ⁺)^p]` for lattice laws.
    pub fn positive_moment(&self, p: f64) -> Option<f64> {
        self.as_lattice().map(|l| {
            l.atoms
                .iter()
                .filter(|a| a.0 > 0)
                .map(|&(k, pr)| pr * (k as f64 * l.step).powf(p))
                .sum()
        })
    }

    /// Largest root of `φ(λ) = e^q` on `[0, ∞)`, `None` when φ stays below
    /// `e^q` on its finiteness domain.
    pub fn mgf_root(&self, q: f64) -> Option<f64> {
        assert!(q >= 0.0, "discount must be nonnegative");
        if q == 0.0 && self.mean().is_some_and(|m| m >= 0.0) {
            // φ′(0) = E ξ ≥ 0 and φ is strictly convex
            return Some(0.0);
        }
        let dom = self.mgf_domain_max();
        let below = |l: f64| self.log_mgf(l) <= q;
        // {λ ≥ 0 : φ(λ) ≤ e^q} is an interval containing 0.
        let mut hi = 1.0f64.min(if dom > 0.0 { dom } else { 1.0 });
        if dom == 0.0 {
            return (q == 0.0).then_some(0.0);
        }
        while below(hi) {
            if hi >= dom {
                return None;
            }
            hi = (2.0 * hi).min(dom);
            if hi > 1e12 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if below(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        Some(lo)
    }

    /// A rate `a ≥ 0` with `e^{−q}φ(a) ≤ 1`, as large as the domain allows.
    ///
    /// `e^{−qn + aX_n}` is then a supermartingale, so a walk at depth `d`
    /// below its target returns with discounted weight at most `e^{−ad}`.
    pub fn decay_rate(&self, q: f64) -> f64 {
        if let Some(a) = self.mgf_root(q) {
            return a;
        }
        let dom = self.mgf_domain_max();
        if dom.is_finite() && self.log_mgf(dom) <= q {
            dom
        } else {
            0.0
        }
    }

    /// `min{ξ, k}`.
    pub fn truncate_jumps(&self, k: f64) -> Result<Self, LawError> {
        if !(k > 0.0) {
            return Err(LawError::DegenerateLaw(format!("min(xi, {k}) has no positive mass")));
        }
        match self {
            IncrementLaw::Lattice(l) => {
                let kk = (k / l.step).round();
                if (kk * l.step - k).abs() > 1e-9 * l.step.max(k) {
                    return Err(LawError::InvalidParameter(format!(
                        "lattice truncation level {k} must be a multiple of the step {}",
                        l.step
                    )));
                }
                let kk = kk as i64;
                let atoms = l.atoms.iter().map(|&(o, p)| (o.min(kk), p)).collect();
                LatticeLaw::from_offsets(l.step, atoms).map(IncrementLaw::Lattice)
            }
            IncrementLaw::Sampler(s) => {
                let cap = Some(s.cap.map_or(k, |c| c.min(k)));
                Ok(IncrementLaw::Sampler(SamplerLaw { cap, ..s.clone() }))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            IncrementLaw::Lattice(l) => l.draw(rng),
            IncrementLaw::Sampler(s) => s.sample(rng),
        }
    }

    /// Parameters of the jumpless step when increments are `drift` plus
    /// compound Poisson jumps with no Gaussian part; used to skip runs of
    /// jumpless steps exactly.
    pub(crate) fn pure_jump_parts(&self) -> Option<(f64, f64, &JumpLaw)> {
        match self {
            IncrementLaw::Sampler(SamplerLaw {
                family: SamplerFamily::JumpDiffusion { drift, sd, jump_rate, jump },
                ..
            }) if *sd == 0.0 && *jump_rate > 0.0 => Some((*drift, *jump_rate, jump)),
            _ => None,
        }
    }

    /// Typical step size, used to scale brackets and expansion ceilings.
    pub fn scale(&self) -> f64 {
        match self {
            IncrementLaw::Lattice(l) => l.step,
            IncrementLaw::Sampler(s) => match &s.family {
                SamplerFamily::Gaussian { mean, sd } => sd.max(mean.abs()).max(1e-300),
                SamplerFamily::ExponentialMix { rate_up, rate_down, .. } => (1.0 / rate_up).max(1.0 / rate_down),
                SamplerFamily::StudentT { scale, .. } => *scale,
                SamplerFamily::JumpDiffusion { drift, sd, jump_rate, jump } => {
                    let j = (jump.mean().abs() + jump.sup().min(1e6).abs().min(1e6)) * jump_rate.min(1.0);
                    sd.max(drift.abs()).max(j).max(1e-300)
                }
            },
        }
    }
}

fn capped_mean(family: &SamplerFamily, k: f64) -> Option<f64> {
    match family {
        SamplerFamily::Gaussian { mean, sd } => {
            if *sd == 0.0 {
                return Some(mean.min(k));
            }
            // E min(ξ,k) = k − E (k − ξ)⁺
            let n = NormalCdf::new(0.0, 1.0).expect("standard normal");
            let z = (k - mean) / sd;
            let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            Some(k - ((k - mean) * n.cdf(z) + sd * pdf))
        }
        SamplerFamily::ExponentialMix { p_up, rate_up, rate_down } if k > 0.0 => {
            let up = p_up * (1.0 - (-rate_up * k).exp()) / rate_up;
            Some(up - (1.0 - p_up) / rate_down)
        }
        _ => None,
    }
}

/// Poisson draw by inversion, conditioned on being at least `min`.
pub(crate) fn poisson_draw<R: Rng + ?Sized>(rng: &mut R, mean: f64, min: u64) -> u64 {
    if mean > 30.0 && min == 0 {
        return rand_distr::Poisson::new(mean).expect("positive mean").sample(rng) as u64;
    }
    let mut k = 0u64;
    let mut pk = (-mean).exp();
    let mut cdf = pk;
    let mut below = 0.0;
    while k < min {
        below = cdf;
        k += 1;
        pk *= mean / k as f64;
        cdf += pk;
    }
    let tail = match min {
        0 => 1.0,
        1 => -(-mean).exp_m1(),
        _ => 1.0 - below,
    };
    let u = below + rng.random::<f64>() * tail;
    while u > cdf && pk > 0.0 && k < 10_000 {
        k += 1;
        pk *= mean / k as f64;
        cdf += pk;
    }
    k
}

/// `log Σ p_i e^{a_i}` computed stably.
pub(crate) fn log_sum_exp(terms: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let m = terms
        .clone()
        .filter(|t| t.1 > 0.0)
        .map(|t| t.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = terms.filter(|t| t.1 > 0.0).map(|(a, p)| p * (a - m).exp()).sum();
    m + s.ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------------------
// JSON form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LawSpec {
    Lattice {
        step: f64,
        atoms: Vec<(f64, f64)>,
    },
    Sampler {
        #[serde(flatten)]
        family: SamplerFamily,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mgf_domain: Option<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate_at: Option<f64>,
    },
}

impl TryFrom<&LawSpec> for IncrementLaw {
    type Error = LawError;

    fn try_from(spec: &LawSpec) -> Result<Self, LawError> {
        match spec {
            LawSpec::Lattice { step, atoms } => IncrementLaw::lattice(*step, atoms),
            LawSpec::Sampler { family, mgf_domain, truncate_at } => {
                let mut s = SamplerLaw::new(family.clone())?;
                if let Some([lo, hi]) = mgf_domain {
                    if *lo != 0.0 {
                        return Err(LawError::InvalidParameter("mgf_domain must start at 0".into()));
                    }
                    s = s.with_mgf_domain(*hi)?;
                }
                let law = IncrementLaw::Sampler(s);
                match truncate_at {
                    Some(k) => law.truncate_jumps(*k),
                    None => Ok(law),
                }
            }
        }
    }
}

impl From<&IncrementLaw> for LawSpec {
    fn from(law: &IncrementLaw) -> Self {
        match law {
            IncrementLaw::Lattice(l) => LawSpec::Lattice {
                step: l.step,
                atoms: l.atoms.iter().map(|&(k, p)| (k as f64 * l.step, p)).collect(),
            },
            IncrementLaw::Sampler(s) => LawSpec::Sampler {
                family: s.family.clone(),
                mgf_domain: s.mgf_max.is_finite().then_some([0.0, s.mgf_max]),
                truncate_at: s.cap,
            },
        }
    }
}

impl Serialize for IncrementLaw {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        LawSpec::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for IncrementLaw {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let spec = LawSpec::deserialize(d)?;
        IncrementLaw::try_from(&spec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mgf_examples() {
        let w = IncrementLaw::simple(0.25).unwrap();
        assert!((w.mgf(1.0) - 0.955480037993343).abs() < 1e-12);
        assert_eq!(w.mgf(0.0), 1.0);
        let s = IncrementLaw::simple(0.5).unwrap();
        assert!((s.mgf(1.0) - 1.5430806348152437).abs() < 1e-12);
    }

    #[test]
    fn mgf_root_examples() {
        let s = IncrementLaw::simple(0.5).unwrap();
        let a = s.mgf_root(0.4337808304830271).unwrap();
        assert!((a - 1.0).abs() < 1e-10);
        // E ξ ≥ 0, q = 0: the largest root is 0
        assert_eq!(s.mgf_root(0.0), Some(0.0));
        let w = IncrementLaw::simple(0.25).unwrap();
        assert!((w.mgf_root(0.0).unwrap() - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn compound_poisson_root() {
        let fam = SamplerFamily::JumpDiffusion { drift: -1.0, sd: 0.0, jump_rate: 0.5, jump: JumpLaw::Fixed { size: 1.0 } };
        let law = IncrementLaw::Sampler(SamplerLaw::new(fam).unwrap());
        let a = law.mgf_root(0.0).unwrap();
        assert!((a - 1.2564312086261695).abs() < 1e-10);
    }

    #[test]
    fn truncate_examples() {
        let l = IncrementLaw::lattice(1.0, &[(-1.0, 0.75), (1.0, 0.15), (3.0, 0.10)]).unwrap();
        let t = l.truncate_jumps(1.0).unwrap();
        let expected = IncrementLaw::lattice(1.0, &[(-1.0, 0.75), (1.0, 0.25)]).unwrap();
        assert_eq!(t.as_lattice().unwrap().atoms().len(), 2);
        assert!((t.as_lattice().unwrap().atoms()[1].1 - 0.25).abs() < 1e-15);
        assert_eq!(t.as_lattice().unwrap().atoms()[0], expected.as_lattice().unwrap().atoms()[0]);
        assert_eq!(l.truncate_jumps(3.0).unwrap(), l);
        let d = IncrementLaw::lattice(1.0, &[(-1.0, 0.9), (2.0, 0.1)]).unwrap();
        assert!(matches!(d.truncate_jumps(0.0), Err(LawError::DegenerateLaw(_))));
    }

    #[test]
    fn capped_gaussian_mgf_matches_simulation() {
        let law = IncrementLaw::gaussian(-0.2, 1.0).unwrap().truncate_jumps(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mc: f64 = (0..n).map(|_| (0.8 * law.sample(&mut rng)).exp()).sum::<f64>() / n as f64;
        assert!((mc - law.mgf(0.8)).abs() < 0.01, "{mc} vs {}", law.mgf(0.8));
        let m: f64 = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - law.mean().unwrap()).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_lattices() {
        assert!(IncrementLaw::lattice(1.0, &[(-1.0, 0.5), (1.0, 0.4)]).is_err());
        assert_eq!(IncrementLaw::lattice(1.0, &[(-1.0, 1.0)]), Err(LawError::NoUpwardMass));
        assert!(IncrementLaw::lattice(1.0, &[(-1.0, 0.5), (0.5, 0.5)]).is_err());
    }

    #[test]
    fn json_forms() {
        let l: IncrementLaw = serde_json::from_str(r#"{"mode":"lattice","step":1.0,"atoms":[[-1,0.75],[1,0.25]]}"#).unwrap();
        assert!((l.mean().unwrap() + 0.5).abs() < 1e-15);
        let s: IncrementLaw =
            serde_json::from_str(r#"{"mode":"sampler","family":"gaussian","mean":-0.5,"sd":1.0,"mgf_domain":[0,50]}"#).unwrap();
        assert_eq!(s.mgf_domain_max(), 50.0);
        let back = serde_json::to_string(&s).unwrap();
        let again: IncrementLaw = serde_json::from_str(&back).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn poisson_conditional_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = 0.3;
        let s: u64 = (0..n).map(|_| poisson_draw(&mut rng, mean, 1)).sum();
        let expected = mean / (1.0 - (-mean).exp());
        assert!((s as f64 / n as f64 - expected).abs() < 0.01);
        let s0: u64 = (0..n).map(|_| poisson_draw(&mut rng, mean, 0)).sum();
        assert!((s0 as f64 / n as f64 - mean).abs() < 0.01);
    }
}
