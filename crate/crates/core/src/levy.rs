//! Jump-diffusions observed on dyadic time grids.
//!
//! A [`LevyModel`] is `X_t = drift·t + σB_t + Σ_{i ≤ N_t} J_i` with a Poisson
//! process `N` of finite rate. Restricting stopping times to `{n·2^−ℓ}`
//! gives a random walk whose threshold `u^(ℓ)` increases to the
//! continuous-time threshold as `ℓ → ∞`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LevyError;
use crate::reward::RewardFunction;
use crate::solver::{self, Dynamics, Regime, SolveOptions, Solved};
use crate::stats::Estimate;
use crate::stochastic::{ContinuousModel, IncrementLaw, JumpLaw, SamplerFamily, SamplerLaw};

/// Multiple of the combined level tolerances a decrease may reach before it
/// counts as a violation.
pub const MONOTONICITY_SLACK: f64 = 4.0;

/// Seeds of successive levels are spread by this odd constant.
const LEVEL_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jumps {
    pub rate: f64,
    pub law: JumpLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    drift: f64,
    sigma: f64,
    #[serde(default)]
    jumps: Option<Jumps>,
}

/// `drift·t + σB_t` plus an optional compound Poisson part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct LevyModel {
    drift: f64,
    sigma: f64,
    jumps: Option<Jumps>,
}

impl TryFrom<RawModel> for LevyModel {
    type Error = LevyError;

    fn try_from(r: RawModel) -> Result<Self, LevyError> {
        LevyModel::new(r.drift, r.sigma, r.jumps)
    }
}

impl From<LevyModel> for RawModel {
    fn from(m: LevyModel) -> Self {
        RawModel { drift: m.drift, sigma: m.sigma, jumps: m.jumps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Regular,
    Irregular,
}

impl LevyModel {
    pub fn new(drift: f64, sigma: f64, jumps: Option<Jumps>) -> Result<Self, LevyError> {
        let bad = |m: String| Err(LevyError::InvalidModel(m));
        if !drift.is_finite() {
            return bad(format!("drift {drift} must be finite"));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return bad(format!("sigma {sigma} must be finite and nonnegative"));
        }
        let jumps = match jumps {
            Some(j) if j.rate == 0.0 => None,
            Some(j) => {
                if j.rate.is_infinite() {
                    return bad("infinite jump activity is not supported; the rate must be finite".into());
                }
                if !(j.rate > 0.0) {
                    return bad(format!("jump rate {} must be positive", j.rate));
                }
                j.law.validate()?;
                Some(j)
            }
            None => None,
        };
        let up = sigma > 0.0 || drift > 0.0 || jumps.as_ref().is_some_and(|j| j.law.has_positive_mass());
        if !up {
            return bad("the model must satisfy P(X_1 > 0) > 0".into());
        }
        Ok(Self { drift, sigma, jumps })
    }

    pub fn brownian(drift: f64, sigma: f64) -> Result<Self, LevyError> {
        Self::new(drift, sigma, None)
    }

    /// `drift·t + Σ_{i ≤ N_t} J_i` with `N` of the given rate.
    pub fn compound_poisson(drift: f64, rate: f64, law: JumpLaw) -> Result<Self, LevyError> {
        Self::new(drift, 0.0, Some(Jumps { rate, law }))
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jumps(&self) -> Option<&Jumps> {
        self.jumps.as_ref()
    }

    /// Lévy exponent `ψ(λ) = log E e^{λX_1}`.
    pub fn exponent(&self, lambda: f64) -> f64 {
        let mut psi = self.drift * lambda + 0.5 * self.sigma * self.sigma * lambda * lambda;
        if let Some(j) = &self.jumps {
            let m = j.law.log_mgf(lambda);
            psi += if m == f64::INFINITY { f64::INFINITY } else { j.rate * m.exp_m1() };
        }
        psi
    }

    /// Exact law of `X_dt`.
    pub fn step_law_dt(&self, dt: f64) -> Result<IncrementLaw, LevyError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LevyError::InvalidModel(format!("time step {dt} must be positive")));
        }
        let sd = self.sigma * dt.sqrt();
        let family = match &self.jumps {
            None => SamplerFamily::Gaussian { mean: self.drift * dt, sd },
            Some(j) => SamplerFamily::JumpDiffusion { drift: self.drift * dt, sd, jump_rate: j.rate * dt, jump: j.law.clone() },
        };
        Ok(IncrementLaw::Sampler(SamplerLaw::new(family)?))
    }

    /// Law of `X_{2^−ℓ}`.
    pub fn step_law(&self, level: u32) -> Result<IncrementLaw, LevyError> {
        self.step_law_dt(dyadic_step(level))
    }

    /// 0 is regular for `(0, ∞)` iff there is a Gaussian part or the drift
    /// is positive.
    pub fn regularity_of_zero(&self) -> Regularity {
        if self.sigma > 0.0 || self.drift > 0.0 {
            Regularity::Regular
        } else {
            Regularity::Irregular
        }
    }

    /// Event-driven form for irregular compound Poisson models.
    pub fn continuous_model(&self) -> Option<ContinuousModel> {
        match (&self.jumps, self.regularity_of_zero()) {
            (Some(j), Regularity::Irregular) => {
                Some(ContinuousModel { drift: self.drift, rate: j.rate, jump: j.law.clone(), strict: true })
            }
            _ => None,
        }
    }
}

pub fn dyadic_step(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

/// One row of a [`ThresholdSequence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelThreshold {
    pub level: u32,
    /// `u^(ℓ)`; `inf` when stopping never pays, `-inf` when it always does,
    /// `null` when the level was inconclusive.
    #[serde(with = "crate::ext_float")]
    pub u: f64,
    pub tolerance: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSequence {
    pub levels: Vec<LevelThreshold>,
    /// Geometric-gap extrapolation of the last three finite levels.
    #[serde(with = "crate::ext_float")]
    pub extrapolated: f64,
    /// `u^(ℓ_max)` as computed.
    #[serde(with = "crate::ext_float")]
    pub last: f64,
}

impl ThresholdSequence {
    /// CSV with columns `level,u,tol`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,u,tol")?;
        for l in &self.levels {
            writeln!(w, "{},{},{}", l.level, l.u, l.tolerance)?;
        }
        Ok(())
    }
}

fn level_options(opts: &SolveOptions, level: u32) -> SolveOptions {
    SolveOptions { seed: opts.seed.wrapping_add(LEVEL_SEED_STRIDE.wrapping_mul(level as u64 + 1)), ..opts.clone() }
}

/// Solves the walk observed every `2^−ℓ` time units, discounting by
/// `e^{−q·2^−ℓ}` per step.
pub fn solve_level(model: &LevyModel, f: &RewardFunction, q: f64, level: u32, opts: &SolveOptions) -> Result<Solved, LevyError> {
    let law = model.step_law(level)?;
    Ok(solver::solve(&law, f, q * dyadic_step(level), &level_options(opts, level))?)
}

/// `u^(ℓ)` for `ℓ = 0..=max_level`, levels solved in parallel.
///
/// Fails with `MonotonicityViolated` when some `u^(ℓ+1)` falls below `u^(ℓ)`
/// by more than [`MONOTONICITY_SLACK`] combined tolerances.
pub fn threshold_sequence(
    model: &LevyModel,
    f: &RewardFunction,
    q: f64,
    max_level: u32,
    opts: &SolveOptions,
) -> Result<ThresholdSequence, LevyError> {
    if max_level < 2 {
        return Err(LevyError::InvalidModel(format!("need at least three levels, got max level {max_level}")));
    }
    let levels: Vec<LevelThreshold> = (0..=max_level)
        .into_par_iter()
        .map(|level| {
            let s = solve_level(model, f, q, level, opts)?.solution;
            let u = match &s.regime {
                Regime::Finite { u } => *u,
                Regime::NeverStop { .. } => f64::INFINITY,
                Regime::StopEverywhere => f64::NEG_INFINITY,
                Regime::Inconclusive { .. } => f64::NAN,
            };
            Ok(LevelThreshold { level, u, tolerance: s.tolerance, regime: s.regime })
        })
        .collect::<Result<_, LevyError>>()?;
    check_monotone(&levels)?;
    let last = levels.last().expect("at least three levels").u;
    let extrapolated = if levels.iter().all(|l| l.u == f64::INFINITY) {
        f64::INFINITY
    } else {
        extrapolate(&levels)
    };
    Ok(ThresholdSequence { levels, extrapolated, last })
}

fn check_monotone(levels: &[LevelThreshold]) -> Result<(), LevyError> {
    let known: Vec<&LevelThreshold> = levels.iter().filter(|l| !l.u.is_nan()).collect();
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slack = MONOTONICITY_SLACK * a.tolerance.hypot(b.tolerance);
        let violated = if a.u.is_finite() && b.u.is_finite() { b.u < a.u - slack } else { b.u < a.u };
        if violated {
            return Err(LevyError::MonotonicityViolated { level: a.level, next: b.level, from: a.u, to: b.u });
        }
    }
    Ok(())
}

/// `u_3 + d_2·r/(1 − r)` with gaps `d_1, d_2` of the last three finite levels
/// and `r = d_2/d_1`; the last finite level when the gaps are not geometric.
fn extrapolate(levels: &[LevelThreshold]) -> f64 {
    let finite: Vec<f64> = levels.iter().map(|l| l.u).filter(|u| u.is_finite()).collect();
    match finite.as_slice() {
        [] => levels.last().map_or(f64::NAN, |l| l.u),
        [.., a, b, c] => {
            let (d1, d2) = (b - a, c - b);
            let r = d2 / d1;
            if d1 > 0.0 && d2 > 0.0 && r < 1.0 {
                c + d2 * r / (1.0 - r)
            } else {
                *c
            }
        }
        [.., c] => *c,
    }
}

/// Value of stopping at the first dyadic time `n·2^−ℓ` with `X ≥ threshold`.
pub fn value_at_level(
    model: &LevyModel,
    f: &RewardFunction,
    q: f64,
    level: u32,
    threshold: f64,
    x: f64,
    opts: &SolveOptions,
) -> Result<Estimate, LevyError> {
    let law = model.step_law(level)?;
    Ok(solver::value_with_threshold(&law, f, q * dyadic_step(level), threshold, x, &level_options(opts, level))?)
}

/// Continuous-time solve for irregular compound Poisson models, where paths
/// only move up at jump times and can be simulated event by event.
pub fn continuous_solve(model: &LevyModel, f: &RewardFunction, q: f64, opts: &SolveOptions) -> Result<Solved, LevyError> {
    let cm = model.continuous_model().ok_or_else(|| {
        LevyError::InvalidModel("continuous-time solving needs sigma = 0, drift <= 0 and jumps".into())
    })?;
    let law = cm.time_one_law()?;
    Ok(solver::solve_dynamics(Dynamics::Continuous { model: cm, law }, f, q, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_model() -> LevyModel {
        LevyModel::compound_poisson(-1.0, 0.5, JumpLaw::Fixed { size: 1.0 }).unwrap()
    }

    #[test]
    fn step_laws() {
        let bm = LevyModel::brownian(0.5, 1.0).unwrap();
        match bm.step_law(4).unwrap() {
            IncrementLaw::Sampler(s) => assert_eq!(s.family(), &SamplerFamily::Gaussian { mean: 0.5 / 16.0, sd: 0.25 }),
            _ => panic!("expected sampler"),
        }
        let m = poisson_model();
        let law = m.step_law(0).unwrap();
        for l in [0.3, 1.2, 2.5] {
            let want = 0.5 * (f64::exp(l) - 1.0) - l;
            assert!((law.log_mgf(l) - want).abs() < 1e-12);
            assert!((m.exponent(l) - want).abs() < 1e-12);
        }
        let l6 = bm.step_law(6).unwrap();
        assert!((l6.log_mgf(0.7) - (0.5 * 0.7 + 0.245) / 64.0).abs() < 1e-14);
    }

    #[test]
    fn regularity() {
        assert_eq!(LevyModel::brownian(-3.0, 1.0).unwrap().regularity_of_zero(), Regularity::Regular);
        assert_eq!(poisson_model().regularity_of_zero(), Regularity::Irregular);
        let up = LevyModel::compound_poisson(1.0, 2.0, JumpLaw::Fixed { size: -1.0 }).unwrap();
        assert_eq!(up.regularity_of_zero(), Regularity::Regular);
    }

    #[test]
    fn invalid_models() {
        assert!(LevyModel::brownian(-1.0, 0.0).is_err());
        assert!(LevyModel::compound_poisson(-1.0, f64::INFINITY, JumpLaw::Fixed { size: 1.0 }).is_err());
        assert!(LevyModel::compound_poisson(0.0, 1.0, JumpLaw::Fixed { size: -1.0 }).is_err());
        let bad = r#"{"drift": -1, "sigma": 0, "jumps": {"rate": 1, "law": {"dist": "fixed", "size": -2}}}"#;
        assert!(serde_json::from_str::<LevyModel>(bad).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = poisson_model();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<LevyModel>(&s).unwrap(), m);
        let bm: LevyModel = serde_json::from_str(r#"{"drift": 0, "sigma": 1}"#).unwrap();
        assert!(bm.jumps().is_none());
    }

    #[test]
    fn extrapolation_and_monotonicity() {
        let row = |level, u, tolerance| LevelThreshold { level, u, tolerance, regime: Regime::Finite { u } };
        let levels = vec![row(0, -1.0, 0.0), row(1, -0.5, 0.0), row(2, -0.25, 0.0)];
        assert!((extrapolate(&levels) - 0.0).abs() < 1e-15);
        assert!(check_monotone(&levels).is_ok());
        let down = vec![row(0, -0.2, 0.01), row(1, -0.3, 0.01)];
        assert!(matches!(check_monotone(&down), Err(LevyError::MonotonicityViolated { level: 0, next: 1, .. })));
        let noisy = vec![row(0, -0.2, 0.01), row(1, -0.22, 0.01)];
        assert!(check_monotone(&noisy).is_ok());
    }
}
