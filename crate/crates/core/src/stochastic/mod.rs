//! Increment laws, MGFs and first-passage functionals.

pub mod ladder;
pub mod law;
pub mod mc;

use serde::{Deserialize, Serialize};

use crate::error::PassageError;
use crate::reward::RewardFunction;
use crate::stats::Estimate;

pub use ladder::LadderTable;
pub use law::{IncrementLaw, JumpLaw, LatticeLaw, LawSpec, SamplerFamily, SamplerLaw};
pub use mc::{ContinuousModel, FirstPassageSample, PassageSet, SimOptions};

/// Which first passage to a level is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageKind {
    /// `T_y = inf{n ≥ 1 : X_n ≥ y}`.
    StrictTime,
    /// `τ_y = inf{n ≥ 0 : X_n ≥ y}`.
    Entry,
}

/// `E_start[e^{−q·passage} g(X_passage); passage < ∞]` solved exactly on the
/// lattice.
pub fn first_passage_exact(
    law: &IncrementLaw,
    f: &RewardFunction,
    q: f64,
    level: f64,
    start: f64,
    kind: PassageKind,
) -> Result<f64, PassageError> {
    let lat = law.as_lattice().ok_or(PassageError::NotLattice)?;
    if kind == PassageKind::Entry && start >= level {
        return Ok(f.eval(start));
    }
    let table = LadderTable::new(lat, q)?;
    Ok(match kind {
        PassageKind::Entry => table.threshold_value(f, level, start),
        PassageKind::StrictTime => table.strict_time_value(f, level, start),
    })
}

/// Monte Carlo estimate of the functional of [`first_passage_exact`].
#[allow(clippy::too_many_arguments)]
pub fn first_passage_mc(
    law: &IncrementLaw,
    f: &RewardFunction,
    q: f64,
    level: f64,
    start: f64,
    kind: PassageKind,
    budget: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<Estimate, PassageError> {
    if budget == 0 {
        return Err(PassageError::PreconditionViolated("budget must be at least 1".into()));
    }
    if kind == PassageKind::Entry && start >= level {
        return Ok(Estimate::exact(f.eval(start)));
    }
    let set = PassageSet::simulate(law, q, &[level - start], budget, seed, 0x5041_5353, opts)?;
    let e = set.estimate(&[1.0], |_, s| f.eval(start + s));
    set.check_truncation(&e)?;
    Ok(e)
}

/// `E(M)` for `M = sup{0, ξ₁, ξ₁+ξ₂, …}`.
///
/// Exact for lattice laws; sampler laws use the ladder identity
/// `M = (X_{T₀} + M′)1{T₀<∞}`, i.e. `E M = E[H; T₀<∞] / P(T₀ = ∞)`.
pub fn expected_maximum(law: &IncrementLaw, budget: usize, seed: u64) -> Result<Estimate, PassageError> {
    let mean = match law.mean() {
        Some(m) => m,
        None => return Ok(Estimate::exact(f64::INFINITY)),
    };
    if mean >= 0.0 {
        return Ok(Estimate::exact(f64::INFINITY));
    }
    if let Some(lat) = law.as_lattice() {
        return Ok(Estimate::exact(LadderTable::new(lat, 0.0)?.expected_maximum()));
    }
    if law.decay_rate(0.0) == 0.0 {
        return Err(PassageError::PreconditionViolated(
            "heavy-tailed sampler: no exponential bound to truncate escaping paths".into(),
        ));
    }
    let set = PassageSet::simulate(law, 0.0, &[0.0], budget, seed, 0x4D41_5849, SimOptions::default())?;
    let n = set.paths();
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let s = set.sample(i, 0);
        match s.time {
            Some(_) => {
                a.push(s.discount_weight * s.position);
                b.push(s.discount_weight);
            }
            None => {
                a.push(0.0);
                b.push(0.0);
            }
        }
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    if mb >= 1.0 {
        return Ok(Estimate::exact(f64::INFINITY));
    }
    let est = ma / (1.0 - mb);
    // delta method for a/(1−b)
    let (ga, gb) = (1.0 / (1.0 - mb), ma / ((1.0 - mb) * (1.0 - mb)));
    let var = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let r = ga * (x - ma) + gb * (y - mb);
            r * r
        })
        .sum::<f64>()
        / (nf - 1.0).max(1.0);
    Ok(Estimate { mean: est, se: (var / nf).sqrt(), n, reliable: n > 1, truncation_bound: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_maximum_examples() {
        let e = expected_maximum(&IncrementLaw::simple(0.25).unwrap(), 1, 0).unwrap();
        assert!((e.mean - 0.5).abs() < 1e-9);
        let e = expected_maximum(&IncrementLaw::simple(0.5).unwrap(), 1, 0).unwrap();
        assert_eq!(e.mean, f64::INFINITY);
        let e = expected_maximum(&IncrementLaw::simple(0.01).unwrap(), 1, 0).unwrap();
        assert!((e.mean - 0.01020408163265306).abs() < 1e-9);
    }

    #[test]
    fn exact_passage_examples() {
        let law = IncrementLaw::simple(0.25).unwrap();
        let f = RewardFunction::power_plus(1.0).unwrap();
        for x in [1.0, 3.0] {
            let v = first_passage_exact(&law, &f, 0.0, x, x, PassageKind::StrictTime).unwrap();
            assert!((v - (0.5 * x + 0.25)).abs() < 1e-10);
        }
        assert_eq!(first_passage_exact(&law, &f, 0.0, 1.0, 2.5, PassageKind::Entry).unwrap(), 2.5);
        let ind = RewardFunction::indicator(0.0).unwrap();
        let v = first_passage_exact(&law, &ind, 0.1, 0.0, 0.0, PassageKind::StrictTime).unwrap();
        assert!(v < (-0.1f64).exp());
    }

    #[test]
    fn mc_matches_exact() {
        let law = IncrementLaw::simple(0.25).unwrap();
        let f = RewardFunction::power_plus(1.0).unwrap();
        let e = first_passage_mc(&law, &f, 0.0, 1.0, 1.0, PassageKind::StrictTime, 100_000, 17, SimOptions::default()).unwrap();
        assert!((e.mean - 0.75).abs() < 3.0 * e.se, "{e:?}");
    }

    #[test]
    fn mc_budget_edge_cases() {
        let law = IncrementLaw::gaussian(-0.5, 1.0).unwrap();
        let ind = RewardFunction::indicator(0.0).unwrap();
        assert!(first_passage_mc(&law, &ind, 0.0, 0.0, 0.0, PassageKind::StrictTime, 0, 1, SimOptions::default()).is_err());
        let one = first_passage_mc(&law, &ind, 0.0, 0.0, 0.0, PassageKind::StrictTime, 1, 1, SimOptions::default()).unwrap();
        assert!(!one.reliable);
        let e = first_passage_mc(&law, &ind, 0.0, 0.0, 0.0, PassageKind::StrictTime, 20_000, 1, SimOptions::default()).unwrap();
        assert!(e.mean < 1.0);
    }
}
