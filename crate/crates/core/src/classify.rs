//! Finiteness of the optimal threshold from MGF and moment conditions.

use serde::{Deserialize, Serialize};

use crate::reward::{RewardFunction, RewardKind, SlopeGap};
use crate::stochastic::IncrementLaw;

/// Smallest δ tried by [`sufficient_finite`] is `2^-DELTA_STEPS`.
pub const DELTA_STEPS: i32 = 20;

/// Probe range for slope-gap checks on rewards without an analytic answer.
pub const SLOPE_PROBE_HI: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Finite,
    Infinite,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    LightTail,
    SufficientFinite,
    SufficientInfinite,
    NovikovShiryaev,
    /// `q = 0`, `β = 0`, `E ξ ≥ 0` and `h′ > 0`: the walk's supremum is
    /// infinite, every ladder height is a strict gain, so `ρ > 1` everywhere.
    Recurrence,
    None,
}

/// Evidence behind a verdict; every number can be recomputed from the law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub route: Route,
    pub delta: Option<f64>,
    pub mgf_at_beta: Option<f64>,
    pub mgf_at_beta_plus_delta: Option<f64>,
    pub exp_q: f64,
    pub slope_gap: SlopeGap,
    pub light_tail: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitenessVerdict {
    pub verdict: Verdict,
    pub witness: Witness,
    pub beta_used: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    True,
    False,
    NotApplicable(String),
}

/// First `δ ∈ {1, 1/2, …, 2^-20}` with `φ(β+δ) ≤ e^q`.
pub fn sufficient_finite(law: &IncrementLaw, f: &RewardFunction, q: f64) -> Option<f64> {
    let beta = f.asymptotic_slope();
    (0..=DELTA_STEPS)
        .map(|i| 2f64.powi(-i))
        .find(|d| law.log_mgf(beta + d) <= q)
}

/// `φ(β) ≥ e^q` under the provisos `h′(x−) > β` for all `x` and
/// `max{q, β} > 0`.
pub fn sufficient_infinite(law: &IncrementLaw, f: &RewardFunction, q: f64) -> Applicability {
    let beta = f.asymptotic_slope();
    if !f.strict_slope_gap(probe_hi(f)).holds() {
        return Applicability::NotApplicable("h'(x-) > beta fails somewhere".into());
    }
    if q.max(beta) <= 0.0 {
        return Applicability::NotApplicable("max{q, beta} = 0".into());
    }
    if law.log_mgf(beta) >= q {
        Applicability::True
    } else {
        Applicability::False
    }
}

/// Moment condition for `g = (x⁺)^ν`: finite threshold when `q > 0` and
/// `E[(X⁺)^ν] < ∞`, or `q = 0`, `E X < 0` and `E[(X⁺)^{ν+1}] < ∞`.
pub fn novikov_shiryaev(law: &IncrementLaw, f: &RewardFunction, q: f64) -> Applicability {
    let nu = match f.kind() {
        RewardKind::PowerPlus { nu } => *nu,
        _ => return Applicability::NotApplicable("reward is not (x+)^nu".into()),
    };
    if q > 0.0 && law.positive_moment_finite(nu) {
        return Applicability::True;
    }
    if q == 0.0 && law.mean().is_some_and(|m| m < 0.0) && law.positive_moment_finite(nu + 1.0) {
        return Applicability::True;
    }
    Applicability::NotApplicable("neither moment branch holds".into())
}

fn probe_hi(f: &RewardFunction) -> f64 {
    let x0 = f.x0();
    if x0.is_finite() {
        x0 + SLOPE_PROBE_HI
    } else {
        SLOPE_PROBE_HI
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Decides `u < ∞` versus `u = ∞`.
///
/// With a light tail beyond `β` and both provisos, `u < ∞` iff
/// `φ(β) < e^q`. Otherwise the sufficient conditions and the moment test are
/// tried in turn. An `Infinite` answer resting on a probe-grid slope check
/// only is reported as `Inconclusive`.
pub fn light_tail_characterization(law: &IncrementLaw, f: &RewardFunction, q: f64) -> FinitenessVerdict {
    let beta = f.asymptotic_slope();
    let gap = f.strict_slope_gap(probe_hi(f));
    let light = law.mgf_domain_max() > beta;
    let log_phi_beta = law.log_mgf(beta);
    let mut witness = Witness {
        route: Route::None,
        delta: None,
        mgf_at_beta: finite_or_none(log_phi_beta.exp()),
        mgf_at_beta_plus_delta: None,
        exp_q: q.exp(),
        slope_gap: gap,
        light_tail: light,
        note: String::new(),
    };
    let done = |verdict, witness| FinitenessVerdict { verdict, witness, beta_used: beta };
    let downgrade = |w: &mut Witness| {
        if matches!(gap, SlopeGap::GridOnly(_)) {
            w.note = "slope gap confirmed on a probe grid only; leaning infinite".into();
            Verdict::Inconclusive
        } else {
            Verdict::Infinite
        }
    };

    if light && gap.holds() && q.max(beta) > 0.0 {
        witness.route = Route::LightTail;
        if log_phi_beta < q {
            if let Some(d) = sufficient_finite(law, f, q) {
                witness.delta = Some(d);
                witness.mgf_at_beta_plus_delta = finite_or_none(law.mgf(beta + d));
            }
            return done(Verdict::Finite, witness);
        }
        let v = downgrade(&mut witness);
        return done(v, witness);
    }
    if let Some(d) = sufficient_finite(law, f, q) {
        witness.route = Route::SufficientFinite;
        witness.delta = Some(d);
        witness.mgf_at_beta_plus_delta = finite_or_none(law.mgf(beta + d));
        return done(Verdict::Finite, witness);
    }
    if sufficient_infinite(law, f, q) == Applicability::True {
        witness.route = Route::SufficientInfinite;
        let v = downgrade(&mut witness);
        return done(v, witness);
    }
    if novikov_shiryaev(law, f, q) == Applicability::True {
        witness.route = Route::NovikovShiryaev;
        witness.note = "moment condition for (x+)^nu".into();
        return done(Verdict::Finite, witness);
    }
    if q == 0.0 && beta == 0.0 && law.mean().is_some_and(|m| m >= 0.0) && gap.holds() {
        witness.route = Route::Recurrence;
        witness.note = "q = 0 and E xi >= 0: the walk's supremum is infinite".into();
        let v = downgrade(&mut witness);
        return done(v, witness);
    }
    witness.note = if light {
        "no applicable condition".into()
    } else {
        "no exponential moment beyond beta".into()
    };
    done(Verdict::Inconclusive, witness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::CustomLogReward;
    use crate::stochastic::SamplerLaw;
    use std::sync::Arc;

    fn walk(p: f64) -> IncrementLaw {
        IncrementLaw::simple(p).unwrap()
    }

    #[test]
    fn sufficient_finite_examples() {
        let call = RewardFunction::exp_call(1.0).unwrap();
        assert_eq!(sufficient_finite(&walk(0.25), &call, 0.0), Some(1.0 / 16.0));
        let lin = RewardFunction::power_plus(1.0).unwrap();
        assert_eq!(sufficient_finite(&walk(0.5), &lin, 0.0), None);
        assert_eq!(sufficient_finite(&walk(0.5), &lin, 10.0), Some(1.0));
    }

    #[test]
    fn sufficient_infinite_examples() {
        let lin = RewardFunction::power_plus(1.0).unwrap();
        assert!(matches!(sufficient_infinite(&walk(0.5), &lin, 0.0), Applicability::NotApplicable(_)));
        assert_eq!(sufficient_infinite(&walk(0.5), &lin, 0.1), Applicability::False);
        let custom = logistic(0.3);
        assert_eq!(sufficient_infinite(&walk(0.5), &custom, 0.04), Applicability::True);
    }

    /// `h = βx − log(1 + e^{−x})`, slopes strictly above `β`.
    fn logistic(beta: f64) -> RewardFunction {
        RewardFunction::custom(CustomLogReward {
            log_value: Arc::new(move |x: f64| beta * x - (-x).exp().ln_1p()),
            deriv_left: Arc::new(move |x: f64| beta + 1.0 / (1.0 + x.exp())),
            deriv_right: Arc::new(move |x: f64| beta + 1.0 / (1.0 + x.exp())),
            x0: f64::NEG_INFINITY,
            beta,
            probe: (-20.0, 20.0),
            critical_points: vec![],
        })
        .unwrap()
    }

    #[test]
    fn light_tail_examples() {
        let call = RewardFunction::exp_call(1.0).unwrap();
        assert_eq!(light_tail_characterization(&walk(0.25), &call, 0.0).verdict, Verdict::Finite);
        let v = light_tail_characterization(&walk(0.5), &call, 0.0);
        assert_eq!(v.verdict, Verdict::Infinite);
        assert_eq!(v.witness.route, Route::LightTail);
        // probe-grid gap only
        assert_eq!(light_tail_characterization(&walk(0.5), &logistic(1.0), 0.0).verdict, Verdict::Inconclusive);
        let heavy = IncrementLaw::Sampler(
            SamplerLaw::new(crate::stochastic::SamplerFamily::StudentT { df: 3.0, location: -0.5, scale: 1.0 }).unwrap(),
        );
        let ind = RewardFunction::indicator(0.0).unwrap();
        assert_eq!(light_tail_characterization(&heavy, &ind, 0.2).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn recurrence_and_moment_routes() {
        let lin = RewardFunction::power_plus(1.0).unwrap();
        let v = light_tail_characterization(&walk(0.5), &lin, 0.0);
        assert_eq!(v.verdict, Verdict::Infinite);
        assert_eq!(v.witness.route, Route::Recurrence);
        assert_eq!(novikov_shiryaev(&walk(0.25), &lin, 0.0), Applicability::True);
        assert_eq!(novikov_shiryaev(&walk(0.6), &lin, 0.3), Applicability::True);
        let call = RewardFunction::exp_call(1.0).unwrap();
        assert!(matches!(novikov_shiryaev(&walk(0.25), &call, 0.0), Applicability::NotApplicable(_)));
    }

    #[test]
    fn boundary_equality_is_infinite() {
        // φ(1) = cosh 1 = e^q exactly
        let call = RewardFunction::exp_call(1.0).unwrap();
        let v = light_tail_characterization(&walk(0.5), &call, 1f64.cosh().ln());
        assert_eq!(v.verdict, Verdict::Infinite);
    }
}
