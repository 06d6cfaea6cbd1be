use onesided::classify::light_tail_characterization;
use onesided::oracle::{self, Boundary, DpOptions};
use onesided::reward::{three_point_concave, PiecewiseLogLinear};
use onesided::solver::{self, Method, Regime, SolveOptions};
use onesided::stochastic::{self, LatticeLaw};
use onesided::{IncrementLaw, RewardFunction, RewardSpec};
use proptest::prelude::*;

fn exact() -> SolveOptions {
    SolveOptions { method: Some(Method::ExactLattice), ..Default::default() }
}

/// Lattice laws with 2 to 5 atoms on `{-4, …, 3}`, both signs present.
fn lattice_law(negative_drift: bool) -> impl Strategy<Value = IncrementLaw> {
    (proptest::sample::subsequence((-4i64..=3).filter(|k| *k != 0).collect::<Vec<_>>(), 2..=5), prop::collection::vec(0.05f64..1.0, 5))
        .prop_filter_map("needs both signs and the requested drift", move |(offsets, w)| {
            if !offsets.iter().any(|k| *k > 0) || !offsets.iter().any(|k| *k < 0) {
                return None;
            }
            let total: f64 = w[..offsets.len()].iter().sum();
            let atoms: Vec<(i64, f64)> = offsets.iter().zip(&w).map(|(k, p)| (*k, p / total)).collect();
            let mean: f64 = atoms.iter().map(|(k, p)| *k as f64 * p).sum();
            if negative_drift && mean > -0.05 {
                return None;
            }
            LatticeLaw::from_offsets(1.0, atoms).ok().map(IncrementLaw::Lattice)
        })
}

fn piecewise() -> impl Strategy<Value = RewardFunction> {
    (prop::collection::vec(-3.0f64..3.0, 1..=3), 0.0f64..0.6, prop::collection::vec(0.05f64..1.5, 3), prop::option::of(0.5f64..3.0)).prop_map(
        |(mut bps, last, gaps, x0_gap)| {
            bps.sort_by(f64::total_cmp);
            bps.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let mut slopes = vec![last];
            for g in gaps.iter().take(bps.len()) {
                let s = slopes[0] + g;
                slopes.insert(0, s);
            }
            let x0 = x0_gap.map_or(f64::NEG_INFINITY, |d| bps[0] - d);
            RewardFunction::piecewise(PiecewiseLogLinear::new(bps.clone(), slopes, bps[0], 0.0, x0).unwrap())
        },
    )
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn piecewise_rewards_are_logconcave_and_nondecreasing(f in piecewise(), a in -6.0f64..6.0, d1 in 0.01f64..2.0, d2 in 0.01f64..2.0) {
        let (b, c) = (a + d1, a + d1 + d2);
        prop_assert!(f.eval(a) <= f.eval(b) && f.eval(b) <= f.eval(c));
        prop_assert!(three_point_concave(&f, a, b, c));
        prop_assert!(f.log_deriv_left(b) + 1e-12 >= f.log_deriv_right(b));
    }

    #[test]
    fn reward_json_round_trips(f in piecewise()) {
        let spec = RewardSpec::try_from(&f).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: RewardFunction = serde_json::from_str(&text).unwrap();
        for x in grid(-5.0, 5.0, 21) {
            prop_assert!((back.eval(x) - f.eval(x)).abs() <= 1e-14 * f.eval(x).max(1.0));
        }
    }

    #[test]
    fn log_mgf_is_convex_with_zero_at_origin(law in lattice_law(false), a in 0.0f64..2.0, b in 0.0f64..2.0) {
        prop_assert!(law.log_mgf(0.0).abs() < 1e-14);
        let m = law.log_mgf(0.5 * (a + b));
        prop_assert!(m <= 0.5 * (law.log_mgf(a) + law.log_mgf(b)) + 1e-12);
    }

    #[test]
    fn mgf_root_solves_the_equation(law in lattice_law(false), q in 0.0f64..0.5) {
        if let Some(r) = law.mgf_root(q) {
            prop_assert!((law.log_mgf(r) - q).abs() < 1e-8, "root {r}");
        }
    }

    /// Threshold for `g = x⁺` at `q = 0` is `E(M)`.
    #[test]
    fn threshold_of_x_plus_is_expected_maximum(law in lattice_law(true)) {
        let m = stochastic::expected_maximum(&law, 1, 0).unwrap().mean;
        let f = RewardFunction::power_plus(1.0).unwrap();
        let s = solver::find_threshold(&law, &f, 0.0, &exact()).unwrap();
        match s.regime {
            Regime::Finite { u } => prop_assert!((u - m).abs() <= 1e-6 * m.max(1.0), "u = {u}, E M = {m}"),
            Regime::StopEverywhere => prop_assert!(m <= 1e-9),
            r => prop_assert!(false, "unexpected regime {r:?}"),
        }
    }

    #[test]
    fn ratio_trace_decreases_and_value_dominates(law in lattice_law(true), f in piecewise(), q in 0.0f64..0.5) {
        let solved = solver::solve(&law, &f, q, &exact()).unwrap();
        let trace = &solved.solution.ratio_trace;
        for w in trace.windows(2) {
            prop_assert!(w[1].rho <= w[0].rho * (1.0 + 1e-9) + 1e-15, "{w:?}");
        }
        if let Some(u) = solved.solution.regime.threshold().filter(|u| u.is_finite()) {
            for x in grid(u - 6.0, u + 3.0, 19) {
                let v = solved.value(x).unwrap().mean;
                let g = f.eval(x);
                prop_assert!(v >= g * (1.0 - 1e-8), "x = {x}, u = {u}, v = {v}, g = {g}");
                if x >= u {
                    prop_assert!((v - g).abs() <= 1e-12 * g.max(1.0));
                }
            }
        }
    }

    #[test]
    fn solution_is_invariant_under_reward_scaling(law in lattice_law(false), f in piecewise(), q in 0.0f64..0.5, c in 0.1f64..10.0) {
        let g = f.scaled(c).unwrap();
        let a = solver::find_threshold(&law, &f, q, &exact()).unwrap();
        let b = solver::find_threshold(&law, &g, q, &exact()).unwrap();
        prop_assert_eq!(a.classification.verdict, b.classification.verdict);
        match (a.regime.threshold(), b.regime.threshold()) {
            (Some(x), Some(y)) if x.is_finite() => prop_assert!((x - y).abs() <= 1e-9),
            (x, y) => prop_assert_eq!(x.map(f64::is_finite), y.map(f64::is_finite)),
        }
        prop_assert_eq!(light_tail_characterization(&law, &f, q).verdict, light_tail_characterization(&law, &g, q).verdict);
    }

    #[test]
    fn dp_values_are_excessive(law in lattice_law(true), f in piecewise(), q in 0.05f64..0.5) {
        let rate = law.mgf_root(q).unwrap_or(0.0);
        let opts = DpOptions { boundary: Boundary::GeometricExtrapolation { rate }, ..Default::default() };
        let dp = oracle::value_iteration(&law, &f, q, -40.0, 20.0, &opts).unwrap();
        let lat = law.as_lattice().unwrap();
        let n = dp.grid.len() as i64;
        let (down, up) = (lat.max_down(), lat.max_up());
        for i in down..n - up {
            let c: f64 = lat.atoms().iter().map(|&(k, p)| p * dp.values[(i + k) as usize]).sum();
            prop_assert!(dp.values[i as usize] >= (-q).exp() * c * (1.0 - 1e-9));
        }
        for (v, g) in dp.values.iter().zip(&dp.rewards) {
            prop_assert!(v >= g);
        }
    }
}
