//! Benchmark suite: the nine reference checks, each returning a pass/fail
//! line with the measured numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{light_tail_characterization, Verdict};
use crate::error::OracleError;
use crate::levy::{self, Jumps, LevyModel};
use crate::oracle::{self, Boundary, DpOptions, DpResult};
use crate::reward::{PiecewiseLogLinear, RewardFunction};
use crate::smoothfit::{self, A1Outcome, SmoothFitOptions, Verdict as FitVerdict};
use crate::solver::{self, Method, Regime, SolveOptions, Solved};
use crate::stochastic::{IncrementLaw, JumpLaw, LatticeLaw, SamplerLaw};

/// Root of `0.5(e^λ − 1) = λ`, computed independently by Newton iteration
/// in extended precision and frozen.
pub const POISSON_ROOT: f64 = 1.2564312086261695;

pub const DEFAULT_SEED: u64 = 20_240_611;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CriterionOutcome {
    fn new(id: u8, name: &str, pass: bool, detail: String) -> Self {
        Self { id, name: name.into(), pass, detail }
    }

    fn error(id: u8, name: &str, e: impl std::fmt::Display) -> Self {
        Self::new(id, name, false, format!("error: {e}"))
    }

    /// `criterion N PASS|FAIL name: detail`.
    pub fn line(&self) -> String {
        format!("criterion {} {} {}: {}", self.id, if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub type Criterion = fn(u64) -> CriterionOutcome;

/// All criteria in order.
pub fn criteria() -> Vec<Criterion> {
    vec![
        expected_maximum_benchmark,
        never_stop_regime,
        brownian_indicator_value,
        smooth_fit_fails_at_kink,
        irregular_smooth_fit,
        one_sided_structure,
        ratio_monotonicity,
        dyadic_monotonicity,
        classifier_consistency,
    ]
}

pub fn run_all(seed: u64) -> Vec<CriterionOutcome> {
    criteria().into_iter().map(|c| c(seed)).collect()
}

fn exact() -> SolveOptions {
    SolveOptions { method: Some(Method::ExactLattice), ..Default::default() }
}

/// Criterion 1: `u = E(M) = 1/2` for the `±1` walk with `p = 1/4` and `g = x⁺`.
pub fn expected_maximum_benchmark(_seed: u64) -> CriterionOutcome {
    const NAME: &str = "u = E(M) benchmark";
    let run = || -> Result<CriterionOutcome, Box<dyn std::error::Error>> {
        let law = IncrementLaw::simple(0.25)?;
        let f = RewardFunction::power_plus(1.0)?;
        let solved = solver::solve(&law, &f, 0.0, &exact())?;
        let u = solved.solution.regime.threshold().unwrap_or(f64::NAN);
        let v0 = solved.value(0.0)?.mean;
        let dp = oracle::value_iteration(&law, &f, 0.0, -30.0, 30.0, &DpOptions::default())?;
        let cv = oracle::cross_validate(&solved, &dp, 1.0);
        let stop = dp.stopping_set();
        let want: Vec<f64> = (1..=30).map(f64::from).collect();
        let pass = matches!(solved.solution.regime, Regime::Finite { .. })
            && (u - 0.5).abs() <= 1e-3
            && (v0 - 1.0 / 3.0).abs() <= 1e-6
            && cv.pass
            && stop == want;
        Ok(CriterionOutcome::new(
            1,
            NAME,
            pass,
            format!("u = {u}, V(0) = {v0:.12}, cross-validation {}, stopping set {{{}..{}}}", cv.pass, stop.first().unwrap_or(&f64::NAN), stop.last().unwrap_or(&f64::NAN)),
        ))
    };
    run().unwrap_or_else(|e| CriterionOutcome::error(1, NAME, e))
}

/// Criterion 2: the symmetric walk never stops and `W = ∞`.
pub fn never_stop_regime(_seed: u64) -> CriterionOutcome {
    const NAME: &str = "never-stop regime";
    let run = || -> Result<CriterionOutcome, Box<dyn std::error::Error>> {
        let law = IncrementLaw::simple(0.5)?;
        let f = RewardFunction::power_plus(1.0)?;
        let solved = solver::solve(&law, &f, 0.0, &exact())?;
        let verdict = light_tail_characterization(&law, &f, 0.0).verdict;
        let ns = solver::never_stop_value(&law, &f, 0.0, &solved.solution.regime, &exact())?;
        let w_inf = matches!(solved.solution.regime, Regime::NeverStop { w, .. } if w == f64::INFINITY);
        let pass = w_inf && verdict == Verdict::Infinite && ns.diverged && ns.w == f64::INFINITY;
        let its: Vec<String> = ns.iterates.iter().map(|i| format!("{:.3}", i.value)).collect();
        Ok(CriterionOutcome::new(
            2,
            NAME,
            pass,
            format!("regime {:?}, classifier {verdict:?}, iterates [{}], diverged {}", solved.solution.regime, its.join(", "), ns.diverged),
        ))
    };
    run().unwrap_or_else(|e| CriterionOutcome::error(2, NAME, e))
}

/// Criterion 3: Brownian motion, `g = 1_{[0,∞)}`, `q = 1/2`, level 10.
pub fn brownian_indicator_value(seed: u64) -> CriterionOutcome {
    const NAME: &str = "Brownian indicator value";
    let run = || -> Result<CriterionOutcome, Box<dyn std::error::Error>> {
        let model = LevyModel::brownian(0.0, 1.0)?;
        let f = RewardFunction::indicator(0.0)?;
        let opts = SolveOptions { seed, value_budget: 200_000, ..Default::default() };
        let solved = levy::solve_level(&model, &f, 0.5, 10, &opts)?;
        let u = solved.solution.regime.threshold().unwrap_or(f64::NAN);
        let v = solved.value(-1.0)?;
        let target = (-1.0f64).exp();
        let tol = 0.01f64.max(4.0 * v.se);
        let pass = u.abs() <= 0.05 && (v.mean - target).abs() <= tol;
        Ok(CriterionOutcome::new(3, NAME, pass, format!("u^(10) = {u}, V(-1) = {:.5} (SE {:.1e}), target {target:.5}, tolerance {tol}", v.mean, v.se)))
    };
    run().unwrap_or_else(|e| CriterionOutcome::error(3, NAME, e))
}

/// Criterion 4: `g = min{e^{2x}, 1}` under Brownian motion, `q = 1/2`.
pub fn smooth_fit_fails_at_kink(seed: u64) -> CriterionOutcome {
    const NAME: &str = "smooth fit fails at a kink";
    let run = || -> Result<CriterionOutcome, Box<dyn std::error::Error>> {
        let model = LevyModel::brownian(0.0, 1.0)?;
        let f = RewardFunction::exp_linear(0.0, 2.0)?.truncate_above(0.0)?;
        let opts = SmoothFitOptions { solve: SolveOptions { seed, ..Default::default() }, ..Default::default() };
        let r = smoothfit::analyze(&model, &f, 0.5, &opts)?;
        let pass = (r.v_prime_left.estimate - 1.0).abs() <= 0.05 && r.g_prime_right == 0.0 && r.verdict == FitVerdict::SmoothFitFails;
        Ok(CriterionOutcome::new(
            4,
            NAME,
            pass,
            format!(
                "u = {}, V'(u-) = {:.4} +/- {:.4}, g'(u+) = {}, verdict {:?}",
                r.u, r.v_prime_left.estimate, r.v_prime_left.error, r.g_prime_right, r.verdict
            ),
        ))
    };
    run().unwrap_or_else(|e| CriterionOutcome::error(4, NAME, e))
}

/// Criterion 5: `X_t = −t + N_t`, `μ = 1/2`, `q = 0`, reward linear in log
/// scale on `[0, 1]` with slope `λ′`.
pub fn irregular_smooth_fit(seed: u64) -> CriterionOutcome {
    const NAME: &str = "irregular smooth fit via degeneracy";
    let run = || -> Result<CriterionOutcome, Box<dyn std::error::Error>> {
        let model = LevyModel::new(-1.0, 0.0, Some(Jumps { rate: 0.5, law: JumpLaw::Fixed { size: 1.0 } }))?;
        let root = model.step_law(0)?.mgf_root(0.0).unwrap_or(f64::NAN);
        let f = RewardFunction::linear_span(root, 1.0)?;
        let solve = SolveOptions { seed, allow_undiscounted: true, ..Default::default() };
        let solved = levy::continuous_solve(&model, &f, 0.0, &solve)?;
        let u = solved.solution.regime.threshold().unwrap_or(f64::NAN);
        let v = solved.value(-0.5)?;
        let target = (-0.5 * root).exp();
        let r = smoothfit::analyze(&model, &f, 0.0, &SmoothFitOptions { solve, ..Default::default() })?;
        let a1 = r.criterion_a1.map(|a| a.outcome);
        let zeta = r.zeta.as_ref().map_or(f64::NAN, |z| z.zeta);
        let formula = r.overshoot_formula.unwrap_or(smoothfit::DerivativeEstimate { estimate: f64::NAN, error: f64::NAN });
        let gap = (r.v_prime_left.estimate - formula.estimate).abs();
        let combined = 3.0 * r.v_prime_left.error.hypot(formula.error);
        let pass = (root - POISSON_ROOT).abs() <= 1e-4
            && u.abs() <= 0.05
            && (v.mean - target).abs() <= 4.0 * v.se
            && a1 == Some(A1Outcome::Holds)
            && zeta == 1.0
            && gap <= combined;
        Ok(CriterionOutcome::new(
            5,
            NAME,
            pass,
            format!(
                "lambda' = {root:.10}, u = {u:.2e}, V(-0.5) = {:.12} (SE {:.1e}) vs {target:.12}, A1 {a1:?}, zeta = {zeta}, V'(u-) = {:.4} +/- {:.4}, formula {:.6} +/- {:.1e}",
                v.mean, v.se, r.v_prime_left.estimate, r.v_prime_left.error, formula.estimate, formula.error
            ),
        ))
    };
    run().unwrap_or_else(|e| CriterionOutcome::error(5, NAME, e))
}

/// A random lattice instance with negative drift and a piecewise
/// log-linear reward.
#[derive(Debug, Clone)]
pub struct LatticeInstance {
    pub law: IncrementLaw,
    pub reward: RewardFunction,
    pub q: f64,
}

fn random_lattice_law(rng: &mut ChaCha8Rng, negative_drift: bool) -> IncrementLaw {
    loop {
        let k = rng.random_range(3..=5);
        let mut offsets: Vec<i64> = (-4..=3).collect();
        let mut chosen = Vec::with_capacity(k);
        while chosen.len() < k {
            let i = rng.random_range(0..offsets.len());
            chosen.push(offsets.swap_remove(i));
        }
        if !chosen.iter().any(|o| *o > 0) || !chosen.iter().any(|o| *o < 0) {
            continue;
        }
        let w: Vec<f64> = chosen.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let atoms: Vec<(i64, f64)> = chosen.iter().zip(&w).map(|(o, p)| (*o, p / total)).collect();
        let mean: f64 = atoms.iter().map(|(o, p)| *o as f64 * p).sum();
        if negative_drift && mean >= -0.05 {
            continue;
        }
        if let Ok(l) = LatticeLaw::from_offsets(1.0, atoms) {
            return IncrementLaw::Lattice(l);
        }
    }
}

fn random_piecewise(rng: &mut ChaCha8Rng) -> RewardFunction {
    let n = rng.random_range(1..=3);
    let mut bps: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    bps.sort_by(f64::total_cmp);
    let mut slopes = vec![rng.random_range(0.0..0.6)];
    for _ in 0..n {
        let s = slopes[0] + rng.random_range(0.05..1.5);
        slopes.insert(0, s);
    }
    let x0 = if rng.random::<bool>() { f64::NEG_INFINITY } else { bps[0] - rng.random_range(0.5..3.0) };
    let pw = PiecewiseLogLinear::new(bps.clone(), slopes, bps[0], 0.0, x0).expect("valid piecewise reward");
    RewardFunction::piecewise(pw)
}

/// Instances of criteria 6 and 7: drawn until the classifier certifies a
/// finite threshold and the exact solver finds one.
pub fn lattice_instances(seed: u64, count: usize) -> Vec<(LatticeInstance, Solved)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let law = random_lattice_law(&mut rng, true);
        let reward = random_piecewise(&mut rng);
        let q = if rng.random_range(0.0..1.0) < 0.2 { 0.0 } else { rng.random_range(0.0..0.5) };
        if light_tail_characterization(&law, &reward, q).verdict != Verdict::Finite {
            continue;
        }
        let Ok(solved) = solver::solve(&law, &reward, q, &exact()) else { continue };
        if matches!(solved.solution.regime, Regime::Finite { .. }) {
            out.push((LatticeInstance { law, reward, q }, solved));
        }
    }
    out
}

/// DP on the lattice through `u`, extrapolating below the grid at the
/// passage decay rate `λ` with `e^{−q}φ(λ) = 1` from far enough below that
/// `e^{−λ·span}` is negligible.
fn dp_around(inst: &LatticeInstance, u: f64) -> Result<DpResult, OracleError> {
    let rate = inst.law.mgf_root(inst.q).unwrap_or(0.0);
    let opts = DpOptions { boundary: Boundary::GeometricExtrapolation { rate }, ..Default::default() };
    let below = (28.0 / rate).ceil().clamp(40.0, 2000.0);
    oracle::value_iteration(&inst.law, &inst.reward, inst.q, u.floor() - below, u.ceil() + 40.0, &opts)
}

fn structure_failures(inst: &LatticeInstance, solved: &Solved) -> Result<Vec<String>, Box<dyn std::error::Error>> {
    let u = solved.solution.regime.threshold().expect("finite regime");
    let dp = dp_around(inst, u)?;
    let mut fails = Vec::new();
    let one = oracle::check_one_sided(&dp);
    if !one.is_up_set {
        fails.push("DP stopping set is not an up-set".to_string());
    }
    match one.dp_threshold {
        Some(t) if (t - u).abs() <= 1.0 + solved.solution.tolerance + 1e-9 => {}
        t => fails.push(format!("DP threshold {t:?} vs u = {u}")),
    }
    let cv = oracle::cross_validate(solved, &dp, 1.0);
    if !cv.pass {
        fails.push(format!("cross-validation fails: value gap {:e} at {:?}, threshold gap {}", cv.value_gap, cv.worst_x, cv.threshold_gap));
    }
    let vs = solved.value_grid(&dp.grid)?;
    let mut eq_start = None;
    let mut prev_ratio = f64::INFINITY;
    for (i, (&x, v)) in dp.grid.iter().zip(&vs).enumerate() {
        let g = dp.rewards[i];
        if v.mean < g * (1.0 - 1e-12) - 1e-14 {
            fails.push(format!("V < g at {x}"));
        }
        let equal = oracle::is_stopping(v.mean, g);
        match (equal, eq_start) {
            (true, None) => eq_start = Some(x),
            (false, Some(s)) => fails.push(format!("V = g at {s} but V > g at {x}")),
            _ => {}
        }
        if g > 0.0 {
            let r = v.mean / g;
            if r > prev_ratio * (1.0 + 1e-9) {
                fails.push(format!("V/g increases at {x}"));
            }
            prev_ratio = r;
        }
    }
    match eq_start {
        Some(s) if (s - u).abs() <= 1.0 + 1e-9 => {}
        s => fails.push(format!("{{V = g}} starts at {s:?}, u = {u}")),
    }
    Ok(fails)
}

/// Criterion 6: up-set stopping region, threshold agreement, `V ≥ g` with
/// equality on `[u, ∞)`, and `V/g` nonincreasing.
pub fn one_sided_structure(seed: u64) -> CriterionOutcome {
    const NAME: &str = "one-sided structure";
    let insts = lattice_instances(seed, 100);
    let mut bad = Vec::new();
    for (k, (inst, solved)) in insts.iter().enumerate() {
        match structure_failures(inst, solved) {
            Ok(f) if f.is_empty() => {}
            Ok(f) => bad.push(format!("#{k}: {}", f.iter().take(3).cloned().collect::<Vec<_>>().join("; "))),
            Err(e) => bad.push(format!("#{k}: {e}")),
        }
    }
    let detail = if bad.is_empty() {
        format!("{} instances, all one-sided", insts.len())
    } else {
        format!("{} of {} instances fail: {}", bad.len(), insts.len(), bad.iter().take(3).cloned().collect::<Vec<_>>().join(" | "))
    };
    CriterionOutcome::new(6, NAME, bad.is_empty(), detail)
}

/// Criterion 7: the ratio trace is nonincreasing and `ρ(u) = 1` for
/// `x0 < u < ∞`.
pub fn ratio_monotonicity(seed: u64) -> CriterionOutcome {
    const NAME: &str = "ratio monotonicity and fixed point";
    let insts = lattice_instances(seed, 100);
    let mut bad = Vec::new();
    let mut interior = 0;
    let mut worst = 0.0f64;
    for (k, (inst, solved)) in insts.iter().enumerate() {
        let trace = &solved.solution.ratio_trace;
        if trace.windows(2).any(|w| w[1].rho > w[0].rho * (1.0 + 1e-12) + 1e-15) {
            bad.push(format!("#{k}: ratio trace increases"));
        }
        let u = solved.solution.regime.threshold().expect("finite regime");
        if u > inst.reward.x0() {
            interior += 1;
            match solver::one_step_ratio(&inst.law, &inst.reward, inst.q, u, &exact()) {
                Ok(r) => {
                    worst = worst.max((r.mean - 1.0).abs());
                    if (r.mean - 1.0).abs() > 1e-6 {
                        bad.push(format!("#{k}: rho(u) = {}", r.mean));
                    }
                }
                Err(e) => bad.push(format!("#{k}: {e}")),
            }
        }
    }
    let detail = format!(
        "{} instances, {interior} with x0 < u, max |rho(u) - 1| = {worst:.2e}{}",
        insts.len(),
        if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.iter().take(3).cloned().collect::<Vec<_>>().join(" | ")) }
    );
    CriterionOutcome::new(7, NAME, bad.is_empty(), detail)
}

/// Models and rewards of criterion 8.
pub fn levy_instances() -> Vec<(LevyModel, RewardFunction, f64)> {
    let bm = |d, s| LevyModel::brownian(d, s).expect("valid model");
    let jd = |d, s, rate, law| LevyModel::new(d, s, Some(Jumps { rate, law })).expect("valid model");
    let call = |k| RewardFunction::exp_call(k).expect("valid reward");
    let pow = |nu| RewardFunction::power_plus(nu).expect("valid reward");
    let pw = RewardFunction::piecewise(PiecewiseLogLinear::new(vec![0.0, 1.0], vec![2.0, 1.0, 0.3], 0.0, 0.0, f64::NEG_INFINITY).expect("valid reward"));
    vec![
        (bm(-0.5, 1.0), call(1.0), 0.2),
        (bm(-1.0, 0.5), call(1.0), 0.2),
        (bm(0.0, 1.0), pow(1.0), 0.3),
        (bm(-0.2, 1.5), pow(2.0), 0.5),
        (bm(0.1, 0.8), call(1.0), 0.6),
        (jd(-0.5, 0.5, 1.0, JumpLaw::Normal { mean: 0.2, sd: 0.3 }), pow(1.0), 0.3),
        (jd(-1.0, 0.3, 0.5, JumpLaw::Exponential { rate: 3.0 }), call(1.0), 0.3),
        (jd(-1.0, 0.2, 0.8, JumpLaw::Uniform { lo: 0.0, hi: 2.0 }), pow(1.0), 0.2),
        (bm(-0.5, 1.0), pw, 0.1),
        (bm(0.0, 1.0), RewardFunction::exp_put(2.0).expect("valid reward"), 0.1),
    ]
}

/// Criterion 8: `u^(ℓ)` nondecreasing for `ℓ = 0..8` within four standard
/// errors, and never below `x0`.
pub fn dyadic_monotonicity(seed: u64) -> CriterionOutcome {
    const NAME: &str = "dyadic monotonicity";
    let mut bad = Vec::new();
    let mut spans = Vec::new();
    for (k, (model, f, q)) in levy_instances().iter().enumerate() {
        let opts = SolveOptions { seed: seed.wrapping_add(k as u64), ..Default::default() };
        match levy::threshold_sequence(model, f, *q, 8, &opts) {
            Ok(seq) => {
                let us: Vec<f64> = seq.levels.iter().map(|l| l.u).collect();
                if us.iter().any(|u| !u.is_finite() || *u < f.x0()) {
                    bad.push(format!("#{k}: levels {us:?}"));
                }
                for w in seq.levels.windows(2) {
                    if w[1].u < w[0].u - 4.0 * w[0].tolerance.hypot(w[1].tolerance) {
                        bad.push(format!("#{k}: u^({}) = {} < u^({}) = {}", w[1].level, w[1].u, w[0].level, w[0].u));
                    }
                }
                spans.push(format!("[{:.3}, {:.3}]", us[0], us[us.len() - 1]));
            }
            Err(e) => bad.push(format!("#{k}: {e}")),
        }
    }
    let detail = if bad.is_empty() {
        format!("10 models, u^(0)..u^(8): {}", spans.join(" "))
    } else {
        format!("failures: {}", bad.join(" | "))
    };
    CriterionOutcome::new(8, NAME, bad.is_empty(), detail)
}

fn classifier_instances(seed: u64) -> Vec<(IncrementLaw, RewardFunction, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0C1A_5519);
    let mut out = Vec::new();
    for i in 0..24 {
        let law = random_lattice_law(&mut rng, i % 3 != 0);
        let reward = match i % 6 {
            0 => RewardFunction::power_plus(rng.random_range(0.5..2.5)),
            1 => RewardFunction::exp_call(rng.random_range(0.5..2.0)),
            2 => RewardFunction::exp_put(rng.random_range(0.5..2.0)),
            3 => Ok(random_piecewise(&mut rng)),
            4 => RewardFunction::exp_linear(0.0, rng.random_range(0.1..1.0)),
            _ => RewardFunction::indicator(rng.random_range(-1.0..1.0)),
        }
        .expect("valid reward");
        let q = if i % 4 == 0 { 0.0 } else { rng.random_range(0.0..0.5) };
        out.push((law, reward, q));
    }
    let gauss = |m, s| IncrementLaw::Sampler(SamplerLaw::gaussian(m, s).expect("valid law"));
    out.push((gauss(-0.5, 1.0), RewardFunction::exp_call(1.0).expect("valid"), 0.1));
    out.push((gauss(-0.2, 1.0), RewardFunction::power_plus(1.0).expect("valid"), 0.2));
    out.push((gauss(0.0, 1.0), RewardFunction::power_plus(2.0).expect("valid"), 0.4));
    out.push((gauss(0.3, 1.0), RewardFunction::exp_call(1.0).expect("valid"), 0.5));
    out.push((gauss(-1.0, 2.0), RewardFunction::exp_put(1.0).expect("valid"), 0.3));
    out.push((gauss(-0.3, 0.5), RewardFunction::exp_linear(0.0, 0.5).expect("valid"), 0.05));
    out
}

fn regime_name(r: &Regime) -> &'static str {
    match r {
        Regime::StopEverywhere => "stop-everywhere",
        Regime::Finite { .. } => "finite",
        Regime::NeverStop { .. } => "never-stop",
        Regime::Inconclusive { .. } => "inconclusive",
    }
}

/// Criterion 9: classifier verdicts agree with solver outcomes, and both
/// are unchanged by `g ↦ 3g`.
pub fn classifier_consistency(seed: u64) -> CriterionOutcome {
    const NAME: &str = "finiteness classifier consistency";
    let mut bad = Vec::new();
    let mut tally = std::collections::BTreeMap::new();
    let opts = SolveOptions { seed, budget: 8192, max_budget: 65_536, value_budget: 20_000, tol: 1e-6, ..Default::default() };
    for (k, (law, f, q)) in classifier_instances(seed).into_iter().enumerate() {
        let g3 = f.scaled(3.0).expect("positive factor");
        let (s1, s3) = match (solver::solve(&law, &f, q, &opts), solver::solve(&law, &g3, q, &opts)) {
            (Ok(a), Ok(b)) => (a.solution, b.solution),
            (Err(e), _) | (_, Err(e)) => {
                bad.push(format!("#{k}: {e}"));
                continue;
            }
        };
        let v1 = s1.classification.verdict;
        *tally.entry(format!("{v1:?}/{}", regime_name(&s1.regime))).or_insert(0) += 1;
        let contradiction = s1.classifier_conflict
            || (v1 == Verdict::Finite && matches!(s1.regime, Regime::NeverStop { .. }))
            || (v1 == Verdict::Infinite && matches!(s1.regime, Regime::Finite { .. } | Regime::StopEverywhere));
        if contradiction {
            bad.push(format!("#{k}: verdict {v1:?} vs regime {:?}", s1.regime));
        }
        if s3.classification.verdict != v1 {
            bad.push(format!("#{k}: verdict changes under scaling"));
        }
        if regime_name(&s1.regime) != regime_name(&s3.regime) {
            bad.push(format!("#{k}: regime changes under scaling"));
        }
        if let (Some(a), Some(b)) = (s1.regime.threshold(), s3.regime.threshold()) {
            if a.is_finite() && (a - b).abs() > 1e-9 {
                bad.push(format!("#{k}: u moves from {a} to {b} under scaling"));
            }
        }
    }
    let tally: Vec<String> = tally.into_iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let detail = format!("30 instances ({}){}", tally.join(", "), if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.join(" | ")) });
    CriterionOutcome::new(9, NAME, bad.is_empty(), detail)
}
