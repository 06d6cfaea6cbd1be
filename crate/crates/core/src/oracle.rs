//! Brute-force value iteration on a truncated lattice grid, used to check
//! the threshold solver independently.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::reward::RewardFunction;
use crate::solver::{Regime, Solved};
use crate::stochastic::IncrementLaw;

pub const STOP_REL_TOL: f64 = 1e-8;

/// Continuation value assigned below the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    /// `V := g` below the grid.
    ClampToReward,
    /// `V(x) := e^{rate·(x − lo)} V(lo)` below the grid.
    GeometricExtrapolation { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpOptions {
    pub boundary: Boundary,
    pub max_iter: usize,
    /// Largest pointwise relative change that ends the iteration.
    pub tol: f64,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self { boundary: Boundary::ClampToReward, max_iter: 100_000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpResult {
    pub grid: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub stopping: Vec<bool>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl DpResult {
    /// Grid points in the stopping set.
    pub fn stopping_set(&self) -> Vec<f64> {
        self.grid.iter().zip(&self.stopping).filter(|(_, s)| **s).map(|(x, _)| *x).collect()
    }

    /// Columns `x, g, V, in_stopping_set`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,g,V,in_stopping_set")?;
        for i in 0..self.grid.len() {
            writeln!(w, "{},{},{},{}", self.grid[i], self.rewards[i], self.values[i], self.stopping[i] as u8)?;
        }
        Ok(())
    }
}

/// `V = g` up to the relative stopping tolerance, restricted to `{g > 0}`.
pub fn is_stopping(v: f64, g: f64) -> bool {
    g > 0.0 && v <= g * (1.0 + STOP_REL_TOL)
}

/// Iterates `V ← max{g, e^{−q} E V(· + ξ)}` from `V = g` on the lattice grid
/// `lo, lo + step, …, ≤ hi`. Points above the grid take `V = g`.
pub fn value_iteration(
    law: &IncrementLaw,
    f: &RewardFunction,
    q: f64,
    lo: f64,
    hi: f64,
    opts: &DpOptions,
) -> Result<DpResult, OracleError> {
    let lat = law.as_lattice().ok_or(OracleError::NotLattice)?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(OracleError::InvalidGrid(format!("grid [{lo}, {hi}] must be finite with lo < hi")));
    }
    if !(q >= 0.0 && q.is_finite()) {
        return Err(OracleError::InvalidGrid(format!("discount q = {q} must be finite and nonnegative")));
    }
    if q == 0.0 && !(lat.mean() < 0.0) {
        return Err(OracleError::Refused("q = 0 needs a negative drift for value iteration to converge".into()));
    }
    let step = lat.step();
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if !(2..=50_000_000).contains(&n) {
        return Err(OracleError::InvalidGrid(format!("grid has {n} points")));
    }
    let down = lat.max_down() as usize;
    let up = lat.max_up().max(0) as usize;
    let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
    // Rewards on the extended index range [−down, n + up).
    let ext: Vec<f64> = (0..down + n + up).map(|j| f.eval(lo + (j as f64 - down as f64) * step)).collect();
    let rewards = ext[down..down + n].to_vec();
    let disc = (-q).exp();
    let atoms: Vec<(i64, f64)> = lat.atoms().to_vec();
    let boundary = opts.boundary;

    let mut v = rewards.clone();
    let mut next = vec![0.0; n];
    let (mut iterations, mut residual, mut converged) = (0, f64::INFINITY, false);
    while iterations < opts.max_iter {
        iterations += 1;
        let cur = &v;
        next.par_iter_mut().enumerate().with_min_len(1024).for_each(|(i, out)| {
            let mut c = 0.0;
            for &(k, p) in &atoms {
                let j = i as i64 + k;
                let vj = if j < 0 {
                    match boundary {
                        Boundary::ClampToReward => ext[(j + down as i64) as usize],
                        Boundary::GeometricExtrapolation { rate } => (rate * j as f64 * step).exp() * cur[0],
                    }
                } else if j as usize >= n {
                    ext[j as usize + down]
                } else {
                    cur[j as usize]
                };
                c += p * vj;
            }
            *out = rewards[i].max(disc * c);
        });
        residual = next.iter().zip(&v).map(|(a, b)| if *a > 0.0 { (a - b).abs() / a } else { (a - b).abs() }).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if residual <= opts.tol {
            converged = true;
            break;
        }
    }
    let stopping: Vec<bool> = v.iter().zip(&rewards).map(|(a, b)| is_stopping(*a, *b)).collect();
    if stopping[0] && stopping.iter().any(|s| !s) {
        return Err(OracleError::GridTooNarrow(lo));
    }
    Ok(DpResult { grid, rewards, values: v, stopping, iterations, residual, converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSided {
    pub is_up_set: bool,
    /// Smallest stopping point; `None` for an empty stopping set or a
    /// non-up-set.
    pub dp_threshold: Option<f64>,
}

/// Whether the stopping set is `grid ∩ [t, ∞)`.
pub fn check_one_sided(dp: &DpResult) -> OneSided {
    let first = dp.stopping.iter().position(|s| *s);
    match first {
        None => OneSided { is_up_set: true, dp_threshold: None },
        Some(i) => {
            let up = dp.stopping[i..].iter().all(|s| *s);
            OneSided { is_up_set: up, dp_threshold: up.then(|| dp.grid[i]) }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub pass: bool,
    pub is_up_set: bool,
    #[serde(with = "crate::ext_float::option")]
    pub dp_threshold: Option<f64>,
    #[serde(with = "crate::ext_float::option")]
    pub solver_threshold: Option<f64>,
    #[serde(with = "crate::ext_float")]
    pub threshold_gap: f64,
    pub threshold_ok: bool,
    #[serde(with = "crate::ext_float")]
    pub value_gap: f64,
    pub value_bound: f64,
    pub value_ok: bool,
    #[serde(with = "crate::ext_float::option")]
    pub worst_x: Option<f64>,
    pub note: String,
}

/// Compares a solver result with a DP run on the same instance.
pub fn cross_validate(solved: &Solved, dp: &DpResult, grid_step: f64) -> CrossValidation {
    let one = check_one_sided(dp);
    let sol = &solved.solution;
    let mut report = CrossValidation {
        pass: false,
        is_up_set: one.is_up_set,
        dp_threshold: one.dp_threshold,
        solver_threshold: sol.regime.threshold(),
        threshold_gap: f64::NAN,
        threshold_ok: false,
        value_gap: f64::NAN,
        value_bound: 1e-6,
        value_ok: false,
        worst_x: None,
        note: String::new(),
    };
    match (&sol.regime, one.dp_threshold) {
        (Regime::Finite { u }, Some(t)) => {
            report.threshold_gap = (t - u).abs();
            report.threshold_ok = report.threshold_gap <= grid_step + sol.tolerance + 1e-9;
        }
        (Regime::StopEverywhere, Some(t)) => {
            report.threshold_gap = t - dp.grid[0];
            report.threshold_ok = report.threshold_gap == 0.0;
        }
        (Regime::Inconclusive { reason }, _) => report.note = format!("solver inconclusive: {reason}"),
        (Regime::NeverStop { .. }, _) => report.note = "never-stop regime has no grid threshold".into(),
        (_, None) => report.note = "DP stopping set is empty or not an up-set".into(),
    }
    match solved.value_grid(&dp.grid) {
        Ok(vs) => {
            let mut worst = (0.0f64, None);
            let mut bound = 1e-6f64;
            for (i, e) in vs.iter().enumerate() {
                let gap = (e.mean - dp.values[i]).abs();
                bound = bound.max(4.0 * e.se);
                if !(gap <= worst.0) {
                    worst = (gap, Some(dp.grid[i]));
                }
            }
            report.value_gap = worst.0;
            report.worst_x = worst.1;
            report.value_bound = bound;
            report.value_ok = worst.0 <= bound;
        }
        Err(e) => {
            if report.note.is_empty() {
                report.note = format!("solver values unavailable: {e}");
            }
        }
    }
    report.pass = report.is_up_set && report.threshold_ok && report.value_ok;
    report
}

/// Sup-norm change of the DP values on the original grid when the grid is
/// widened to twice its span on both sides.
pub fn boundary_sensitivity(
    law: &IncrementLaw,
    f: &RewardFunction,
    q: f64,
    lo: f64,
    hi: f64,
    opts: &DpOptions,
) -> Result<f64, OracleError> {
    let base = value_iteration(law, f, q, lo, hi, opts)?;
    let span = hi - lo;
    let wide = value_iteration(law, f, q, lo - span, hi + span, opts)?;
    let step = law.as_lattice().ok_or(OracleError::NotLattice)?.step();
    let offset = (span / step).round() as usize;
    Ok(base
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - wide.values[i + offset]).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve, SolveOptions};

    fn walk(p: f64) -> IncrementLaw {
        IncrementLaw::simple(p).unwrap()
    }

    #[test]
    fn expected_maximum_instance() {
        let law = walk(0.25);
        let f = RewardFunction::power_plus(1.0).unwrap();
        let dp = value_iteration(&law, &f, 0.0, -40.0, 40.0, &DpOptions::default()).unwrap();
        assert!(dp.converged);
        let zero = dp.grid.iter().position(|x| *x == 0.0).unwrap();
        assert!((dp.values[zero] - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(dp.stopping_set()[0], 1.0);
        assert_eq!(check_one_sided(&dp), OneSided { is_up_set: true, dp_threshold: Some(1.0) });
        assert!(dp.values.iter().zip(&dp.rewards).all(|(v, g)| v >= g));

        let s = solve(&law, &f, 0.0, &SolveOptions::default()).unwrap();
        let cv = cross_validate(&s, &dp, 1.0);
        assert!(cv.pass, "{cv:?}");
        assert!((cv.threshold_gap - 0.5).abs() < 1e-6);
        assert!(cv.value_gap < 1e-6);

        let mut wrong = solve(&law, &f, 0.0, &SolveOptions::default()).unwrap();
        wrong.solution.regime = Regime::Finite { u: 2.5 };
        let cv = cross_validate(&wrong, &dp, 1.0);
        assert!(!cv.pass);
        let i = dp.grid.iter().position(|x| *x == 1.0).unwrap();
        assert!(wrong.value(1.0).unwrap().mean < dp.values[i]);
    }

    #[test]
    fn indicator_stops_at_zero() {
        let dp = value_iteration(&walk(0.5), &RewardFunction::indicator(0.0).unwrap(), 0.2, -30.0, 30.0, &DpOptions::default()).unwrap();
        assert_eq!(check_one_sided(&dp).dp_threshold, Some(0.0));
        let s = solve(&walk(0.5), &RewardFunction::indicator(0.0).unwrap(), 0.2, &SolveOptions::default()).unwrap();
        let cv = cross_validate(&s, &dp, 1.0);
        assert!(cv.pass && cv.threshold_gap == 0.0, "{cv:?}");
    }

    #[test]
    fn heavy_discount_stops_on_support() {
        let f = RewardFunction::power_plus(1.0).unwrap();
        let dp = value_iteration(&walk(0.5), &f, 10.0, -5.0, 5.0, &DpOptions::default()).unwrap();
        for i in 0..dp.grid.len() {
            assert_eq!(dp.stopping[i], dp.rewards[i] > 0.0);
            if dp.rewards[i] > 0.0 {
                assert_eq!(dp.values[i], dp.rewards[i]);
            }
        }
        let g = RewardFunction::exp_linear(0.0, 1.0).unwrap();
        let dp = value_iteration(&walk(0.5), &g, 0.7, -10.0, 10.0, &DpOptions::default()).unwrap();
        assert_eq!(check_one_sided(&dp), OneSided { is_up_set: true, dp_threshold: Some(-10.0) });
    }

    #[test]
    fn perturbed_values_are_not_one_sided() {
        let f = RewardFunction::power_plus(1.0).unwrap();
        let mut dp = value_iteration(&walk(0.25), &f, 0.0, -10.0, 10.0, &DpOptions::default()).unwrap();
        let i = dp.grid.iter().position(|x| *x == 3.0).unwrap();
        dp.stopping[i] = false;
        assert_eq!(check_one_sided(&dp), OneSided { is_up_set: false, dp_threshold: None });
    }

    #[test]
    fn refusals() {
        let f = RewardFunction::power_plus(1.0).unwrap();
        assert!(matches!(
            value_iteration(&walk(0.5), &f, 0.0, -10.0, 10.0, &DpOptions::default()),
            Err(OracleError::Refused(_))
        ));
        let gauss = IncrementLaw::gaussian(-1.0, 1.0).unwrap();
        assert!(matches!(value_iteration(&gauss, &f, 0.1, -10.0, 10.0, &DpOptions::default()), Err(OracleError::NotLattice)));
        assert!(matches!(
            value_iteration(&walk(0.25), &f, 0.0, 1.0, 1.0, &DpOptions::default()),
            Err(OracleError::InvalidGrid(_))
        ));
    }

    #[test]
    fn csv_and_sensitivity() {
        let f = RewardFunction::power_plus(1.0).unwrap();
        let dp = value_iteration(&walk(0.25), &f, 0.0, -3.0, 3.0, &DpOptions::default()).unwrap();
        let mut buf = Vec::new();
        dp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,g,V,in_stopping_set\n-3,0,"));
        let s = boundary_sensitivity(&walk(0.25), &f, 0.0, -20.0, 20.0, &DpOptions::default()).unwrap();
        assert!(s < 1e-7, "{s}");
    }
}
