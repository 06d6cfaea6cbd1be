//! Exact first-passage functionals of lattice walks through the discounted
//! weak ascending ladder law.
//!
//! `L_k = E[e^{−qT₀}; X_{T₀} = k·unit, T₀ < ∞]` for the walk started at 0,
//! where `T₀ = inf{n ≥ 1 : X_n ≥ 0}`. Every functional of the form
//! `E_x[e^{−q·passage} g(X_passage)]` is a finite combination of `L`.

use crate::error::PassageError;
use crate::reward::RewardFunction;
use crate::stochastic::law::LatticeLaw;

/// Largest number of lattice depths kept in the killed passage system.
pub const MAX_DEPTH: usize = 2_000_000;

/// Target accuracy of the truncated passage system.
const SYSTEM_EPS: f64 = 1e-16;

/// Depth used for the reflected system of a driftless undiscounted walk.
const NULL_DEPTH_PER_RANGE: usize = 4096;

#[derive(Debug, Clone)]
pub struct LadderTable {
    unit: f64,
    q: f64,
    /// `L_k`, `k = 0..=K`.
    probs: Vec<f64>,
    /// One-step law in units of `unit`, kept for strict-time passages.
    atoms: Vec<(i64, f64)>,
    depth: usize,
}

impl LadderTable {
    pub fn new(law: &LatticeLaw, q: f64) -> Result<Self, PassageError> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(PassageError::PreconditionViolated(format!("discount q = {q} must be finite and nonnegative")));
        }
        let g = law.atoms().iter().fold(0i64, |acc, a| gcd(acc, a.0.abs()));
        let unit = law.step() * g as f64;
        let atoms: Vec<(i64, f64)> = law.atoms().iter().map(|&(k, p)| (k / g, p)).collect();
        let reduced = LatticeLaw::from_offsets(unit, atoms.clone()).expect("rescaled law stays valid");
        let kmax = reduced.max_up() as usize;
        let kdown = reduced.max_down() as usize;
        let disc = (-q).exp();

        let mut probs = vec![0.0; kmax + 1];
        for &(k, p) in &atoms {
            if k >= 0 {
                probs[k as usize] += disc * p;
            }
        }
        if kdown == 0 {
            return Ok(Self { unit, q, probs, atoms, depth: 0 });
        }

        let law_wrapped = crate::stochastic::law::IncrementLaw::Lattice(reduced.clone());
        let alpha = law_wrapped.mgf_root(q).expect("lattice MGF is finite everywhere");

        if kmax == 1 {
            // Skip-free upward: crossing from below lands exactly on 0, and
            // E[e^{−qτ}] from depth m is r^m.
            let r = (-alpha * unit).exp();
            for &(k, p) in &atoms {
                if k < 0 {
                    probs[0] += disc * p * r.powi((-k) as i32);
                }
            }
            return Ok(Self { unit, q, probs, atoms, depth: 0 });
        }

        let mean = reduced.mean();
        let theta = if q == 0.0 && mean <= 0.0 { 0.0 } else { lower_root(&reduced, q) };
        let gamma = alpha - theta;
        let null = q == 0.0 && mean.abs() <= 1e-14 * unit;
        let (tilt, depth, reflect) = if null {
            (0.0, NULL_DEPTH_PER_RANGE * (kmax + kdown), true)
        } else {
            let need = (SYSTEM_EPS.recip().ln() + theta.abs() * (kmax + kdown) as f64 * unit) / (gamma * unit);
            let d = kdown + need.ceil() as usize + 16;
            if d > MAX_DEPTH {
                return Err(PassageError::UnboundedExpectation(format!(
                    "near-critical walk needs passage depth {d} > {MAX_DEPTH}"
                )));
            }
            (theta, d, false)
        };

        // Tilted one-step law, a proper distribution with nonpositive drift.
        let mut tilted: Vec<(i64, f64)> = atoms.iter().map(|&(k, p)| (k, p * (tilt * k as f64 * unit - q).exp())).collect();
        if !reflect {
            let s: f64 = tilted.iter().map(|a| a.1).sum();
            for a in &mut tilted {
                a.1 /= s;
            }
        } else {
            tilted = atoms.iter().map(|&(k, p)| (k, p * disc)).collect();
        }

        // Unknowns F_m(k), m = 1..=depth: probability under the tilted law of
        // entering [0, ∞) at k starting from −m.
        let mut band = Banded::new(depth, kmax, kdown);
        for m in 1..=depth {
            band.add(m - 1, m - 1, 1.0);
            for &(j, p) in &tilted {
                let next = m as i64 - j;
                if next <= 0 {
                    continue;
                }
                let next = if next as usize > depth {
                    if reflect {
                        depth
                    } else {
                        continue;
                    }
                } else {
                    next as usize
                };
                band.add(m - 1, next - 1, -p);
            }
        }
        band.factor()?;
        let mut from_depth = vec![vec![0.0; kmax + 1]; kdown + 1];
        let mut rhs = vec![0.0; depth];
        for k in 0..=kmax {
            rhs.iter_mut().for_each(|v| *v = 0.0);
            for &(j, p) in &tilted {
                // landing at j − m = k from depth m
                let m = j - k as i64;
                if m >= 1 && (m as usize) <= depth {
                    rhs[m as usize - 1] += p;
                }
            }
            band.solve(&mut rhs);
            for m in 1..=kdown {
                from_depth[m][k] = rhs[m - 1];
            }
        }
        let mut probs = vec![0.0; kmax + 1];
        for k in 0..=kmax {
            let mut v = 0.0;
            for &(j, p) in &tilted {
                if j as usize == k && j >= 0 {
                    v += p;
                } else if j < 0 {
                    v += p * from_depth[(-j) as usize][k];
                }
            }
            probs[k] = if reflect { v } else { v * (-tilt * k as f64 * unit).exp() };
        }
        Ok(Self { unit, q, probs, atoms, depth })
    }

    /// Lattice unit of the table (the law's step times the gcd of its offsets).
    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `E[e^{−qT₀}; T₀ < ∞]`.
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Numerator `E_x[e^{−qT_x} g(X_{T_x}); T_x < ∞]` of the one-step ratio.
    pub fn ratio_numerator(&self, f: &RewardFunction, x: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| if *p > 0.0 { p * f.eval(x + k as f64 * self.unit) } else { 0.0 })
            .sum()
    }

    /// `ρ(x)`; `+∞` where `g(x) = 0`.
    pub fn ratio(&self, f: &RewardFunction, x: f64) -> f64 {
        let hx = f.log_value(x);
        if hx == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(k, p)| p * (f.log_value(x + k as f64 * self.unit) - hx).exp())
            .sum()
    }

    /// `Q_y(x) = E_x[e^{−qτ_y} g(X_{τ_y}); τ_y < ∞]`.
    pub fn threshold_value(&self, f: &RewardFunction, level: f64, x: f64) -> f64 {
        if x >= level {
            return f.eval(x);
        }
        let u = self.unit;
        let mut big_m = ((level - x) / u).ceil().max(1.0) as usize;
        while big_m > 1 && x + (big_m - 1) as f64 * u >= level {
            big_m -= 1;
        }
        while x + big_m as f64 * u < level {
            big_m += 1;
        }
        let kmax = self.probs.len() - 1;
        let inv = 1.0 / (1.0 - self.probs[0]);
        let mut renewal = vec![0.0; big_m];
        renewal[0] = inv;
        for m in 1..big_m {
            let mut s = 0.0;
            for k in 1..=kmax.min(m) {
                s += self.probs[k] * renewal[m - k];
            }
            renewal[m] = s * inv;
        }
        let mut total = 0.0;
        for (m, um) in renewal.iter().enumerate() {
            if *um == 0.0 {
                continue;
            }
            let first = big_m - m;
            if first > kmax {
                continue;
            }
            let mut s = 0.0;
            for k in first..=kmax {
                if self.probs[k] > 0.0 {
                    s += self.probs[k] * f.eval(x + (m + k) as f64 * u);
                }
            }
            total += um * s;
        }
        total
    }

    /// `E_x[e^{−qT_y} g(X_{T_y}); T_y < ∞]` with `T_y` the first passage at a
    /// time `n ≥ 1`.
    pub fn strict_time_value(&self, f: &RewardFunction, level: f64, x: f64) -> f64 {
        if x < level {
            return self.threshold_value(f, level, x);
        }
        let disc = (-self.q).exp();
        self.atoms
            .iter()
            .map(|&(j, p)| p * self.threshold_value(f, level, x + j as f64 * self.unit))
            .sum::<f64>()
            * disc
    }

    /// `E(M)` from an undiscounted table: `E[H; T₀<∞] / P(T₀ = ∞)`.
    pub fn expected_maximum(&self) -> f64 {
        let mass = self.total_mass();
        if mass >= 1.0 - 1e-13 {
            return f64::INFINITY;
        }
        let h: f64 = self.probs.iter().enumerate().map(|(k, p)| k as f64 * self.unit * p).sum();
        h / (1.0 - mass)
    }
}

/// Smaller root `θ ≤ 0` of `log φ(θ) = q`.
fn lower_root(law: &LatticeLaw, q: f64) -> f64 {
    let inside = |t: f64| law.log_mgf(t) <= q;
    let mut lo = -1.0;
    while inside(lo) {
        lo *= 2.0;
        if lo < -1e12 {
            return lo;
        }
    }
    let mut hi = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// Square banded matrix with `kl` sub- and `ku` super-diagonals, factored in
/// place by LU without pivoting (adequate for the diagonally dominant
/// M-matrices built here).
struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn factor(&mut self) -> Result<(), PassageError> {
        for k in 0..self.n {
            let pivot = self.data[self.idx(k, k)];
            if !(pivot.abs() > 1e-300) {
                return Err(PassageError::UnboundedExpectation("singular first-passage system".into()));
            }
            for i in k + 1..=(k + self.kl).min(self.n - 1) {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..=(k + self.ku).min(self.n - 1) {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut s = b[i];
            for j in i.saturating_sub(self.kl)..i {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + self.ku).min(self.n - 1) {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}
