//! The per-task frequency mix problem:
//!
//! ```text
//! minimize   sum_i t_i * P_i
//! subject to sum_i t_i * f_i = K,   sum_i t_i = T,   t_i >= 0
//! ```
//!
//! With only two equality rows every basic solution uses at most two levels,
//! and the optimum lies on the lower convex hull of the `(f_i, P_i)` points:
//! the cost of running at average speed `K / T` is `T` times the hull value
//! at `K / T`. [`solve`] walks the hull; [`pair_enumerate`] checks every
//! single level and every pair, and exists to cross-check it.

use thiserror::Error;

use crate::powermodel::ProcessorModel;

/// Candidate times down to `-FEAS_TOL * T` are accepted and clamped to zero.
const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("infeasible: {cycles} Mc below the minimum {min} Mc the window forces at the lowest level")]
    BelowMinimum { cycles: f64, min: f64 },
    #[error("infeasible: {cycles} Mc above the maximum {max} Mc reachable at the highest level")]
    AboveMaximum { cycles: f64, max: f64 },
}

/// One task's LP. Levels are kept sorted by ascending frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLp {
    freqs: Vec<f64>,
    powers: Vec<f64>,
    cycles: f64,
    window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Seconds per level, aligned with [`TaskLp::freqs`].
    pub times: Vec<f64>,
    /// mJ.
    pub objective: f64,
}

impl LpSolution {
    /// Indices of levels with positive time.
    pub fn support(&self) -> Vec<usize> {
        (0..self.times.len()).filter(|&i| self.times[i] > 0.0).collect()
    }
}

impl TaskLp {
    pub fn new(freqs: Vec<f64>, powers: Vec<f64>, cycles: f64, window: f64) -> Result<Self, LpError> {
        let bad = |msg: String| Err(LpError::Parameter(msg));
        if freqs.is_empty() || freqs.len() != powers.len() {
            return bad(format!("{} frequencies for {} powers", freqs.len(), powers.len()));
        }
        if freqs.iter().any(|f| !(*f > 0.0 && f.is_finite())) || powers.iter().any(|p| !p.is_finite()) {
            return bad("frequencies must be positive and powers finite".into());
        }
        if !(window > 0.0 && window.is_finite()) || !(cycles > 0.0 && cycles.is_finite()) {
            return bad(format!("need positive cycles and window, got K={cycles}, T={window}"));
        }
        let mut levels: Vec<(f64, f64)> = freqs.into_iter().zip(powers).collect();
        levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (freqs, powers): (Vec<f64>, Vec<f64>) = levels.into_iter().unzip();

        let min = freqs[0] * window;
        let max = freqs[freqs.len() - 1] * window;
        if cycles < min * (1.0 - 1e-9) {
            return Err(LpError::BelowMinimum { cycles, min });
        }
        if cycles > max * (1.0 + 1e-9) {
            return Err(LpError::AboveMaximum { cycles, max });
        }
        Ok(Self {
            freqs,
            powers,
            cycles,
            window,
        })
    }

    /// LP over the model's discrete levels with powers from the cubic law.
    pub fn from_model(model: &ProcessorModel, cycles: f64, window: f64) -> Result<Self, LpError> {
        let freqs: Vec<f64> = model.freqs().collect();
        let powers = freqs.iter().map(|&f| model.power_at(f)).collect();
        Self::new(freqs, powers, cycles, window)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn cycles(&self) -> f64 {
        self.cycles
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// Average speed `K / T`, clamped into the level range.
    pub fn target_freq(&self) -> f64 {
        (self.cycles / self.window).clamp(self.freqs[0], self.freqs[self.freqs.len() - 1])
    }

    pub fn objective(&self, times: &[f64]) -> f64 {
        times.iter().zip(&self.powers).map(|(t, p)| t * p).sum()
    }

    fn single(&self, i: usize) -> LpSolution {
        let mut times = vec![0.0; self.freqs.len()];
        times[i] = self.window;
        LpSolution {
            objective: self.objective(&times),
            times,
        }
    }

    /// Times on levels `lo < hi` solving both equality rows, or `None` if one
    /// of them is negative beyond tolerance.
    fn split(&self, lo: usize, hi: usize) -> Option<(f64, f64)> {
        let (fa, fb) = (self.freqs[lo], self.freqs[hi]);
        let t_hi = (self.cycles - fa * self.window) / (fb - fa);
        let t_lo = (fb * self.window - self.cycles) / (fb - fa);
        let tol = -FEAS_TOL * self.window;
        (t_hi >= tol && t_lo >= tol).then(|| (t_lo.max(0.0), t_hi.max(0.0)))
    }
}

/// Optimal mix via the lower convex hull of the level points.
pub fn solve(lp: &TaskLp) -> LpSolution {
    let hull = lower_hull(&lp.freqs, &lp.powers);
    let target = lp.target_freq();

    if hull.len() == 1 {
        return lp.single(hull[0]);
    }
    // first hull edge whose right end reaches the target
    let k = (1..hull.len())
        .find(|&k| lp.freqs[hull[k]] >= target)
        .unwrap_or(hull.len() - 1);
    let (lo, hi) = (hull[k - 1], hull[k]);
    match lp.split(lo, hi) {
        Some((t_lo, t_hi)) => {
            let mut times = vec![0.0; lp.freqs.len()];
            times[lo] = t_lo;
            times[hi] = t_hi;
            LpSolution {
                objective: lp.objective(&times),
                times,
            }
        }
        // only reachable when rounding pushed K/T marginally past an end
        None => lp.single(if target <= lp.freqs[lo] { lo } else { hi }),
    }
}

/// Indices of the lower convex hull, ascending by frequency. Among equal
/// frequencies only the cheapest survives; collinear interior points drop.
fn lower_hull(freqs: &[f64], powers: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(freqs.len());
    for i in 0..freqs.len() {
        if let Some(&last) = hull.last() {
            if freqs[last] == freqs[i] {
                // sorted by (freq, power), so the earlier one is cheaper
                continue;
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (freqs[b] - freqs[a]) * (powers[i] - powers[a]) - (powers[b] - powers[a]) * (freqs[i] - freqs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Brute force over every vertex candidate: each level alone (when it fits
/// exactly) and each pair `i < j`. The first candidate in lexicographic
/// `(i, j)` order wins ties.
pub fn pair_enumerate(lp: &TaskLp) -> LpSolution {
    let n = lp.freqs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |times: Vec<f64>| {
        let obj: f64 = times.iter().zip(&lp.powers).map(|(t, p)| t * p).sum();
        let improves = match &best {
            None => true,
            Some((b, _)) => obj < b - 1e-12 * b.abs().max(1.0),
        };
        if improves {
            best = Some((obj, times));
        }
    };

    for i in 0..n {
        if (lp.freqs[i] * lp.window - lp.cycles).abs() <= 1e-9 * lp.cycles {
            let mut t = vec![0.0; n];
            t[i] = lp.window;
            consider(t);
        }
        for j in i + 1..n {
            let (fi, fj) = (lp.freqs[i], lp.freqs[j]);
            if fi == fj {
                continue;
            }
            // Cramer's rule on [1 1; fi fj] [ti tj]' = [T K]'
            let det = fj - fi;
            let ti = (lp.window * fj - lp.cycles) / det;
            let tj = (lp.cycles - lp.window * fi) / det;
            let tol = -FEAS_TOL * lp.window;
            if ti >= tol && tj >= tol {
                let mut t = vec![0.0; n];
                t[i] = ti.max(0.0);
                t[j] = tj.max(0.0);
                consider(t);
            }
        }
    }

    let (objective, times) = best.unwrap_or_else(|| {
        // every level equal in frequency and not an exact fit: closest level
        let mut t = vec![0.0; n];
        t[0] = lp.window;
        (lp.objective(&t), t)
    });
    LpSolution { times, objective }
}

/// Coefficients `(a0, a1, a2)` of the four-level objective after eliminating
/// `t1` and `t2`: `E = a0 + a1 * t3 + a2 * t4`.
pub fn eligibility_coeffs(lp: &TaskLp) -> Result<(f64, f64, f64), LpError> {
    if lp.freqs.len() != 4 {
        return Err(LpError::Parameter(format!("need exactly 4 levels, got {}", lp.freqs.len())));
    }
    let f = &lp.freqs;
    let p = &lp.powers;
    let d = f[1] - f[0];
    if d == 0.0 {
        return Err(LpError::Parameter("f1 and f2 coincide".into()));
    }
    let (k, t) = (lp.cycles, lp.window);
    let a0 = p[0] * (t * f[1] - k) / d + p[1] * (k - t * f[0]) / d;
    let a1 = p[2] + p[0] * (f[2] - f[1]) / d - p[1] * (f[2] - f[0]) / d;
    let a2 = p[3] + p[0] * (f[3] - f[1]) / d - p[1] * (f[3] - f[0]) / d;
    Ok((a0, a1, a2))
}

/// `(t1, t2)` induced by a choice of `(t3, t4)` in the four-level problem.
pub fn eliminated_times(lp: &TaskLp, t3: f64, t4: f64) -> Result<(f64, f64), LpError> {
    if lp.freqs.len() != 4 {
        return Err(LpError::Parameter(format!("need exactly 4 levels, got {}", lp.freqs.len())));
    }
    let f = &lp.freqs;
    let d = f[1] - f[0];
    if d == 0.0 {
        return Err(LpError::Parameter("f1 and f2 coincide".into()));
    }
    let (k, t) = (lp.cycles, lp.window);
    let t1 = (t * f[1] - k) / d - t3 * (f[1] - f[2]) / d - t4 * (f[1] - f[3]) / d;
    let t2 = (k - t * f[0]) / d - t3 * (f[2] - f[0]) / d - t4 * (f[3] - f[0]) / d;
    Ok((t1, t2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transmeta_lp(cycles: f64, window: f64) -> TaskLp {
        TaskLp::from_model(&ProcessorModel::preset("transmeta_crusoe").unwrap(), cycles, window).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn endpoints_are_unique_points() {
        let lp = transmeta_lp(6670.0, 10.0);
        let s = solve(&lp);
        assert_eq!(s.support(), vec![4]);
        assert!(rel(s.times[4], 10.0) < 1e-12);

        let lp = transmeta_lp(3000.0, 10.0);
        let s = solve(&lp);
        assert_eq!(s.support(), vec![0]);
        assert!(rel(s.times[0], 10.0) < 1e-12);
    }

    #[test]
    fn worked_example() {
        let lp = transmeta_lp(4002.0, 10.0);
        let s = solve(&lp);
        let o = pair_enumerate(&lp);
        // t_533 = (4002 - 4000) / 133
        assert_eq!(s.support(), vec![1, 2]);
        assert!(rel(s.times[2], 2.0 / 133.0) < 1e-9);
        assert!(rel(s.times[1], 10.0 - 2.0 / 133.0) < 1e-9);
        assert!(rel(s.objective, 12486.0) < 1e-4, "{}", s.objective);
        assert!(rel(s.objective, o.objective) < 1e-12);
        assert_eq!(s.support(), o.support());
    }

    #[test]
    fn infeasible_sides_named() {
        let m = ProcessorModel::preset("transmeta_crusoe").unwrap();
        assert!(matches!(
            TaskLp::from_model(&m, 2000.0, 10.0),
            Err(LpError::BelowMinimum { .. })
        ));
        assert!(matches!(
            TaskLp::from_model(&m, 7000.0, 10.0),
            Err(LpError::AboveMaximum { .. })
        ));
        assert!(TaskLp::new(vec![1.0], vec![1.0, 2.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn two_levels_reduce_to_max_min_split() {
        let lp = TaskLp::new(vec![300.0, 667.0], vec![528.24, 5761.2], 4002.0, 10.0).unwrap();
        let s = pair_enumerate(&lp);
        assert!(rel(s.times[1], (4002.0 - 3000.0) / 367.0) < 1e-12);
        assert!(rel(s.times[0], (6670.0 - 4002.0) / 367.0) < 1e-12);
        assert!(rel(solve(&lp).objective, s.objective) < 1e-12);
    }

    #[test]
    fn single_level_exact_fit() {
        let lp = transmeta_lp(5330.0, 10.0);
        let s = pair_enumerate(&lp);
        assert_eq!(s.support(), vec![2]);
        assert_eq!(solve(&lp).support(), vec![2]);
    }

    #[test]
    fn hull_skips_points_above_it() {
        // the 200 MHz level is more expensive than mixing 100 and 300
        let lp = TaskLp::new(vec![100.0, 200.0, 300.0], vec![1.0, 10.0, 3.0], 2000.0, 10.0).unwrap();
        let s = solve(&lp);
        assert_eq!(s.support(), vec![0, 2]);
        assert!(rel(s.objective, 20.0) < 1e-12);
        assert!(rel(pair_enumerate(&lp).objective, 20.0) < 1e-12);
    }

    #[test]
    fn input_order_is_canonicalized() {
        let a = TaskLp::new(vec![300.0, 400.0, 533.0], vec![528.0, 1246.0, 2942.0], 4002.0, 10.0).unwrap();
        let b = TaskLp::new(vec![533.0, 300.0, 400.0], vec![2942.0, 528.0, 1246.0], 4002.0, 10.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eligibility_coeffs_match_direct_objective() {
        let fr = vec![300.0, 400.0, 533.0, 667.0];
        let pw: Vec<f64> = fr.iter().map(|f: &f64| 1.94e-5 * f.powi(3) + 4.44).collect();
        let lp = TaskLp::new(fr.clone(), pw.clone(), 4002.0, 10.0).unwrap();
        let (a0, a1, a2) = eligibility_coeffs(&lp).unwrap();

        // at the origin the linear form is the (f1, f2) two-level solution
        let low = TaskLp::new(fr.clone(), pw.clone(), 3500.0, 10.0).unwrap();
        let two = TaskLp::new(fr[..2].to_vec(), pw[..2].to_vec(), 3500.0, 10.0).unwrap();
        assert!(rel(eligibility_coeffs(&low).unwrap().0, pair_enumerate(&two).objective) < 1e-12);

        for &(t3, t4) in &[(0.001, 0.0), (0.0, 0.001), (0.002, 0.003), (0.0, 0.0)] {
            let (t1, t2) = eliminated_times(&lp, t3, t4).unwrap();
            let direct = lp.objective(&[t1, t2, t3, t4]);
            assert!(rel(a0 + a1 * t3 + a2 * t4, direct) < 1e-9);
            assert!(rel(t1 + t2 + t3 + t4, 10.0) < 1e-12);
            assert!(rel(300.0 * t1 + 400.0 * t2 + 533.0 * t3 + 667.0 * t4, 4002.0) < 1e-12);
        }
    }

    #[test]
    fn eligibility_coeffs_errors() {
        let lp = transmeta_lp(4002.0, 10.0);
        assert!(matches!(eligibility_coeffs(&lp), Err(LpError::Parameter(_))));
        let degenerate = TaskLp::new(vec![300.0, 300.0, 400.0, 500.0], vec![1.0, 1.0, 2.0, 3.0], 3500.0, 10.0).unwrap();
        assert!(matches!(eligibility_coeffs(&degenerate), Err(LpError::Parameter(_))));
    }
}
