//! Derivative-free local search used by the measure-normalization and
//! Federer-density estimators: multi-start Nelder-Mead over a box, with the
//! starts drawn from a seeded low-discrepancy set so runs are reproducible.

use crate::qmc::QuasiPoints;

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` over the box; standard Nelder-Mead with reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2.
fn nelder_mead<F>(f: &F, x0: &[f64], scale: f64, bounds: &[(f64, f64)], max_iters: usize, tol: f64) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for (xi, (lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = xi.clamp(*lo, *hi);
        }
    };
    let mut evals = 0;
    let mut eval = |x: &[f64]| {
        evals += 1;
        f(x)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut base = x0.to_vec();
    clamp(&mut base);
    let v0 = eval(&base);
    simplex.push((base.clone(), v0));
    for i in 0..n {
        let mut x = base.clone();
        let span = bounds[i].1 - bounds[i].0;
        x[i] += scale * span.max(1e-12);
        clamp(&mut x);
        let v = eval(&x);
        simplex.push((x, v));
    }

    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size: f64 = (0..n)
            .map(|i| {
                let lo = simplex.iter().map(|s| s.0[i]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|s| s.0[i]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max);
        if spread.abs() < tol && size < tol {
            return OptimResult { x: simplex[0].0.clone(), value: simplex[0].1, evals, converged: true };
        }

        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|s| s.0[i]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let mut refl: Vec<f64> = (0..n).map(|i| 2.0 * centroid[i] - worst.0[i]).collect();
        clamp(&mut refl);
        let f_refl = eval(&refl);

        if f_refl < simplex[0].1 {
            let mut exp: Vec<f64> = (0..n).map(|i| centroid[i] + 2.0 * (refl[i] - centroid[i])).collect();
            clamp(&mut exp);
            let f_exp = eval(&exp);
            simplex[n] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[n - 1].1 {
            simplex[n] = (refl, f_refl);
        } else {
            let mut con: Vec<f64> = (0..n).map(|i| centroid[i] + 0.5 * (worst.0[i] - centroid[i])).collect();
            clamp(&mut con);
            let f_con = eval(&con);
            if f_con < worst.1 {
                simplex[n] = (con, f_con);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    for i in 0..n {
                        s.0[i] = best[i] + 0.5 * (s.0[i] - best[i]);
                    }
                    s.1 = eval(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    OptimResult { x: simplex[0].0.clone(), value: simplex[0].1, evals, converged: false }
}

/// Minimize over the box from `starts` seeded quasi-random initial points
/// (plus the box center) and return the best local result.
pub fn multi_start_minimize<F>(
    f: &F,
    bounds: &[(f64, f64)],
    starts: usize,
    max_iters: usize,
    seed: u64,
) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = bounds.len();
    if n == 0 {
        return OptimResult { x: vec![], value: f(&[]), evals: 1, converged: true };
    }
    let qp = QuasiPoints::new(n, seed, 0);
    let mut best: Option<OptimResult> = None;
    let mut u = vec![0.0; n];
    for s in 0..starts.max(1) {
        let x0: Vec<f64> = if s == 0 {
            bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
        } else {
            qp.point(s as u64, &mut u);
            bounds.iter().zip(&u).map(|((lo, hi), ui)| lo + ui * (hi - lo)).collect()
        };
        let r = nelder_mead(f, &x0, 0.15, bounds, max_iters, 1e-10);
        if best.as_ref().map_or(true, |b| r.value < b.value) {
            best = Some(r);
        }
    }
    best.unwrap()
}

/// Maximize `f` over the box (negated minimization).
pub fn multi_start_maximize<F>(
    f: &F,
    bounds: &[(f64, f64)],
    starts: usize,
    max_iters: usize,
    seed: u64,
) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let neg = |x: &[f64]| -f(x);
    let mut r = multi_start_minimize(&neg, bounds, starts, max_iters, seed);
    r.value = -r.value;
    r
}

/// The `keep` best local maxima found from the multi-start sweep, sorted
/// best first. Callers re-evaluate these candidates at higher precision, so
/// a noisy objective cannot inflate the supremum.
pub fn multi_start_top<F>(
    f: &F,
    bounds: &[(f64, f64)],
    starts: usize,
    max_iters: usize,
    seed: u64,
    keep: usize,
) -> Vec<OptimResult>
where
    F: Fn(&[f64]) -> f64,
{
    let n = bounds.len();
    if n == 0 {
        return vec![OptimResult { x: vec![], value: f(&[]), evals: 1, converged: true }];
    }
    let neg = |x: &[f64]| -f(x);
    let qp = QuasiPoints::new(n, seed, 0);
    let mut u = vec![0.0; n];
    let mut results: Vec<OptimResult> = Vec::with_capacity(starts.max(1));
    for s in 0..starts.max(1) {
        let x0: Vec<f64> = if s == 0 {
            bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
        } else {
            qp.point(s as u64, &mut u);
            bounds.iter().zip(&u).map(|((lo, hi), ui)| lo + ui * (hi - lo)).collect()
        };
        let mut r = nelder_mead(&neg, &x0, 0.15, bounds, max_iters, 1e-10);
        r.value = -r.value;
        results.push(r);
    }
    results.sort_by(|a, b| b.value.total_cmp(&a.value));
    results.truncate(keep.max(1));
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 0.1).powi(2);
        let r = multi_start_minimize(&f, &[(-1.0, 1.0), (-1.0, 1.0)], 4, 200, 1);
        assert!((r.x[0] - 0.3).abs() < 1e-4);
        assert!((r.x[1] + 0.1).abs() < 1e-4);
    }

    #[test]
    fn escapes_local_minimum_with_restarts() {
        // two wells, global at x = 2 inside the box
        let f = |x: &[f64]| {
            let a = (x[0] + 2.0).powi(2) - 1.0;
            let b = (x[0] - 2.0).powi(2) - 3.0;
            a.min(b)
        };
        let r = multi_start_minimize(&f, &[(-4.0, 4.0)], 16, 200, 2);
        assert!((r.x[0] - 2.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| -x[0];
        let r = multi_start_minimize(&f, &[(0.0, 1.0)], 4, 100, 3);
        assert!(r.x[0] <= 1.0 + 1e-12);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }
}
