//! Small fitting utilities: log-log slopes and the smallest certified
//! constant pair for inequalities of the form `L <= C a + D b`.

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares slope of `log y` against `log x`. Returns `None` when fewer
/// than two points have positive finite values.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// One constraint `lhs <= C * a + D * b` with `a, b >= 0`.
#[derive(Clone, Copy, Debug)]
pub struct PairConstraint {
    pub lhs: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct ConstantPair {
    pub c: f64,
    pub d: f64,
}

/// Smallest `C + D` (with `C, D >= 0`) satisfying every constraint, rounded
/// up by a relative `1e-12` so the returned pair certifies all of them.
pub fn min_constant_pair(cons: &[PairConstraint]) -> Result<ConstantPair> {
    let active: Vec<&PairConstraint> = cons.iter().filter(|c| c.lhs > 0.0).collect();
    if active.is_empty() {
        return Ok(ConstantPair { c: 0.0, d: 0.0 });
    }
    let mut c_lo: f64 = 0.0;
    let mut c_hi: f64 = 0.0;
    for k in &active {
        if k.a <= 0.0 && k.b <= 0.0 {
            return Err(invalid("constraints", "positive left side with vanishing coefficients"));
        }
        if k.a > 0.0 {
            c_hi = c_hi.max(k.lhs / k.a);
            if k.b <= 0.0 {
                c_lo = c_lo.max(k.lhs / k.a);
            }
        }
    }
    let d_of = |c: f64| -> f64 {
        active
            .iter()
            .map(|k| {
                let r = k.lhs - c * k.a;
                if r <= 0.0 {
                    0.0
                } else if k.b > 0.0 {
                    r / k.b
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    };
    let objective = |c: f64| c + d_of(c);
    let (mut lo, mut hi) = (c_lo, c_hi.max(c_lo));
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if objective(m1) <= objective(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mut best_c = 0.5 * (lo + hi);
    for cand in [c_lo, c_hi] {
        if objective(cand) < objective(best_c) {
            best_c = cand;
        }
    }
    let slack = 1.0 + 1e-12;
    let c = best_c * slack;
    let d = d_of(best_c) * slack;
    Ok(ConstantPair { c, d })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = logspace(1e-3, 1e-1, 9);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.5)).collect();
        let f = loglog_slope(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_data_is_undefined() {
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 0.0]).is_none());
    }

    #[test]
    fn pair_matches_brute_force() {
        // lhs = 1 at eps in a grid; a = 1/eps, b = eps: the optimum of C + D
        // is attained where the two families balance.
        let eps = logspace(1e-2, 0.5, 25);
        let cons: Vec<PairConstraint> = eps
            .iter()
            .map(|&e| PairConstraint {
                lhs: 1.0,
                a: 1.0 / e,
                b: e,
            })
            .collect();
        let p = min_constant_pair(&cons).unwrap();
        for k in &cons {
            assert!(p.c * k.a + p.d * k.b >= k.lhs);
        }
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let c = 0.5 * i as f64 / 2000.0;
            let d = cons.iter().map(|k| ((k.lhs - c * k.a) / k.b).max(0.0)).fold(0.0, f64::max);
            best = best.min(c + d);
        }
        assert!(p.c + p.d <= best + 1e-9);
    }

    #[test]
    fn empty_and_infeasible() {
        assert_eq!(min_constant_pair(&[]).unwrap(), ConstantPair { c: 0.0, d: 0.0 });
        let bad = PairConstraint {
            lhs: 1.0,
            a: 0.0,
            b: 0.0,
        };
        assert!(min_constant_pair(&[bad]).is_err());
    }
}
