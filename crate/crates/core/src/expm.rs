//! Matrix exponentials of discrete generators.
//!
//! Small matrices use nalgebra's scaling-and-squaring Padé exponential.
//! Larger ones use uniformization: with `q >= max |G_ii|`,
//! `exp(tG) = sum_k Pois(k; qt) P^k` where `P = I + G/q`. For a Markov
//! generator `P` is a stochastic matrix, so every term is nonnegative.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_len, invalid, Result};
use crate::sparse::SparseMatrix;

/// Node counts up to this size use the dense Padé exponential.
pub const DENSE_LIMIT: usize = 512;

/// Largest `q * tau` per uniformization step; keeps `e^{-q tau}` well above
/// underflow.
const MAX_STEP_RATE: f64 = 40.0;

pub fn dense_exp(g: &SparseMatrix, t: f64) -> DMatrix<f64> {
    (g.to_dense() * t).exp()
}

/// `exp(tG) v` by uniformization.
pub fn uniformized_action(g: &SparseMatrix, v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    check_len(g.ncols(), v.len())?;
    let q = g.max_exit_rate();
    if q == 0.0 || t == 0.0 {
        return Ok(v.to_vec());
    }
    let steps = (q * t / MAX_STEP_RATE).ceil().max(1.0) as usize;
    let tau = t / steps as f64;
    let mut x = v.to_vec();
    for _ in 0..steps {
        x = uniformized_step(g, &x, q, tau);
    }
    Ok(x)
}

fn uniformized_step(g: &SparseMatrix, v: &[f64], q: f64, tau: f64) -> Vec<f64> {
    let rate = q * tau;
    let mut weight = (-rate).exp();
    let mut mass = weight;
    let mut term = v.to_vec();
    let mut out: Vec<f64> = term.iter().map(|x| weight * x).collect();
    let mut gt = vec![0.0; v.len()];
    let mut k = 0usize;
    loop {
        k += 1;
        // term <- P term = term + G term / q
        g.matvec_into(&term, &mut gt);
        for (a, b) in term.iter_mut().zip(&gt) {
            *a += b / q;
        }
        weight *= rate / k as f64;
        mass += weight;
        for (o, a) in out.iter_mut().zip(&term) {
            *o += weight * a;
        }
        if (k as f64 > rate && 1.0 - mass < 1e-17) || weight < 1e-300 || k > 10_000 {
            break;
        }
    }
    out
}

/// `exp(tG) v`, dense for small generators and uniformized otherwise.
pub fn expm_action(g: &SparseMatrix, v: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    check_len(g.ncols(), v.len())?;
    if g.nrows() <= DENSE_LIMIT {
        let e = dense_exp(g, t);
        Ok((e * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec())
    } else {
        uniformized_action(g, v, t)
    }
}

/// `exp(t_k G) v` for increasing times, stepping from one time to the next.
pub fn expm_path(g: &SparseMatrix, v: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    let mut x = v.to_vec();
    for &t in times {
        check_time(t)?;
        if t < prev {
            return Err(invalid("times", "times must be sorted"));
        }
        x = if g.nrows() <= DENSE_LIMIT {
            expm_action(g, &x, t - prev)?
        } else {
            uniformized_action(g, &x, t - prev)?
        };
        out.push(x.clone());
        prev = t;
    }
    Ok(out)
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(invalid("t", format!("time must be finite and nonnegative, got {t}")))
    }
}

/// Outcome of a positivity/contraction check of `exp(tG)`.
#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub t: f64,
    pub method: &'static str,
    /// `||exp(tG)||_inf`, or the row-sum bound of the certificate.
    pub inf_norm: f64,
    /// Smallest entry of `exp(tG)`, or of `P = I + G/q` for the certificate.
    pub min_entry: f64,
    pub ok: bool,
}

/// Checks `||exp(tG)||_inf <= 1 + tol` and `exp(tG) >= -neg_tol` entrywise.
///
/// Up to [`DENSE_LIMIT`] nodes the exponential is formed explicitly. Above
/// that the uniformization certificate is used: if `P = I + G/q` is
/// entrywise nonnegative with unit row sums then every partial sum of the
/// Poisson series is nonnegative with row sums at most one. The row sums of
/// `exp(tG)` are then also computed through its action on the constant vector.
pub fn contraction_check(g: &SparseMatrix, t: f64, tol: f64, neg_tol: f64) -> Result<ContractionReport> {
    check_time(t)?;
    if g.nrows() <= DENSE_LIMIT {
        let e = dense_exp(g, t);
        let inf_norm = e.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let min_entry = e.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok(ContractionReport {
            t,
            method: "dense-pade",
            inf_norm,
            min_entry,
            ok: inf_norm <= 1.0 + tol && min_entry >= -neg_tol,
        });
    }
    let q = g.max_exit_rate().max(f64::MIN_POSITIVE);
    let mut min_entry = f64::INFINITY;
    let mut max_row = 0.0f64;
    for i in 0..g.nrows() {
        let mut row = 1.0;
        let mut has_diag = false;
        for (j, v) in g.row(i) {
            let p = if i == j {
                has_diag = true;
                1.0 + v / q
            } else {
                v / q
            };
            min_entry = min_entry.min(p);
            row += v / q;
        }
        if !has_diag {
            min_entry = min_entry.min(1.0);
        }
        max_row = max_row.max(row.abs());
    }
    let ones = vec![1.0; g.nrows()];
    let e1 = uniformized_action(g, &ones, t)?;
    let action_max = e1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let inf_norm = max_row.max(action_max);
    Ok(ContractionReport {
        t,
        method: "uniformization-certificate",
        inf_norm,
        min_entry,
        ok: inf_norm <= 1.0 + tol && min_entry >= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn birth_death(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            let w = x * (1.0 - x) * ((n - 1) * (n - 1)) as f64 / 2.0;
            if w > 0.0 {
                t.push((i, i - 1, w));
                t.push((i, i + 1, w));
                t.push((i, i, -2.0 * w));
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn uniformization_matches_pade() {
        let g = birth_death(30);
        let v: Vec<f64> = (0..30).map(|i| ((i * 7) % 5) as f64).collect();
        for t in [0.01, 0.3, 2.0] {
            let a = uniformized_action(&g, &v, t).unwrap();
            let b = expm_action(&g, &v, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-11, "t={t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn path_composes() {
        let g = birth_death(20);
        let v: Vec<f64> = (0..20).map(|i| (i as f64).sqrt()).collect();
        let p = expm_path(&g, &v, &[0.1, 0.5]).unwrap();
        let d = expm_action(&g, &v, 0.5).unwrap();
        for (x, y) in p[1].iter().zip(&d) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn contraction_both_methods() {
        let small = contraction_check(&birth_death(40), 1.0, 1e-10, 1e-12).unwrap();
        assert!(small.ok, "{small:?}");
        let big = contraction_check(&birth_death(600), 1.0, 1e-10, 1e-12).unwrap();
        assert_eq!(big.method, "uniformization-certificate");
        assert!(big.ok, "{big:?}");
    }

    #[test]
    fn negative_time_rejected() {
        assert!(uniformized_action(&birth_death(5), &[0.0; 5], -1.0).is_err());
    }
}
