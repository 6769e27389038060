//! Compressed sparse row matrices for discrete generators.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{check_len, invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Summary of the Markov-generator sign and row-sum structure.
#[derive(Clone, Debug, Serialize)]
pub struct MarkovReport {
    pub rows: usize,
    pub max_abs_row_sum: f64,
    pub min_offdiag: f64,
    pub max_diag: f64,
    pub ok: bool,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of: Vec<usize> = Vec::with_capacity(trip.len());
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                rows_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((c, v), r) in indices.into_iter().zip(values).zip(rows_of) {
            if v != 0.0 {
                keep_idx.push(c);
                keep_val.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices: keep_idx,
            values: keep_val,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in self.indptr[i]..self.indptr[i + 1] {
                    acc += x[self.indices[k]] * self.values[k];
                }
                acc
            })
            .collect()
    }

    /// Multiplies row `i` by `w[i]`.
    pub fn scale_rows(&self, w: &[f64]) -> Result<Self> {
        check_len(self.nrows, w.len())?;
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in out.indptr[i]..out.indptr[i + 1] {
                out.values[k] *= w[i];
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a (x) I + I (x) b` with the first factor's index varying slowest.
    pub fn kron_sum(a: &Self, b: &Self) -> Self {
        assert!(a.nrows == a.ncols && b.nrows == b.ncols, "kron_sum needs square factors");
        let (na, nb) = (a.nrows, b.nrows);
        let mut trip = Vec::with_capacity(a.nnz() * nb + b.nnz() * na);
        for i in 0..na {
            for (j, v) in a.row(i) {
                for k in 0..nb {
                    trip.push((i * nb + k, j * nb + k, v));
                }
            }
        }
        for i in 0..na {
            for k in 0..nb {
                for (l, v) in b.row(k) {
                    trip.push((i * nb + k, i * nb + l, v));
                }
            }
        }
        Self::from_triplets(na * nb, na * nb, trip)
    }

    /// Restriction to the rows and columns listed in `keep` (in that order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.ncols];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let mut trip = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            for (c, v) in self.row(old_r) {
                if pos[c] != usize::MAX {
                    trip.push((new_r, pos[c], v));
                }
            }
        }
        Self::from_triplets(keep.len(), keep.len(), trip)
    }

    /// Symmetric permutation `P A P^T` with `perm[new] = old`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        self.principal_submatrix(perm)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Lower and upper bandwidths.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut lo = 0;
        let mut up = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    lo = lo.max(i - j);
                } else {
                    up = up.max(j - i);
                }
            }
        }
        (lo, up)
    }

    pub fn markov_report(&self, tol: f64) -> MarkovReport {
        let mut max_abs_row_sum: f64 = 0.0;
        let mut min_offdiag = f64::INFINITY;
        let mut max_diag = f64::NEG_INFINITY;
        for i in 0..self.nrows {
            let mut s = 0.0;
            let mut scale: f64 = 0.0;
            let mut d = 0.0;
            for (j, v) in self.row(i) {
                s += v;
                scale = scale.max(v.abs());
                if i == j {
                    d = v;
                } else {
                    min_offdiag = min_offdiag.min(v);
                }
            }
            max_diag = max_diag.max(d);
            max_abs_row_sum = max_abs_row_sum.max(s.abs() / scale.max(1.0));
        }
        if min_offdiag == f64::INFINITY {
            min_offdiag = 0.0;
        }
        MarkovReport {
            rows: self.nrows,
            max_abs_row_sum,
            min_offdiag,
            max_diag,
            ok: max_abs_row_sum <= tol && min_offdiag >= 0.0 && max_diag <= 0.0,
        }
    }

    /// Largest exit rate `max_i |G_ii|`.
    pub fn max_exit_rate(&self) -> f64 {
        self.diag().iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Coordinate text format, one `row col value` line per nonzero.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i} {j} {v:e}");
        }
        s
    }

    pub fn from_coo_text(nrows: usize, ncols: usize, text: &str) -> Result<Self> {
        let mut trip = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || invalid("coo", format!("malformed line {}: {line}", ln + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let r: usize = parts[0].parse().map_err(|_| bad())?;
            let c: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            if r >= nrows || c >= ncols {
                return Err(bad());
            }
            trip.push((r, c, v));
        }
        Ok(Self::from_triplets(nrows, ncols, trip))
    }
}
