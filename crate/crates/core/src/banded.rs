//! Banded LU factorization with partial pivoting, used for all direct
//! (shifted) solves on generator matrices.

use std::fmt::Debug;
use std::ops::{AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + PartialEq
    + AddAssign
    + SubAssign
    + MulAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Pivots below this multiple of the largest pivot count as singular.
pub const RCOND_FLOOR: f64 = 1e-13;

/// LU factors of a band matrix with lower bandwidth `kl` and upper `ku`;
/// row `i` stores columns `i - kl ..= i + ku + kl` (room for pivoting fill).
#[derive(Clone, Debug)]
pub struct BandLu<T: Scalar> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
    piv: Vec<usize>,
    rcond: f64,
}

impl<T: Scalar> BandLu<T> {
    /// Factors `shift * I + coef * A` (or with `shift` scaled per row by
    /// `diag_scale` when given).
    pub fn factor_shifted(a: &SparseMatrix, shift: T, coef: T) -> Result<Self> {
        let n = a.nrows();
        let (kl, ku) = a.bandwidth();
        let width = 2 * kl + ku + 1;
        let mut data = vec![T::zero(); n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                data[i * width + j + kl - i] += coef * T::from_real(v);
            }
            data[i * width + kl] += shift;
        }
        Self::factor_storage(n, kl, ku, data)
    }

    fn factor_storage(n: usize, kl: usize, ku: usize, mut data: Vec<T>) -> Result<Self> {
        let width = 2 * kl + ku + 1;
        let at = |i: usize, j: usize| i * width + j + kl - i;
        let mut piv = vec![0usize; n];
        let mut max_piv: f64 = 0.0;
        let mut min_piv = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = data[at(k, k)].modulus();
            for i in (k + 1)..=last_row {
                let v = data[at(i, k)].modulus();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            let last_col = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    data.swap(at(k, j), at(p, j));
                }
            }
            let pivot = data[at(k, k)];
            let pm = pivot.modulus();
            max_piv = max_piv.max(pm);
            min_piv = min_piv.min(pm);
            if pm == 0.0 {
                return Err(Error::Singular { rcond: 0.0 });
            }
            for i in (k + 1)..=last_row {
                let l = data[at(i, k)] / pivot;
                if l == T::zero() {
                    continue;
                }
                data[at(i, k)] = l;
                for j in (k + 1)..=last_col {
                    let u = data[at(k, j)];
                    data[at(i, j)] -= l * u;
                }
            }
        }
        let rcond = if n == 0 { 1.0 } else { min_piv / max_piv };
        if rcond < RCOND_FLOOR {
            return Err(Error::Singular { rcond });
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            data,
            piv,
            rcond,
        })
    }

    /// Ratio of smallest to largest pivot modulus (a cheap conditioning
    /// indicator, not a true condition number).
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) -> Result<()> {
        check_len(self.n, b.len())?;
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let at = |i: usize, j: usize| i * w + j + kl - i;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == T::zero() {
                continue;
            }
            for i in (k + 1)..=(k + kl).min(n - 1) {
                let l = self.data[at(i, k)];
                b[i] -= l * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in (k + 1)..=(k + ku + kl).min(n - 1) {
                acc -= self.data[at(k, j)] * b[j];
            }
            b[k] = acc / self.data[at(k, k)];
        }
        Ok(())
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Direct solver for `(lambda - coef A) v = f`, real or complex depending on
/// `lambda`, with an optional symmetric reordering to shrink the band.
#[derive(Clone, Debug)]
pub struct ShiftedSolver {
    lambda: Complex64,
    perm: Option<Vec<usize>>,
    lu: SolverLu,
}

#[derive(Clone, Debug)]
enum SolverLu {
    Real(BandLu<f64>),
    Complex(BandLu<Complex64>),
}

impl ShiftedSolver {
    pub fn new(a: &SparseMatrix, lambda: Complex64, coef: f64, perm: Option<Vec<usize>>) -> Result<Self> {
        let permuted;
        let mat = match &perm {
            Some(p) => {
                permuted = a.permute(p);
                &permuted
            }
            None => a,
        };
        let lu = if lambda.im == 0.0 {
            SolverLu::Real(BandLu::factor_shifted(mat, lambda.re, -coef)?)
        } else {
            SolverLu::Complex(BandLu::factor_shifted(mat, lambda, Complex64::new(-coef, 0.0))?)
        };
        Ok(Self { lambda, perm, lu })
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn rcond(&self) -> f64 {
        match &self.lu {
            SolverLu::Real(l) => l.rcond(),
            SolverLu::Complex(l) => l.rcond(),
        }
    }

    pub fn solve(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let g: Vec<Complex64> = match &self.perm {
            Some(p) => p.iter().map(|&o| f[o]).collect(),
            None => f.to_vec(),
        };
        let x = match &self.lu {
            SolverLu::Complex(lu) => lu.solve(&g)?,
            SolverLu::Real(lu) => {
                let re: Vec<f64> = g.iter().map(|z| z.re).collect();
                let xr = lu.solve(&re)?;
                if g.iter().any(|z| z.im != 0.0) {
                    let im: Vec<f64> = g.iter().map(|z| z.im).collect();
                    let xi = lu.solve(&im)?;
                    xr.into_iter().zip(xi).map(|(a, b)| Complex64::new(a, b)).collect()
                } else {
                    xr.into_iter().map(|a| Complex64::new(a, 0.0)).collect()
                }
            }
        };
        Ok(match &self.perm {
            Some(p) => {
                let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
                for (new, &old) in p.iter().enumerate() {
                    out[old] = x[new];
                }
                out
            }
            None => x,
        })
    }

    pub fn solve_real(&self, f: &[f64]) -> Result<Vec<Complex64>> {
        let c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.solve(&c)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized sparsity pattern,
/// returned as `perm[new] = old`.
pub fn rcm_ordering(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (adj[i].len(), i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}
