//! Tensor-product (prism) operators, multiplicative perturbations `m A` and
//! their approximate resolvents built from frozen-coefficient solves.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::banded::ShiftedSolver;
use crate::discretize::assemble_simplex_generator;
use crate::error::{check_len, invalid, Error, Result};
use crate::multiplier::Multiplier;
use crate::simplex::{build_grid, SimplexGrid};
use crate::sparse::SparseMatrix;
use crate::wf1d::{discretize_1d, sup_norm_complex, Kind1D, Operator1D};

/// One factor of a prism.
#[derive(Clone, Debug)]
pub enum FactorGrid {
    Simplex(Arc<SimplexGrid>),
    Interval(Vec<f64>),
}

impl FactorGrid {
    pub fn len(&self) -> usize {
        match self {
            Self::Simplex(g) => g.len(),
            Self::Interval(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Simplex(g) => g.dim(),
            Self::Interval(_) => 1,
        }
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        match self {
            Self::Simplex(g) => g.coords(i),
            Self::Interval(v) => vec![v[i]],
        }
    }
}

/// Cartesian product of two factor grids; node `(a, b)` has index
/// `a * len(right) + b`.
#[derive(Clone, Debug)]
pub struct PrismGrid {
    left: FactorGrid,
    right: FactorGrid,
}

impl PrismGrid {
    pub fn new(left: FactorGrid, right: FactorGrid) -> Self {
        Self { left, right }
    }

    pub fn left(&self) -> &FactorGrid {
        &self.left
    }

    pub fn right(&self) -> &FactorGrid {
        &self.right
    }

    pub fn len(&self) -> usize {
        self.left.len() * self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.left.dim() + self.right.dim()
    }

    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.right.len(), i % self.right.len())
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let (a, b) = self.split(i);
        let mut c = self.left.coords(a);
        c.extend(self.right.coords(b));
        c
    }

    pub fn all_coords(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.coords(i))).collect()
    }
}

/// `W (G1 (x) I + I (x) G2)` on a prism.
#[derive(Clone, Debug)]
pub struct TensorGenerator {
    prism: PrismGrid,
    weights: Option<Vec<f64>>,
    matrix: SparseMatrix,
}

pub fn assemble_tensor_generator(
    prism: PrismGrid,
    g1: &SparseMatrix,
    g2: &SparseMatrix,
    multiplier: Option<&Multiplier>,
) -> Result<TensorGenerator> {
    check_len(prism.left.len(), g1.nrows())?;
    check_len(prism.right.len(), g2.nrows())?;
    for (name, g) in [("g1", g1), ("g2", g2)] {
        let r = g.markov_report(1e-12);
        if !r.ok {
            return Err(invalid(name, format!("factor is not a Markov generator: {r:?}")));
        }
    }
    let base = SparseMatrix::kron_sum(g1, g2);
    let (matrix, weights) = match multiplier {
        Some(m) => {
            let pts = prism.all_coords();
            let (w, _) = m.sample_checked(pts.iter().map(|p| p.as_slice()))?;
            (base.scale_rows(&w)?, Some(w))
        }
        None => (base, None),
    };
    Ok(TensorGenerator {
        prism,
        weights,
        matrix,
    })
}

impl TensorGenerator {
    pub fn prism(&self) -> &PrismGrid {
        &self.prism
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.prism.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prism.is_empty()
    }

    /// Sup norm of `sqrt(a(c)) |D_c u|` for prism coordinate `c`, with the
    /// factor's degenerate weight `a` at edge midpoints: `x(1-x)` on simplex
    /// factors and `x` on Neumann intervals (`x(1-x)` if `unit_interval`).
    pub fn weighted_gradient_norm(&self, u: &[Complex64], coord: usize, unit_interval: bool) -> f64 {
        let (nl, nr) = (self.prism.left.len(), self.prism.right.len());
        let ld = self.prism.left.dim();
        let mut best: f64 = 0.0;
        let (factor, local) = if coord < ld { (&self.prism.left, coord) } else { (&self.prism.right, coord - ld) };
        let edges: Vec<(usize, usize, f64, f64)> = match factor {
            FactorGrid::Simplex(g) => {
                let mut e = vec![0; g.dim()];
                e[local] = 1;
                let n = f64::from(g.resolution());
                (0..g.len())
                    .filter_map(|a| {
                        let k = g.lattice(a);
                        g.neighbor(k, &e).map(|b| {
                            let mid = (f64::from(k[local]) + 0.5) / n;
                            (a, b, mid * (1.0 - mid), 1.0 / n)
                        })
                    })
                    .collect()
            }
            FactorGrid::Interval(v) => (0..v.len() - 1)
                .map(|a| {
                    let mid = 0.5 * (v[a] + v[a + 1]);
                    let w = if unit_interval { mid * (1.0 - mid) } else { mid };
                    (a, a + 1, w, v[a + 1] - v[a])
                })
                .collect(),
        };
        let left_factor = coord < ld;
        for &(a, b, w, h) in &edges {
            let sw = w.sqrt() / h;
            if left_factor {
                for r in 0..nr {
                    best = best.max(sw * (u[b * nr + r] - u[a * nr + r]).norm());
                }
            } else {
                for l in 0..nl {
                    best = best.max(sw * (u[l * nr + b] - u[l * nr + a]).norm());
                }
            }
        }
        best
    }
}

/// `A_2 = m1(x) x(1-x) d_x^2 + m2(y) y d_y^2` on `[0,1] x [0,b]`, Neumann at
/// `y = b`.
pub fn a2_generator(nx: usize, ny: usize, b: f64, m1: &Multiplier, m2: &Multiplier) -> Result<(TensorGenerator, Operator1D, Operator1D)> {
    let fx = discretize_1d(Kind1D::XOneMinusX, m1, nx)?;
    let fy = discretize_1d(Kind1D::XNeumann { b }, m2, ny)?;
    let prism = PrismGrid::new(
        FactorGrid::Interval(fx.nodes().to_vec()),
        FactorGrid::Interval(fy.nodes().to_vec()),
    );
    let g = assemble_tensor_generator(prism, fx.matrix(), fy.matrix(), None)?;
    Ok((g, fx, fy))
}

/// Which of the two prism operators conjugate to the simplex operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PrismKind {
    /// `S_d x [0, 1-delta]`, weight `1/(1 - x_{d+1})` on the simplex part.
    First,
    /// `[0, 1-delta] x S_d`, weight `1/(1 - x_1)` on the simplex part.
    Second,
}

/// Discretizes `A_{d+1,1}` or `A_{d+1,2}` in the Dorroh form
/// `(1/(1-s)) (A_d + (1/2) s (1-s)^2 d_s^2)` with a Neumann condition at
/// `s = 1 - delta`.
pub fn chart_prism_generator(kind: PrismKind, d: usize, n_simplex: u32, n_interval: usize, delta: f64) -> Result<TensorGenerator> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid("delta", format!("must lie in (0, 1/2), got {delta}")));
    }
    let sg = Arc::new(build_grid(d, n_simplex)?);
    let gs = assemble_simplex_generator(Arc::clone(&sg))?;
    let b = 1.0 - delta;
    let tail = discretize_1d(
        Kind1D::XNeumann { b },
        &Multiplier::custom("(1-s)^2/2", delta * delta / 2.0, |s| 0.5 * (1.0 - s[0]).powi(2)),
        n_interval,
    )?;
    let interval = FactorGrid::Interval(tail.nodes().to_vec());
    let (prism, g1, g2, coord) = match kind {
        PrismKind::First => (PrismGrid::new(FactorGrid::Simplex(sg), interval), gs.matrix(), tail.matrix(), d),
        PrismKind::Second => (PrismGrid::new(interval, FactorGrid::Simplex(sg)), tail.matrix(), gs.matrix(), 0),
    };
    let w = Multiplier::custom("1/(1-s)", 1.0, move |x| 1.0 / (1.0 - x[coord]));
    assemble_tensor_generator(prism, g1, g2, Some(&w))
}

/// Squared partition of unity on `[0, len]`: windows centred at `i len / n`
/// (`i = 0..=n`) with half-width `len / n`.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionOfUnity1D {
    n: usize,
    len: f64,
    kappa: f64,
}

pub fn build_partition_1d(n: usize, len: f64, kappa: f64) -> Result<PartitionOfUnity1D> {
    if n < 2 {
        return Err(invalid("n", "need at least two windows"));
    }
    if !(len > 0.0) || !(kappa > 0.0) {
        return Err(invalid("len", "length and sharpness must be positive"));
    }
    Ok(PartitionOfUnity1D { n, len, kappa })
}

impl PartitionOfUnity1D {
    pub fn windows(&self) -> usize {
        self.n + 1
    }

    pub fn center(&self, i: usize) -> f64 {
        i as f64 * self.len / self.n as f64
    }

    /// Closed support `[c - len/n, c + len/n]` of window `i`.
    pub fn support(&self, i: usize) -> (f64, f64) {
        let w = self.len / self.n as f64;
        (self.center(i) - w, self.center(i) + w)
    }

    fn raw(&self, i: usize, y: f64) -> (f64, f64) {
        let w = self.len / self.n as f64;
        let s = (y - self.center(i)) / w;
        if s.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 - s * s;
        let g = (-self.kappa / q).exp();
        (g, g * (-2.0 * self.kappa * s / (q * q)) / w)
    }

    /// `(phi_i(y), phi_i'(y))`.
    pub fn eval(&self, i: usize, y: f64) -> (f64, f64) {
        let (gi, dgi) = self.raw(i, y);
        if gi == 0.0 {
            return (0.0, 0.0);
        }
        let (mut s2, mut sd) = (0.0, 0.0);
        for j in self.active(y) {
            let (g, dg) = self.raw(j, y);
            s2 += g * g;
            sd += g * dg;
        }
        let s = s2.sqrt();
        (gi / s, dgi / s - gi * sd / (s2 * s))
    }

    /// Indices of windows whose open support contains `y`.
    pub fn active(&self, y: f64) -> Vec<usize> {
        let pos = y / self.len * self.n as f64;
        let lo = (pos.floor() as i64 - 1).max(0) as usize;
        let hi = ((pos.ceil() as i64 + 1).max(0) as usize).min(self.n);
        (lo..=hi).filter(|&i| self.raw(i, y).0 > 0.0).collect()
    }
}

/// A localizing window: its partition function at every node and the value
/// at which the multiplier is frozen.
#[derive(Clone, Debug)]
pub struct Window {
    pub phi: Vec<f64>,
    pub frozen: f64,
}

/// `S(lambda) u = sum_i phi_i (lambda - m_i A)^{-1} (phi_i u)` for a base
/// generator `A`, node multiplier values `m` and windows with frozen `m_i`.
pub struct ApproxResolvent {
    a: SparseMatrix,
    m_vals: Vec<f64>,
    windows: Vec<Window>,
    lambda: Complex64,
    solvers: LocalSolvers,
    ma: SparseMatrix,
}

enum LocalSolvers {
    /// Whole-grid solves shared between windows with the same frozen value.
    Global(HashMap<u64, ShiftedSolver>),
    /// One patch per window: the node set and its solver.
    Patches(Vec<(Vec<usize>, ShiftedSolver)>),
}

/// The three defect components and the directly computed residual
/// `(lambda - m A) S u - u`.
#[derive(Clone, Debug)]
pub struct DefectParts {
    pub c1: Vec<Complex64>,
    pub c2: Vec<Complex64>,
    pub c3: Vec<Complex64>,
    pub residual: Vec<Complex64>,
}

impl DefectParts {
    /// `max |c1 + c2 + c3 - residual| / max(|residual|, tiny)`.
    pub fn consistency(&self) -> f64 {
        let diff = (0..self.residual.len())
            .map(|i| (self.c1[i] + self.c2[i] + self.c3[i] - self.residual[i]).norm())
            .fold(0.0, f64::max);
        diff / sup_norm_complex(&self.residual).max(f64::MIN_POSITIVE)
    }
}

impl ApproxResolvent {
    pub fn new(a: SparseMatrix, m_vals: Vec<f64>, windows: Vec<Window>, lambda: Complex64, perm: Option<Vec<usize>>) -> Result<Self> {
        check_len(a.nrows(), m_vals.len())?;
        let mut frozen: Vec<f64> = windows.iter().map(|w| w.frozen).collect();
        frozen.sort_by(f64::total_cmp);
        frozen.dedup();
        let solvers: Result<Vec<(u64, ShiftedSolver)>> = frozen
            .par_iter()
            .map(|&c| Ok((c.to_bits(), ShiftedSolver::new(&a, lambda, c, perm.clone())?)))
            .collect();
        let ma = a.scale_rows(&m_vals)?;
        Ok(Self {
            a,
            m_vals,
            windows,
            lambda,
            solvers: LocalSolvers::Global(solvers?.into_iter().collect()),
            ma,
        })
    }

    /// Like [`ApproxResolvent::new`], but each window is solved on its
    /// support grown by `halo` rings of the stencil graph, with the links
    /// leaving the patch dropped (the patch generator stays Markov). Rows on
    /// the support are those of `A`, so the defect decomposition is still
    /// exact; `halo >= 1` is required for that.
    pub fn localized(a: SparseMatrix, m_vals: Vec<f64>, windows: Vec<Window>, lambda: Complex64, halo: usize) -> Result<Self> {
        check_len(a.nrows(), m_vals.len())?;
        if halo == 0 {
            return Err(invalid("halo", "need at least one ring around each window"));
        }
        let patches: Result<Vec<(Vec<usize>, ShiftedSolver)>> = windows
            .par_iter()
            .map(|w| {
                check_len(a.nrows(), w.phi.len())?;
                let nodes = grow_support(&a, &w.phi, halo);
                let local = censored_submatrix(&a, &nodes);
                let perm = crate::banded::rcm_ordering(&local);
                Ok((nodes, ShiftedSolver::new(&local, lambda, w.frozen, Some(perm))?))
            })
            .collect();
        let ma = a.scale_rows(&m_vals)?;
        Ok(Self {
            a,
            m_vals,
            windows,
            lambda,
            solvers: LocalSolvers::Patches(patches?),
            ma,
        })
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    /// The perturbed generator `m A`.
    pub fn perturbed(&self) -> &SparseMatrix {
        &self.ma
    }

    fn local_solves(&self, u: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
        check_len(self.a.nrows(), u.len())?;
        match &self.solvers {
            LocalSolvers::Global(map) => self
                .windows
                .par_iter()
                .map(|w| {
                    let f: Vec<Complex64> = u.iter().zip(&w.phi).map(|(x, p)| x * p).collect();
                    map[&w.frozen.to_bits()].solve(&f)
                })
                .collect(),
            LocalSolvers::Patches(patches) => self
                .windows
                .par_iter()
                .zip(patches)
                .map(|(w, (nodes, solver))| {
                    let f: Vec<Complex64> = nodes.iter().map(|&g| u[g] * w.phi[g]).collect();
                    let v = solver.solve(&f)?;
                    let mut full = vec![Complex64::new(0.0, 0.0); u.len()];
                    for (&g, x) in nodes.iter().zip(v) {
                        full[g] = x;
                    }
                    Ok(full)
                })
                .collect(),
        }
    }

    pub fn apply(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let vs = self.local_solves(u)?;
        Ok(self.combine(&vs))
    }

    fn combine(&self, vs: &[Vec<Complex64>]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.a.nrows()];
        for (w, v) in self.windows.iter().zip(vs) {
            for i in 0..out.len() {
                if w.phi[i] != 0.0 {
                    out[i] += v[i] * w.phi[i];
                }
            }
        }
        out
    }

    /// `(lambda - m A) v - u`.
    pub fn residual(&self, v: &[Complex64], u: &[Complex64]) -> Vec<Complex64> {
        let mav = self.ma.matvec_complex(v);
        (0..v.len()).map(|i| self.lambda * v[i] - mav[i] - u[i]).collect()
    }

    /// `D u = (lambda - m A) S u - u`.
    pub fn defect(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let su = self.apply(u)?;
        Ok(self.residual(&su, u))
    }

    pub fn defect_decomposition(&self, u: &[Complex64]) -> Result<DefectParts> {
        let vs = self.local_solves(u)?;
        let n = u.len();
        let zero = Complex64::new(0.0, 0.0);
        let (mut c1, mut c2, mut c3) = (vec![zero; n], vec![zero; n], vec![zero; n]);
        for (w, v) in self.windows.iter().zip(&vs) {
            let av = self.a.matvec_complex(v);
            let aphi = self.a.matvec(&w.phi);
            let gamma = carre_du_champ_discrete(&self.a, &w.phi, v);
            for i in 0..n {
                c1[i] += av[i] * (w.phi[i] * (w.frozen - self.m_vals[i]));
                c2[i] -= v[i] * (self.m_vals[i] * aphi[i]);
                c3[i] -= gamma[i] * self.m_vals[i];
            }
        }
        let su = self.combine(&vs);
        Ok(DefectParts {
            c1,
            c2,
            c3,
            residual: self.residual(&su, u),
        })
    }

    /// `R(lambda, m A) u = S (I + D)^{-1} u` with the Neumann series for
    /// `(I + D)^{-1}`, stopped when the increment drops below `tol` relative
    /// to `u` or after `max_terms` terms. Returns the result and the number
    /// of terms used.
    pub fn neumann_resolvent(&self, u: &[Complex64], tol: f64, max_terms: usize) -> Result<(Vec<Complex64>, usize)> {
        let scale = sup_norm_complex(u).max(f64::MIN_POSITIVE);
        let mut acc = u.to_vec();
        let mut term = u.to_vec();
        let mut used = 1;
        for _ in 1..max_terms {
            let d = self.defect(&term)?;
            term = d.into_iter().map(|x| -x).collect();
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += t;
            }
            used += 1;
            let inc = sup_norm_complex(&term);
            if !inc.is_finite() {
                return Err(Error::Internal("Neumann series diverged".into()));
            }
            if inc < tol * scale {
                break;
            }
        }
        Ok((self.apply(&acc)?, used))
    }
}

/// Support of `phi` plus `halo` rings of neighbours in the stencil graph,
/// sorted.
fn grow_support(a: &SparseMatrix, phi: &[f64], halo: usize) -> Vec<usize> {
    let mut inside: Vec<bool> = phi.iter().map(|p| *p != 0.0).collect();
    let mut front: Vec<usize> = (0..phi.len()).filter(|&i| inside[i]).collect();
    for _ in 0..halo {
        let mut next = Vec::new();
        for &i in &front {
            for (j, _) in a.row(i) {
                if !inside[j] {
                    inside[j] = true;
                    next.push(j);
                }
            }
        }
        front = next;
    }
    (0..phi.len()).filter(|&i| inside[i]).collect()
}

/// Principal submatrix on `nodes` with each diagonal reset to minus the
/// kept off-diagonal row sum.
fn censored_submatrix(a: &SparseMatrix, nodes: &[usize]) -> SparseMatrix {
    let mut pos = vec![usize::MAX; a.nrows()];
    for (k, &g) in nodes.iter().enumerate() {
        pos[g] = k;
    }
    let mut trip = Vec::new();
    for (r, &g) in nodes.iter().enumerate() {
        let mut diag = 0.0;
        for (j, v) in a.row(g) {
            if j != g && pos[j] != usize::MAX {
                trip.push((r, pos[j], v));
                diag -= v;
            }
        }
        trip.push((r, r, diag));
    }
    SparseMatrix::from_triplets(nodes.len(), nodes.len(), trip)
}

/// Discrete carre du champ `Gamma(f, g) = G(fg) - f G g - g G f`, i.e.
/// `sum_j G_ij (f_j - f_i)(g_j - g_i)`.
pub fn carre_du_champ_discrete(g: &SparseMatrix, f: &[f64], v: &[Complex64]) -> Vec<Complex64> {
    (0..g.nrows())
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, w) in g.row(i) {
                if j != i {
                    acc += (v[j] - v[i]) * (w * (f[j] - f[i]));
                }
            }
            acc
        })
        .collect()
}

/// Windows of a 1-D partition along prism coordinate `coord`, frozen at the
/// multiplier value at the window centre (other coordinates from `anchor`).
pub fn prism_windows(coords: &[Vec<f64>], coord: usize, part: &PartitionOfUnity1D, m: &Multiplier, anchor: &[f64]) -> Vec<Window> {
    (0..part.windows())
        .filter_map(|i| {
            let phi: Vec<f64> = coords.iter().map(|c| part.eval(i, c[coord]).0).collect();
            if phi.iter().all(|p| *p == 0.0) {
                return None;
            }
            let mut at = anchor.to_vec();
            at[coord] = part.center(i);
            Some(Window { phi, frozen: m.eval(&at) })
        })
        .collect()
}

/// Product windows `prod_k phi^{j_k}(x_k)` on a simplex grid, keeping those
/// that meet the simplex; each is frozen at the multiplier value at the box
/// centre, pulled into the simplex by scaling when it lies outside.
pub fn simplex_product_windows(grid: &SimplexGrid, part: &PartitionOfUnity1D, m: &Multiplier) -> Vec<Window> {
    let d = grid.dim();
    let coords: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.coords(i)).collect();
    let per_axis: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|k| {
            (0..part.windows())
                .map(|j| coords.iter().map(|c| part.eval(j, c[k]).0).collect())
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let phi: Vec<f64> = (0..coords.len())
            .map(|i| (0..d).map(|k| per_axis[k][idx[k]][i]).product())
            .collect();
        if phi.iter().any(|p| *p != 0.0) {
            let mut centre: Vec<f64> = idx.iter().map(|&j| part.center(j)).collect();
            let s: f64 = centre.iter().sum();
            if s > 1.0 {
                centre.iter_mut().for_each(|c| *c /= s);
            }
            out.push(Window { phi, frozen: m.eval(&centre) });
        }
        let mut k = 0;
        loop {
            if k == d {
                return out;
            }
            idx[k] += 1;
            if idx[k] < part.windows() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Largest `|m(x) - m_i|` over nodes in the support of each window.
pub fn freezing_oscillation(coords: &[Vec<f64>], windows: &[Window], m: &Multiplier) -> f64 {
    windows
        .iter()
        .map(|w| {
            coords
                .iter()
                .zip(&w.phi)
                .filter(|(_, p)| **p != 0.0)
                .map(|(c, _)| (m.eval(c) - w.frozen).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Smallest window count `n >= 2` whose frozen windows keep the multiplier
/// oscillation below `eps`, sampling each window densely along every axis.
pub fn choose_window_count(m: &Multiplier, dim: usize, len: f64, eps: f64, simplex: bool, max_n: usize) -> Result<usize> {
    for n in 2..=max_n {
        let part = build_partition_1d(n, len, 1.0)?;
        let osc = sampled_oscillation(m, dim, &part, simplex);
        if osc <= eps {
            return Ok(n);
        }
    }
    Err(Error::Capacity(format!("no window count up to {max_n} reaches oscillation {eps}")))
}

fn sampled_oscillation(m: &Multiplier, dim: usize, part: &PartitionOfUnity1D, simplex: bool) -> f64 {
    const SAMPLES: usize = 9;
    let w = part.len / part.n as f64;
    let mut worst: f64 = 0.0;
    let mut idx = vec![0usize; dim];
    loop {
        let mut centre: Vec<f64> = idx.iter().map(|&j| part.center(j)).collect();
        let s: f64 = centre.iter().sum();
        if simplex && s > 1.0 {
            centre.iter_mut().for_each(|c| *c /= s);
        }
        let frozen = m.eval(&centre);
        let mut off = vec![0usize; dim];
        loop {
            let x: Vec<f64> = (0..dim)
                .map(|k| {
                    let c = part.center(idx[k]);
                    (c - w + 2.0 * w * off[k] as f64 / (SAMPLES - 1) as f64).clamp(0.0, part.len)
                })
                .collect();
            if !simplex || x.iter().sum::<f64>() <= 1.0 {
                worst = worst.max((m.eval(&x) - frozen).abs());
            }
            let mut k = 0;
            while k < dim {
                off[k] += 1;
                if off[k] < SAMPLES {
                    break;
                }
                off[k] = 0;
                k += 1;
            }
            if k == dim {
                break;
            }
        }
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] < part.windows() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            return worst;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn c(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn kron_markov_and_constants() {
        let half = Multiplier::constant(0.5);
        let (g, _, _) = a2_generator(8, 6, 1.0, &half, &half).unwrap();
        assert!(g.matrix().markov_report(1e-12).ok);
        assert!(g.matrix().matvec(&vec![1.0; g.len()]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn separable_eigenfunction() {
        // (x^2 - x) (x) 1 with m1 = 1/2: eigenvalue -1 + 0
        let half = Multiplier::constant(0.5);
        let (g, _, _) = a2_generator(10, 7, 1.0, &half, &half).unwrap();
        let u = g.prism().sample(|p| p[0] * p[0] - p[0]);
        let gu = g.matrix().matvec(&u);
        for (a, b) in gu.iter().zip(&u) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn kron_eigenvalues_are_sums() {
        let f1 = discretize_1d(Kind1D::XOneMinusX, &Multiplier::constant(0.5), 4).unwrap();
        let f2 = discretize_1d(Kind1D::XNeumann { b: 1.0 }, &Multiplier::constant(1.0), 4).unwrap();
        let eig = |m: DMatrix<f64>| -> Vec<f64> {
            let s = nalgebra::linalg::Schur::try_new(m, 1e-14, 10_000).unwrap();
            let mut v: Vec<f64> = s.complex_eigenvalues().iter().map(|z| z.re).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let e1 = eig(f1.matrix().to_dense());
        let e2 = eig(f2.matrix().to_dense());
        let mut sums: Vec<f64> = e1.iter().flat_map(|a| e2.iter().map(move |b| a + b)).collect();
        sums.sort_by(f64::total_cmp);
        let k = eig(SparseMatrix::kron_sum(f1.matrix(), f2.matrix()).to_dense());
        for (a, b) in k.iter().zip(&sums) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn partition_properties() {
        let p = build_partition_1d(7, 1.0, 1.0).unwrap();
        for s in 0..=1000 {
            let y = s as f64 / 1000.0;
            let vals: Vec<f64> = (0..p.windows()).map(|i| p.eval(i, y).0).collect();
            let sq: f64 = vals.iter().map(|v| v * v).sum();
            assert!((sq - 1.0).abs() < 1e-12, "y={y}");
            assert!(vals.iter().filter(|v| **v != 0.0).count() <= 2);
        }
        for i in 0..p.windows() {
            let (a, b) = p.support(i);
            assert_eq!(p.eval(i, a).0, 0.0);
            assert_eq!(p.eval(i, b).0, 0.0);
        }
    }

    #[test]
    fn partition_derivative_matches_difference() {
        let p = build_partition_1d(5, 0.8, 1.0).unwrap();
        let h = 1e-6;
        for y in [0.05, 0.21, 0.5, 0.77] {
            for i in 0..p.windows() {
                let fd = (p.eval(i, y + h).0 - p.eval(i, y - h).0) / (2.0 * h);
                assert!((fd - p.eval(i, y).1).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn constant_multiplier_is_exact() {
        let half = Multiplier::constant(0.5);
        let (g, _, _) = a2_generator(12, 12, 1.0, &half, &half).unwrap();
        let m = Multiplier::constant(2.0);
        let coords = g.prism().all_coords();
        let part = build_partition_1d(4, 1.0, 1.0).unwrap();
        let wins = prism_windows(&coords, 1, &part, &m, &[0.0, 0.0]);
        let lam = Complex64::new(50.0, 10.0);
        let ar = ApproxResolvent::new(g.matrix().clone(), vec![2.0; g.len()], wins, lam, None).unwrap();
        let u = c(&g.prism().sample(|p| (3.0 * p[0]).sin() + p[1]));
        let parts = ar.defect_decomposition(&u).unwrap();
        assert!(sup_norm_complex(&parts.c1) == 0.0);
        assert!(parts.consistency() < 1e-10);
        let (r, _) = ar.neumann_resolvent(&u, 1e-13, 200).unwrap();
        let direct = ShiftedSolver::new(g.matrix(), lam, 2.0, None).unwrap().solve(&u).unwrap();
        let err = r.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10 * sup_norm_complex(&direct));
    }

    #[test]
    fn localized_windows_keep_the_defect_identity() {
        let g = assemble_simplex_generator(Arc::new(build_grid(2, 16).unwrap())).unwrap();
        let grid = g.grid();
        let m = Multiplier::affine(1.0, 0.5, vec![0, 1]);
        let coords: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.coords(i)).collect();
        let (m_vals, _) = m.sample_checked(coords.iter().map(|c| c.as_slice())).unwrap();
        let part = build_partition_1d(4, 1.0, 1.0).unwrap();
        let wins = simplex_product_windows(grid, &part, &m);
        let lam = Complex64::new(400.0, 0.0);
        let ar = ApproxResolvent::localized(g.matrix().clone(), m_vals.clone(), wins.clone(), lam, 2).unwrap();
        let u = c(&grid.sample(|x| (4.0 * x[0]).cos() - x[1] * x[1]));
        let parts = ar.defect_decomposition(&u).unwrap();
        assert!(parts.consistency() < 1e-10, "{}", parts.consistency());
        // a huge halo reproduces the whole-grid windows
        let wide = ApproxResolvent::localized(g.matrix().clone(), m_vals.clone(), wins.clone(), lam, 100).unwrap();
        let global = ApproxResolvent::new(g.matrix().clone(), m_vals, wins, lam, None).unwrap();
        let (a, b) = (wide.apply(&u).unwrap(), global.apply(&u).unwrap());
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(ApproxResolvent::localized(g.matrix().clone(), vec![1.0; grid.len()], Vec::new(), lam, 0).is_err());
    }

    #[test]
    fn censored_patch_is_markov() {
        let g = assemble_simplex_generator(Arc::new(build_grid(2, 10).unwrap())).unwrap();
        let mut phi = vec![0.0; g.grid().len()];
        let centre = g.grid().index_of(&[3, 4]).unwrap();
        phi[centre] = 1.0;
        let nodes = grow_support(g.matrix(), &phi, 2);
        // two rings of the six-point stencil
        assert_eq!(nodes.len(), 19);
        assert!(censored_submatrix(g.matrix(), &nodes).markov_report(1e-12).ok);
    }

    #[test]
    fn window_count_rule() {
        let m = Multiplier::affine(1.0, 0.5, vec![0]);
        // oscillation of m around the centre is 1/(2n): need 1/(2n) <= 1/12
        let n = choose_window_count(&m, 1, 1.0, 1.0 / 12.0 + 1e-12, false, 100).unwrap();
        assert_eq!(n, 6);
    }

    #[test]
    fn chart_prism_is_markov() {
        for kind in [PrismKind::First, PrismKind::Second] {
            let g = chart_prism_generator(kind, 1, 8, 6, 0.25).unwrap();
            assert!(g.matrix().markov_report(1e-12).ok);
            assert_eq!(g.len(), 9 * 7);
        }
    }
}
