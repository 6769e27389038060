//! Simplex/prism charts, the two-region partition of unity on the simplex
//! and the patched resolvent built from the two chart windows.

use std::sync::Arc;

use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::banded::{rcm_ordering, ShiftedSolver};
use crate::discretize::DiscreteGenerator;
use crate::error::{check_len, invalid, Error, Result};
use crate::poly::{rat, rat_to_f64, wf_apply, Poly};
use crate::simplex::SimplexGrid;
use crate::sparse::SparseMatrix;
use crate::tensor::{carre_du_champ_discrete, FactorGrid, PrismKind, TensorGenerator};
use crate::wf1d::sup_norm_complex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Chart {
    /// `x_i = r_i (1 - s)` for `i <= d`, `x_{d+1} = s`.
    Chart1,
    /// `x_1 = s`, `x_j = r_j (1 - s)` for `j >= 2`.
    Chart2,
}

impl Chart {
    pub fn prism_kind(self) -> PrismKind {
        match self {
            Self::Chart1 => PrismKind::First,
            Self::Chart2 => PrismKind::Second,
        }
    }
}

/// The map from a prism `S_d x [0, 1-delta]` (or `[0, 1-delta] x S_d`) onto
/// the region of `S_{d+1}` where the distinguished coordinate is at most
/// `1 - delta`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChartMap {
    pub which: Chart,
    pub dim: usize,
    pub delta: f64,
}

/// First and second derivatives of the forward map at a point:
/// `first[k][a] = d x_k / d r_a`, `second[k][a][b] = d^2 x_k / d r_a d r_b`.
#[derive(Clone, Debug)]
pub struct Jacobian {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<Vec<f64>>>,
}

impl ChartMap {
    pub fn new(which: Chart, dim: usize, delta: f64) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("d", "charts need a simplex of dimension at least 2"));
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(invalid("delta", format!("must lie in (0, 1/2), got {delta}")));
        }
        Ok(Self { which, dim, delta })
    }

    /// Index of the coordinate playing the role of `s`.
    pub fn axis(&self) -> usize {
        match self.which {
            Chart::Chart1 => self.dim - 1,
            Chart::Chart2 => 0,
        }
    }

    pub fn in_region(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x[self.axis()] <= 1.0 - self.delta
    }

    pub fn forward(&self, r: &[f64]) -> Vec<f64> {
        let a = self.axis();
        let s = r[a];
        (0..self.dim).map(|k| if k == a { s } else { r[k] * (1.0 - s) }).collect()
    }

    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        if !self.in_region(x) {
            return Err(invalid("point", format!("{x:?} lies outside the chart region")));
        }
        let a = self.axis();
        let q = 1.0 - x[a];
        Ok((0..self.dim).map(|k| if k == a { x[a] } else { x[k] / q }).collect())
    }

    pub fn jacobian(&self, r: &[f64]) -> Jacobian {
        let (a, n) = (self.axis(), self.dim);
        let mut first = vec![vec![0.0; n]; n];
        let mut second = vec![vec![vec![0.0; n]; n]; n];
        for k in 0..n {
            if k == a {
                first[k][a] = 1.0;
            } else {
                first[k][k] = 1.0 - r[a];
                first[k][a] = -r[k];
                second[k][k][a] = -1.0;
                second[k][a][k] = -1.0;
            }
        }
        Jacobian { first, second }
    }

    /// Components of the forward map as polynomials in the prism variables.
    pub fn forward_polys(&self) -> Vec<Poly> {
        let (a, n) = (self.axis(), self.dim);
        let one_minus = &Poly::one(n) - &Poly::var(n, a);
        (0..n)
            .map(|k| if k == a { Poly::var(n, a) } else { &Poly::var(n, k) * &one_minus })
            .collect()
    }

    /// Samples a prism point uniformly: the simplex factor by normalized
    /// exponentials, the interval factor uniformly in `[0, 1 - delta]`.
    pub fn random_prism_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let a = self.axis();
        let e: Vec<f64> = (0..self.dim).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let tot: f64 = e.iter().sum();
        (0..self.dim)
            .map(|k| if k == a { rng.random::<f64>() * (1.0 - self.delta) } else { e[k] / tot })
            .collect()
    }
}

/// `Phi(u) = u o phi` on sampled functions.
#[derive(Clone, Copy, Debug)]
pub struct Pullback {
    pub chart: ChartMap,
}

impl Pullback {
    pub fn apply(&self, u: impl Fn(&[f64]) -> f64, prism_points: &[Vec<f64>]) -> Vec<f64> {
        prism_points.iter().map(|r| u(&self.chart.forward(r))).collect()
    }

    /// Largest difference between the sup norm of the pulled-back samples and
    /// the sup norm of `u` on the image points.
    pub fn isometry_defect(&self, u: impl Fn(&[f64]) -> f64, prism_points: &[Vec<f64>]) -> f64 {
        let pulled = self.apply(&u, prism_points);
        let image: Vec<f64> = prism_points.iter().map(|r| u(&self.chart.forward(r)).abs()).collect();
        let a = pulled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b = image.iter().copied().fold(0.0f64, f64::max);
        (a - b).abs()
    }
}

/// Applies the prism operator of `chart` to a polynomial on the prism
/// symbolically, returning `(1 - s) A_{d+1,i} v` (a polynomial).
fn prism_operator_numerator(chart: &ChartMap, v: &Poly) -> Poly {
    let (a, n) = (chart.axis(), chart.dim);
    let half = rat(1, 2);
    let s = Poly::var(n, a);
    let one_minus = &Poly::one(n) - &s;
    let mut out = (&(&s * &(&one_minus * &one_minus)) * &v.deriv(a).deriv(a)).scale(&half);
    for i in (0..n).filter(|&i| i != a) {
        let di = v.deriv(i);
        for j in (0..n).filter(|&j| j != a) {
            let dij = di.deriv(j);
            if dij.is_zero() {
                continue;
            }
            let mut coef = Poly::zero(n);
            if i == j {
                coef = &coef + &Poly::var(n, i);
            }
            coef = &coef - &(&Poly::var(n, i) * &Poly::var(n, j));
            out = &out + &(&coef * &dij).scale(&half);
        }
    }
    out
}

/// Exact `A_{d+1,i}(u o phi_i)` as a polynomial, or `None` if the
/// numerator is not divisible by `1 - s`.
pub fn prism_operator_poly(chart: &ChartMap, u: &Poly) -> Option<Poly> {
    let v = u.compose(&chart.forward_polys());
    prism_operator_numerator(chart, &v).div_one_minus(chart.axis())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjugationReport {
    pub chart: Chart,
    pub d: usize,
    #[serde(rename = "N")]
    pub degree: u32,
    pub trials: usize,
    pub max_abs_error: f64,
    pub float_max_rel_error: f64,
    pub exact: bool,
}

/// Compares `A_{d+1,i}(u o phi_i)` with `(A_{d+1} u) o phi_i` for random
/// polynomials `u`. The rational comparison is done on `(1 - s)` times both
/// sides so it never depends on divisibility; the float comparison
/// evaluates both sides at random prism points.
pub fn verify_conjugation_identity(chart: &ChartMap, degree: u32, trials: usize, seed: u64) -> Result<ConjugationReport> {
    if degree > 6 {
        return Err(invalid("N", format!("degree {degree} exceeds 6")));
    }
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let n = chart.dim;
    let phi = chart.forward_polys();
    let one_minus = &Poly::one(n) - &Poly::var(n, chart.axis());
    let results: Vec<(f64, bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let u = Poly::random(&mut rng, n, degree);
            let lhs_num = prism_operator_numerator(chart, &u.compose(&phi));
            let rhs = wf_apply(&u).compose(&phi);
            let diff = &lhs_num - &(&one_minus * &rhs);
            let exact = diff.is_zero();
            let err = rat_to_f64(&diff.max_abs_coeff());
            let lhs = lhs_num.div_one_minus(chart.axis());
            let mut rel: f64 = if lhs.is_some() { 0.0 } else { f64::INFINITY };
            if let Some(lhs) = lhs {
                for _ in 0..20 {
                    let r = chart.random_prism_point(&mut rng);
                    let (a, b) = (lhs.eval_f64(&r), rhs.eval_f64(&r));
                    rel = rel.max((a - b).abs() / (1.0 + b.abs()));
                }
            }
            (err, exact, rel)
        })
        .collect();
    Ok(ConjugationReport {
        chart: chart.which,
        d: n,
        degree,
        trials,
        max_abs_error: results.iter().map(|r| r.0).fold(0.0, f64::max),
        float_max_rel_error: results.iter().map(|r| r.2).fold(0.0, f64::max),
        exact: results.iter().all(|r| r.1),
    })
}

/// Degree-3 Lagrange interpolation on the principal lattice of a simplex
/// grid; the local sub-simplex always contains the point.
pub fn interpolate_simplex(grid: &SimplexGrid, values: &[f64], x: &[f64]) -> Result<f64> {
    check_len(grid.len(), values.len())?;
    let mut acc = 0.0;
    for (i, w) in simplex_stencil(grid, x)? {
        acc += w * values[i];
    }
    Ok(acc)
}

fn simplex_stencil(grid: &SimplexGrid, x: &[f64]) -> Result<Vec<(usize, f64)>> {
    const P: u32 = 3;
    let d = grid.dim();
    let n = grid.resolution();
    check_len(d, x.len())?;
    if n < P {
        return Err(invalid("n", "interpolation needs resolution at least 3"));
    }
    let nf = f64::from(n);
    let mut base: Vec<u32> = x.iter().map(|&v| (v * nf).floor().clamp(0.0, nf) as u32).collect();
    while base.iter().sum::<u32>() > n - P {
        let k = (0..d).max_by_key(|&k| base[k]).expect("d > 0");
        base[k] -= 1;
    }
    let mut mu: Vec<f64> = (0..d).map(|k| x[k] * nf - f64::from(base[k])).collect();
    mu.push(f64::from(P) - mu.iter().sum::<f64>());
    let mut out = Vec::new();
    for alpha in crate::simplex::compositions(d + 1, P) {
        let mut w = 1.0;
        for (i, &ai) in alpha.iter().enumerate() {
            for k in 0..ai {
                w *= (mu[i] - f64::from(k)) / f64::from(k + 1);
            }
        }
        let node: Vec<u32> = (0..d).map(|k| base[k] + alpha[k]).collect();
        let idx = grid
            .index_of(&node)
            .ok_or_else(|| Error::Internal(format!("interpolation node {node:?} missing")))?;
        out.push((idx, w));
    }
    Ok(out)
}

fn interval_stencil(nodes: &[f64], s: f64) -> Vec<(usize, f64)> {
    let m = nodes.len() - 1;
    let h = nodes[1] - nodes[0];
    let j0 = ((s / h).floor() as i64 - 1).clamp(0, m as i64 - 3) as usize;
    (j0..j0 + 4)
        .map(|j| {
            let w: f64 = (j0..j0 + 4)
                .filter(|&k| k != j)
                .map(|k| (s - nodes[k]) / (nodes[j] - nodes[k]))
                .product();
            (j, w)
        })
        .collect()
}

/// Input to [`conjugate_operator`]: a function known pointwise, or samples
/// on a simplex grid (interpolated with degree-3 Lagrange).
pub enum SampledFunction<'a> {
    Closure(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    Grid { grid: &'a SimplexGrid, values: &'a [f64] },
}

impl SampledFunction<'_> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Closure(f) => Ok(f(x)),
            Self::Grid { grid, values } => interpolate_simplex(grid, values, x),
        }
    }
}

/// `Phi_i^{-1} A_{d+1,i} Phi_i u` at the simplex points `at`: pull `u` back
/// to the prism grid of `op`, apply the prism generator and interpolate the
/// result (degree 3 in each factor) at `phi_i^{-1}(x)`.
pub fn conjugate_operator(chart: &ChartMap, op: &TensorGenerator, u: &SampledFunction<'_>, at: &[Vec<f64>]) -> Result<Vec<f64>> {
    let prism = op.prism();
    if prism.dim() != chart.dim {
        return Err(invalid("chart", "chart and prism dimensions differ"));
    }
    let (simplex, interval, simplex_first) = match (prism.left(), prism.right(), chart.which) {
        (FactorGrid::Simplex(g), FactorGrid::Interval(v), Chart::Chart1) => (g, v, true),
        (FactorGrid::Interval(v), FactorGrid::Simplex(g), Chart::Chart2) => (g, v, false),
        _ => return Err(invalid("chart", "prism layout does not match the chart")),
    };
    let b = *interval.last().expect("nonempty interval");
    if (b - (1.0 - chart.delta)).abs() > 1e-12 {
        return Err(invalid("delta", "prism height differs from 1 - delta"));
    }
    let pulled: Result<Vec<f64>> = (0..prism.len())
        .into_par_iter()
        .map(|i| u.eval(&chart.forward(&prism.coords(i))))
        .collect();
    let w = op.matrix().matvec(&pulled?);
    let nr = prism.right().len();
    at.par_iter()
        .map(|x| {
            let r = chart.inverse(x)?;
            let a = chart.axis();
            let rs: Vec<f64> = (0..chart.dim).filter(|&k| k != a).map(|k| r[k]).collect();
            let sw = simplex_stencil(simplex, &rs)?;
            let iw = interval_stencil(interval, r[a]);
            let mut acc = 0.0;
            for &(si, ws) in &sw {
                for &(ii, wi) in &iw {
                    let idx = if simplex_first { si * nr + ii } else { ii * nr + si };
                    acc += ws * wi * w[idx];
                }
            }
            Ok(acc)
        })
        .collect()
}

/// `ramp(t) = f(t) / (f(t) + f(1 - t))` with `f(t) = exp(-1/t)`; 0 for
/// `t <= 0`, 1 for `t >= 1`. Returns value and derivative.
pub fn smooth_ramp(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let f = |x: f64| (-1.0 / x).exp();
    let df = |x: f64| f(x) / (x * x);
    let (a, b) = (f(t), f(1.0 - t));
    let (da, db) = (df(t), -df(1.0 - t));
    let s = a + b;
    (a / s, (da * s - a * (da + db)) / (s * s))
}

/// `psi_1, psi_2` on `S_{d+1}` with `psi_1^2 + psi_2^2 = 1`, `psi_1`
/// vanishing where `x_{d+1} >= 1 - delta` and `psi_2` where `x_1 >= 1 - delta`.
#[derive(Clone, Debug, Serialize)]
pub struct SimplexPartition {
    pub dim: usize,
    pub delta: f64,
    pub width: f64,
    /// Lower bound of `g_1^2 + g_2^2` on the simplex.
    pub denominator_floor: f64,
}

pub fn build_simplex_partition(dim: usize, delta: f64) -> Result<SimplexPartition> {
    if dim < 2 {
        return Err(invalid("d", "the partition needs dimension at least 2"));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid("delta", format!("must lie in (0, 1/2), got {delta}")));
    }
    let mut p = SimplexPartition {
        dim,
        delta,
        width: delta / 2.0,
        denominator_floor: 0.0,
    };
    // g_1^2 + g_2^2 decreases in x_1 and x_{d+1}; its minimum lies on
    // x_1 + x_{d+1} = 1.
    let samples = 20_000;
    p.denominator_floor = (0..=samples)
        .map(|k| {
            let t = k as f64 / samples as f64;
            let g1 = smooth_ramp((1.0 - delta - t) / p.width).0;
            let g2 = smooth_ramp((1.0 - delta - (1.0 - t)) / p.width).0;
            g1 * g1 + g2 * g2
        })
        .fold(f64::INFINITY, f64::min);
    if !(p.denominator_floor > 0.0) {
        return Err(Error::Internal("partition denominator vanishes".into()));
    }
    Ok(p)
}

impl SimplexPartition {
    fn raw(&self, x: &[f64]) -> [(f64, f64); 2] {
        let g1 = smooth_ramp((1.0 - self.delta - x[self.dim - 1]) / self.width);
        let g2 = smooth_ramp((1.0 - self.delta - x[0]) / self.width);
        [(g1.0, -g1.1 / self.width), (g2.0, -g2.1 / self.width)]
    }

    pub fn eval(&self, x: &[f64]) -> [f64; 2] {
        let [a, b] = self.raw(x);
        let s = (a.0 * a.0 + b.0 * b.0).sqrt();
        [a.0 / s, b.0 / s]
    }

    /// Gradients of `psi_1` and `psi_2`.
    pub fn gradient(&self, x: &[f64]) -> [Vec<f64>; 2] {
        let [(g1, d1), (g2, d2)] = self.raw(x);
        let s2 = g1 * g1 + g2 * g2;
        let s = s2.sqrt();
        // g_1 depends on x_{d+1} only, g_2 on x_1 only.
        let mut grad = [vec![0.0; self.dim], vec![0.0; self.dim]];
        let (last, first) = (self.dim - 1, 0);
        let dsum_last = g1 * d1 / s2;
        let dsum_first = g2 * d2 / s2;
        grad[0][last] += d1 / s - g1 / s * dsum_last;
        grad[0][first] += -g1 / s * dsum_first;
        grad[1][first] += d2 / s - g2 / s * dsum_first;
        grad[1][last] += -g2 / s * dsum_last;
        grad
    }
}

/// Values of the carre du champ `sum x_i (delta_ij - x_j) f_i g_j` and of its
/// rearranged form, split into the diagonal part
/// `sum x_i (1 - |x|) f_i g_i` and the exchange part
/// `- sum_{i != j} x_i x_j f_i (g_j - g_i)`.
#[derive(Clone, Debug, Serialize)]
pub struct CarreDuChamp {
    pub values: Vec<f64>,
    pub diagonal: Vec<f64>,
    pub exchange: Vec<f64>,
    pub rearrangement_defect: f64,
}

pub fn carre_du_champ(points: &[Vec<f64>], grad_f: &[Vec<f64>], grad_g: &[Vec<f64>]) -> Result<CarreDuChamp> {
    check_len(points.len(), grad_f.len())?;
    check_len(points.len(), grad_g.len())?;
    let mut out = CarreDuChamp {
        values: Vec::with_capacity(points.len()),
        diagonal: Vec::with_capacity(points.len()),
        exchange: Vec::with_capacity(points.len()),
        rearrangement_defect: 0.0,
    };
    for ((x, f), g) in points.iter().zip(grad_f).zip(grad_g) {
        let n = x.len();
        check_len(n, f.len())?;
        check_len(n, g.len())?;
        let tot: f64 = x.iter().sum();
        let mut form = 0.0;
        let mut diag = 0.0;
        let mut exch = 0.0;
        for i in 0..n {
            form += x[i] * f[i] * g[i];
            diag += x[i] * (1.0 - tot) * f[i] * g[i];
            for j in 0..n {
                form -= x[i] * x[j] * f[i] * g[j];
                if i != j {
                    exch -= x[i] * x[j] * f[i] * (g[j] - g[i]);
                }
            }
        }
        let scale = 1.0 + form.abs();
        out.rearrangement_defect = out.rearrangement_defect.max((form - diag - exch).abs() / scale);
        out.values.push(form);
        out.diagonal.push(diag);
        out.exchange.push(exch);
    }
    Ok(out)
}

/// One chart window of the lattice parametrix: the generator restricted to
/// the nodes with `k_axis <= cut`, with transitions across the cut reflected
/// back into the window.
#[derive(Clone, Debug)]
struct WindowOperator {
    nodes: Vec<usize>,
    matrix: SparseMatrix,
    perm: Vec<usize>,
    psi: Vec<f64>,
}

fn window_operator(gen: &DiscreteGenerator, axis: Option<usize>, cut: u32, psi: Vec<f64>) -> Result<WindowOperator> {
    let grid = gen.grid();
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| axis.is_none_or(|a| grid.lattice(i)[a] <= cut))
        .collect();
    let mut local = vec![usize::MAX; grid.len()];
    for (l, &g) in nodes.iter().enumerate() {
        local[g] = l;
    }
    let mut trip = Vec::new();
    for (l, &g) in nodes.iter().enumerate() {
        let k = grid.lattice(g);
        for (col, w) in gen.matrix().row(g) {
            let target = if local[col] != usize::MAX {
                col
            } else {
                let a = axis.expect("all nodes are local without a cut");
                let mut off: Vec<i32> = grid.lattice(col).iter().zip(k).map(|(p, q)| *p as i32 - *q as i32).collect();
                off[a] = -off[a];
                grid.neighbor(k, &off)
                    .filter(|m| local[*m] != usize::MAX)
                    .ok_or_else(|| Error::Internal(format!("reflected neighbour of {k:?} missing")))?
            };
            trip.push((l, local[target], w));
        }
    }
    let matrix = SparseMatrix::from_triplets(nodes.len(), nodes.len(), trip);
    let perm = rcm_ordering(&matrix);
    Ok(WindowOperator { nodes, matrix, perm, psi })
}

/// Patched resolvent `S(lambda) u = sum_i psi_i R_i(lambda)(psi_i u)` on a
/// simplex grid, with window generators on the two chart regions.
#[derive(Clone, Debug)]
pub struct Parametrix {
    gen: Arc<DiscreteGenerator>,
    windows: Vec<WindowOperator>,
    cut: Option<u32>,
}

impl Parametrix {
    /// Two chart windows cut at `k = ceil(n (1 - delta))` in the last and
    /// the first coordinate.
    pub fn new(gen: Arc<DiscreteGenerator>, delta: f64) -> Result<Self> {
        let grid = gen.grid();
        let d = grid.dim();
        let part = build_simplex_partition(d, delta)?;
        let n = grid.resolution();
        let cut = (f64::from(n) * (1.0 - delta)).ceil() as u32;
        if cut >= n {
            return Err(invalid("n", "grid too coarse for the chart cut"));
        }
        let vals: Vec<[f64; 2]> = (0..grid.len()).map(|i| part.eval(&grid.coords(i))).collect();
        let w1 = window_operator(&gen, Some(d - 1), cut, vals.iter().map(|v| v[0]).collect())?;
        let w2 = window_operator(&gen, Some(0), cut, vals.iter().map(|v| v[1]).collect())?;
        for w in [&w1, &w2] {
            if !w.matrix.markov_report(1e-12).ok {
                return Err(Error::Internal("window generator lost its Markov structure".into()));
            }
        }
        Ok(Self {
            gen,
            windows: vec![w1, w2],
            cut: Some(cut),
        })
    }

    /// A single window covering the whole simplex with `psi = 1`.
    pub fn single_chart(gen: Arc<DiscreteGenerator>) -> Result<Self> {
        let n = gen.grid().len();
        let w = window_operator(&gen, None, 0, vec![1.0; n])?;
        Ok(Self {
            gen,
            windows: vec![w],
            cut: None,
        })
    }

    pub fn generator(&self) -> &DiscreteGenerator {
        &self.gen
    }

    pub fn cut(&self) -> Option<u32> {
        self.cut
    }

    pub fn psi(&self, i: usize) -> &[f64] {
        &self.windows[i].psi
    }

    pub fn at(&self, lambda: Complex64) -> Result<ParametrixResolvent<'_>> {
        let solvers: Result<Vec<ShiftedSolver>> = self
            .windows
            .par_iter()
            .map(|w| ShiftedSolver::new(&w.matrix, lambda, 1.0, Some(w.perm.clone())))
            .collect();
        Ok(ParametrixResolvent {
            p: self,
            lambda,
            solvers: solvers?,
        })
    }
}

pub struct ParametrixResolvent<'a> {
    p: &'a Parametrix,
    lambda: Complex64,
    solvers: Vec<ShiftedSolver>,
}

/// `B u`, `C u` and the directly computed residual `(lambda - G) S u - u`.
#[derive(Clone, Debug)]
pub struct ParametrixDefect {
    pub b: Vec<Complex64>,
    pub c: Vec<Complex64>,
    pub residual: Vec<Complex64>,
    pub su: Vec<Complex64>,
}

impl ParametrixDefect {
    pub fn consistency(&self) -> f64 {
        let diff = (0..self.residual.len())
            .map(|i| (self.b[i] + self.c[i] - self.residual[i]).norm())
            .fold(0.0, f64::max);
        diff / sup_norm_complex(&self.residual).max(f64::MIN_POSITIVE)
    }
}

impl ParametrixResolvent<'_> {
    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// Window solves `v_i = R_i(psi_i u)`, extended by zero.
    fn local(&self, u: &[Complex64]) -> Result<Vec<Vec<Complex64>>> {
        check_len(self.p.gen.grid().len(), u.len())?;
        self.p
            .windows
            .par_iter()
            .zip(&self.solvers)
            .map(|(w, s)| {
                let f: Vec<Complex64> = w.nodes.iter().map(|&g| u[g] * w.psi[g]).collect();
                let v = s.solve(&f)?;
                let mut full = vec![Complex64::zero(); u.len()];
                for (l, &g) in w.nodes.iter().enumerate() {
                    full[g] = v[l];
                }
                Ok(full)
            })
            .collect()
    }

    fn combine(&self, vs: &[Vec<Complex64>]) -> Vec<Complex64> {
        let mut out = vec![Complex64::zero(); vs[0].len()];
        for (w, v) in self.p.windows.iter().zip(vs) {
            for i in 0..out.len() {
                out[i] += v[i] * w.psi[i];
            }
        }
        out
    }

    pub fn apply(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.combine(&self.local(u)?))
    }

    fn residual(&self, su: &[Complex64], u: &[Complex64]) -> Vec<Complex64> {
        let g = self.p.gen.matrix().matvec_complex(su);
        (0..u.len()).map(|i| self.lambda * su[i] - g[i] - u[i]).collect()
    }

    pub fn defect(&self, u: &[Complex64]) -> Result<ParametrixDefect> {
        let vs = self.local(u)?;
        let g = self.p.gen.matrix();
        let n = u.len();
        let mut b = vec![Complex64::zero(); n];
        let mut c = vec![Complex64::zero(); n];
        for (w, v) in self.p.windows.iter().zip(&vs) {
            let gpsi = g.matvec(&w.psi);
            let gamma = carre_du_champ_discrete(g, &w.psi, v);
            for i in 0..n {
                b[i] -= v[i] * gpsi[i];
                c[i] -= gamma[i];
            }
        }
        let su = self.combine(&vs);
        Ok(ParametrixDefect {
            b,
            c,
            residual: self.residual(&su, u),
            su,
        })
    }

    /// `S (I + B + C)^{-1} u` by the Neumann series; returns the result and
    /// the number of terms.
    pub fn neumann_resolvent(&self, u: &[Complex64], tol: f64, max_terms: usize) -> Result<(Vec<Complex64>, usize)> {
        let scale = sup_norm_complex(u).max(f64::MIN_POSITIVE);
        let mut acc = u.to_vec();
        let mut term = u.to_vec();
        let mut used = 1;
        for _ in 1..max_terms {
            let su = self.apply(&term)?;
            term = self.residual(&su, &term).into_iter().map(|x| -x).collect();
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::assemble_simplex_generator;
    use crate::poly::carre_du_champ_poly;
    use crate::simplex::build_grid;
    use crate::tensor::chart_prism_generator;

    fn charts() -> Vec<ChartMap> {
        let mut v = Vec::new();
        for dim in [2, 3] {
            for which in [Chart::Chart1, Chart::Chart2] {
                v.push(ChartMap::new(which, dim, 0.25).unwrap());
            }
        }
        v
    }

    #[test]
    fn round_trip_and_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in charts() {
            for _ in 0..1000 {
                let r = c.random_prism_point(&mut rng);
                let x = c.forward(&r);
                assert!(c.in_region(&x));
                assert!(x.iter().all(|v| *v >= 0.0) && x.iter().sum::<f64>() <= 1.0 + 1e-15);
                let back = c.inverse(&x).unwrap();
                for (a, b) in back.iter().zip(&r) {
                    assert!((a - b).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let c = ChartMap::new(Chart::Chart2, 3, 0.25).unwrap();
        let r = [0.3, 0.2, 0.5];
        let j = c.jacobian(&r);
        let h = 1e-6;
        for a in 0..3 {
            let mut rp = r;
            let mut rm = r;
            rp[a] += h;
            rm[a] -= h;
            let (xp, xm) = (c.forward(&rp), c.forward(&rm));
            for k in 0..3 {
                assert!(((xp[k] - xm[k]) / (2.0 * h) - j.first[k][a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pullback_is_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ChartMap::new(Chart::Chart1, 2, 0.25).unwrap();
        let pts: Vec<Vec<f64>> = (0..1000).map(|_| c.random_prism_point(&mut rng)).collect();
        let p = Pullback { chart: c };
        assert!(p.isometry_defect(|x| (5.0 * x[0]).sin() - x[1], &pts) < 1e-13);
    }

    #[test]
    fn conjugation_examples() {
        let xy = Poly::monomial(2, vec![1, 1], rat(1, 1));
        let c1 = ChartMap::new(Chart::Chart1, 2, 0.25).unwrap();
        let lhs = prism_operator_poly(&c1, &xy).unwrap();
        assert_eq!(lhs, wf_apply(&xy).compose(&c1.forward_polys()));
        let xyz = Poly::monomial(3, vec![1, 1, 1], rat(1, 1));
        let c2 = ChartMap::new(Chart::Chart2, 3, 0.25).unwrap();
        let lhs = prism_operator_poly(&c2, &xyz).unwrap();
        assert_eq!(lhs, wf_apply(&xyz).compose(&c2.forward_polys()));
        let one = Poly::one(3);
        assert!(prism_operator_poly(&c2, &one).unwrap().is_zero());
    }

    #[test]
    fn conjugation_identity_random() {
        for c in charts() {
            let r = verify_conjugation_identity(&c, 4, 5, 11).unwrap();
            assert!(r.exact && r.max_abs_error == 0.0, "{r:?}");
            assert!(r.float_max_rel_error < 1e-10);
        }
    }

    #[test]
    fn interpolation_exact_for_cubics() {
        let grid = build_grid(2, 10).unwrap();
        let f = |x: &[f64]| 1.0 + x[0] - 2.0 * x[1] * x[1] + x[0] * x[0] * x[1] - 3.0 * x[1].powi(3);
        let vals = grid.sample(f);
        for x in [[0.0, 0.0], [0.33, 0.41], [0.97, 0.02], [0.5, 0.5], [0.01, 0.93]] {
            assert!((interpolate_simplex(&grid, &vals, &x).unwrap() - f(&x)).abs() < 1e-12);
        }
    }

    fn away_from_cut(c: &ChartMap, h: f64, count: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..count)
            .map(|_| {
                let mut r = c.random_prism_point(&mut rng);
                r[c.axis()] *= (1.0 - c.delta - 3.0 * h) / (1.0 - c.delta);
                c.forward(&r)
            })
            .collect()
    }

    #[test]
    fn conjugate_operator_on_polynomials() {
        let c = ChartMap::new(Chart::Chart1, 2, 0.25).unwrap();
        let op = chart_prism_generator(PrismKind::First, 1, 16, 24, 0.25).unwrap();
        let h = 0.75 / 24.0;
        let pts = away_from_cut(&c, h, 200);
        let affine = |x: &[f64]| 2.0 - x[0] + 3.0 * x[1];
        let out = conjugate_operator(&c, &op, &SampledFunction::Closure(&affine), &pts).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-10));
        let q = |x: &[f64]| x[0] * x[0] - x[0];
        let out = conjugate_operator(&c, &op, &SampledFunction::Closure(&q), &pts).unwrap();
        for (v, x) in out.iter().zip(&pts) {
            assert!((v + q(x)).abs() < 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Poly::random(&mut rng, 2, 3);
        let au = wf_apply(&u);
        let uf = |x: &[f64]| u.eval_f64(x);
        let out = conjugate_operator(&c, &op, &SampledFunction::Closure(&uf), &pts).unwrap();
        let scale = pts.iter().map(|x| au.eval_f64(x).abs()).fold(0.0, f64::max);
        for (v, x) in out.iter().zip(&pts) {
            assert!((v - au.eval_f64(x)).abs() < 1e-8 * scale);
        }
        let g = build_grid(2, 12).unwrap();
        let vals = g.sample(uf);
        let out2 = conjugate_operator(&c, &op, &SampledFunction::Grid { grid: &g, values: &vals }, &pts).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            assert!((a - b).abs() < 1e-8 * scale);
        }
        assert!(conjugate_operator(&c, &op, &SampledFunction::Closure(&uf), &[vec![0.1, 0.8]]).is_err());
    }

    #[test]
    fn partition_examples() {
        let p = build_simplex_partition(2, 0.25).unwrap();
        let v = p.eval(&[1.0 / 3.0, 1.0 / 3.0]);
        assert!((v[0] - 0.5f64.sqrt()).abs() < 1e-15 && (v[1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(p.eval(&[0.0, 1.0]), [0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p3 = build_simplex_partition(3, 0.25).unwrap();
        for _ in 0..1000 {
            let mut e: Vec<f64> = (0..4).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            e.iter_mut().for_each(|v| *v /= s);
            let x = &e[..3];
            let v = p3.eval(x);
            assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-12);
            if x[2] >= 0.75 {
                assert_eq!(v[0], 0.0);
            }
            if x[0] >= 0.75 {
                assert_eq!(v[1], 0.0);
            }
        }
        assert!(build_simplex_partition(2, 0.5).is_err());
    }

    #[test]
    fn partition_gradient_matches_difference() {
        let p = build_simplex_partition(3, 0.3).unwrap();
        let x = [0.2, 0.1, 0.6];
        let g = p.gradient(&x);
        let h = 1e-6;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            for i in 0..2 {
                let fd = (p.eval(&xp)[i] - p.eval(&xm)[i]) / (2.0 * h);
                assert!((fd - g[i][a]).abs() < 1e-6, "{i} {a}: {fd} vs {}", g[i][a]);
            }
        }
    }

    #[test]
    fn carre_du_champ_forms() {
        let pts = vec![vec![0.2, 0.3], vec![0.5, 0.1]];
        let ex = vec![vec![1.0, 0.0]; 2];
        let r = carre_du_champ(&pts, &ex, &ex).unwrap();
        for (k, x) in pts.iter().enumerate() {
            assert!((r.diagonal[k] - x[0] * (1.0 - x[0] - x[1])).abs() < 1e-15);
            assert!((r.values[k] - x[0] * (1.0 - x[0])).abs() < 1e-15);
        }
        let zero = vec![vec![0.0, 0.0]; 2];
        assert!(carre_du_champ(&pts, &zero, &ex).unwrap().values.iter().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Poly::random(&mut rng, 3, 3);
        let g = Poly::random(&mut rng, 3, 3);
        let exact = carre_du_champ_poly(&f, &g);
        let pts = vec![vec![0.1, 0.2, 0.3], vec![0.6, 0.1, 0.05]];
        let gf: Vec<Vec<f64>> = pts.iter().map(|x| (0..3).map(|i| f.deriv(i).eval_f64(x)).collect()).collect();
        let gg: Vec<Vec<f64>> = pts.iter().map(|x| (0..3).map(|i| g.deriv(i).eval_f64(x)).collect()).collect();
        let r = carre_du_champ(&pts, &gf, &gg).unwrap();
        assert!(r.rearrangement_defect < 1e-12);
        for (k, x) in pts.iter().enumerate() {
            assert!((r.values[k] - exact.eval_f64(x)).abs() < 1e-10 * (1.0 + r.values[k].abs()));
        }
        assert!(carre_du_champ(&pts, &gf[..1], &gg).is_err());
    }

    fn test_vector(len: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect()
    }

    #[test]
    fn parametrix_defect_identity_and_inverse() {
        let gen = Arc::new(assemble_simplex_generator(Arc::new(build_grid(2, 24).unwrap())).unwrap());
        let p = Parametrix::new(Arc::clone(&gen), 0.25).unwrap();
        assert_eq!(p.cut(), Some(18));
        let u = test_vector(gen.grid().len(), 1);
        for lam in [Complex64::new(1e3, 0.0), Complex64::new(-300.0, 300.0)] {
            let r = p.at(lam).unwrap();
            let d = r.defect(&u).unwrap();
            assert!(d.consistency() < 1e-9, "{}", d.consistency());
        }
        let lam = Complex64::new(1e3, 0.0);
        let r = p.at(lam).unwrap();
        let (x, _) = r.neumann_resolvent(&u, 1e-13, 200).unwrap();
        let direct = ShiftedSolver::new(gen.matrix(), lam, 1.0, None).unwrap().solve(&u).unwrap();
        let err = x.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8 * sup_norm_complex(&direct), "{err}");
    }

    #[test]
    fn single_chart_is_exact() {
        let gen = Arc::new(assemble_simplex_generator(Arc::new(build_grid(2, 12).unwrap())).unwrap());
        let p = Parametrix::single_chart(Arc::clone(&gen)).unwrap();
        let u = test_vector(gen.grid().len(), 2);
        let d = p.at(Complex64::new(50.0, 5.0)).unwrap().defect(&u).unwrap();
        assert!(sup_norm_complex(&d.b) == 0.0 && sup_norm_complex(&d.c) == 0.0);
        assert!(sup_norm_complex(&d.residual) < 1e-12);
    }
}
