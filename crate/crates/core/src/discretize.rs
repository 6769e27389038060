//! Monotone finite-difference generator for `A_d` on the simplex lattice.
//!
//! The operator is written as
//! `1/2 sum_i x_i (1 - |x|) d^2_{e_i} + 1/2 sum_{i<j} x_i x_j d^2_{e_i - e_j}`,
//! a sum of second derivatives along lattice directions with nonnegative
//! weights. Each term is replaced by a central second difference, which
//! gives nonnegative off-diagonal entries and zero row sums. A weight
//! vanishes exactly when one of its two neighbors leaves the simplex, so face
//! nodes automatically see only their own face.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, invalid, Error, Result};
use crate::expm::expm_action;
use crate::fit::loglog_slope;
use crate::multiplier::Multiplier;
use crate::poly::{wf_apply, Poly};
use crate::poly_operator::{assemble_any, poly_semigroup_apply};
use crate::simplex::{restrict_to_face, Face, SimplexGrid};
use crate::sparse::SparseMatrix;

/// Sparse generator on a simplex grid together with the stencil directions
/// used at each node.
#[derive(Clone, Debug)]
pub struct DiscreteGenerator {
    grid: Arc<SimplexGrid>,
    matrix: SparseMatrix,
    directions: Vec<Vec<i32>>,
    stencils: Vec<Vec<u8>>,
}

/// Lattice directions `e_i` followed by `e_i - e_j` (`i < j`).
pub fn stencil_directions(d: usize) -> Vec<Vec<i32>> {
    let mut dirs = Vec::new();
    for i in 0..d {
        let mut v = vec![0; d];
        v[i] = 1;
        dirs.push(v);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut v = vec![0; d];
            v[i] = 1;
            v[j] = -1;
            dirs.push(v);
        }
    }
    dirs
}

/// `n^2` times the weight of direction `dir` at lattice point `k`; an
/// integer, so all matrix entries are exact halves of integers.
fn direction_weight(k: &[u32], n: u32, dir: &[i32]) -> f64 {
    let plus: Vec<usize> = (0..dir.len()).filter(|&i| dir[i] == 1).collect();
    let minus: Vec<usize> = (0..dir.len()).filter(|&i| dir[i] == -1).collect();
    match (plus.as_slice(), minus.as_slice()) {
        ([i], []) => {
            let s: u32 = k.iter().sum();
            f64::from(k[*i]) * f64::from(n - s)
        }
        ([i], [j]) => f64::from(k[*i]) * f64::from(k[*j]),
        _ => 0.0,
    }
}

pub fn assemble_simplex_generator(grid: Arc<SimplexGrid>) -> Result<DiscreteGenerator> {
    if grid.resolution() < 4 {
        return Err(invalid("n", "resolution must be at least 4"));
    }
    assemble_unchecked(grid)
}

pub(crate) fn assemble_unchecked(grid: Arc<SimplexGrid>) -> Result<DiscreteGenerator> {
    let d = grid.dim();
    let n = grid.resolution();
    let dirs = stencil_directions(d);
    let rows: Vec<Result<(Vec<(usize, usize, f64)>, Vec<u8>)>> = (0..grid.len())
        .into_par_iter()
        .map(|r| {
            let k = grid.lattice(r);
            let mut trip = Vec::new();
            let mut used = Vec::new();
            let mut diag = 0.0;
            for (di, dir) in dirs.iter().enumerate() {
                let w = direction_weight(k, n, dir);
                if w == 0.0 {
                    continue;
                }
                let back: Vec<i32> = dir.iter().map(|v| -v).collect();
                let (p, m) = match (grid.neighbor(k, dir), grid.neighbor(k, &back)) {
                    (Some(p), Some(m)) => (p, m),
                    _ => {
                        return Err(Error::Internal(format!(
                            "positive weight at {k:?} in direction {dir:?} with a missing neighbor"
                        )))
                    }
                };
                trip.push((r, p, 0.5 * w));
                trip.push((r, m, 0.5 * w));
                diag -= w;
                used.push(di as u8);
            }
            if diag != 0.0 {
                trip.push((r, r, diag));
            }
            Ok((trip, used))
        })
        .collect();
    let mut trip = Vec::new();
    let mut stencils = Vec::with_capacity(grid.len());
    for r in rows {
        let (t, u) = r?;
        trip.extend(t);
        stencils.push(u);
    }
    let matrix = SparseMatrix::from_triplets(grid.len(), grid.len(), trip);
    Ok(DiscreteGenerator {
        grid,
        matrix,
        directions: dirs,
        stencils,
    })
}

impl DiscreteGenerator {
    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<SimplexGrid> {
        Arc::clone(&self.grid)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn directions(&self) -> &[Vec<i32>] {
        &self.directions
    }

    /// Direction indices (into [`Self::directions`]) used in row `i`.
    pub fn stencil(&self, i: usize) -> &[u8] {
        &self.stencils[i]
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid.len(), u.len())?;
        Ok(self.matrix.matvec(u))
    }

    pub fn apply_complex(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len(self.grid.len(), u.len())?;
        Ok(self.matrix.matvec_complex(u))
    }

    /// The Dorroh-perturbed generator `m A_h` (rows scaled by `m(node)`).
    pub fn with_multiplier(&self, m: &Multiplier) -> Result<(SparseMatrix, f64)> {
        let pts: Vec<Vec<f64>> = (0..self.grid.len()).map(|i| self.grid.coords(i)).collect();
        let (w, m0) = m.sample_checked(pts.iter().map(|p| p.as_slice()))?;
        Ok((self.matrix.scale_rows(&w)?, m0))
    }

    /// Sup norm over nodes of `sqrt(x_i (1 - x_i)) |D_i u|`, with forward
    /// differences along `e_i` and the weight taken at the edge midpoint.
    pub fn weighted_gradient_norm(&self, u: &[Complex64], i: usize) -> f64 {
        let g = &self.grid;
        let n = f64::from(g.resolution());
        let mut e = vec![0; g.dim()];
        e[i] = 1;
        let mut best: f64 = 0.0;
        for a in 0..g.len() {
            let k = g.lattice(a);
            if let Some(b) = g.neighbor(k, &e) {
                let mid = (f64::from(k[i]) + 0.5) / n;
                let w = (mid * (1.0 - mid)).sqrt();
                best = best.max(w * (u[b] - u[a]).norm() * n);
            }
        }
        best
    }

    pub fn weighted_gradient_norm_real(&self, u: &[f64], i: usize) -> f64 {
        let c: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.weighted_gradient_norm(&c, i)
    }
}

/// Refinement study of `max |G_h u - A_d u|` at the nodes.
#[derive(Clone, Debug, Serialize)]
pub struct OrderFit {
    pub resolutions: Vec<u32>,
    pub errors: Vec<f64>,
    /// Fitted order `p` in `error ~ h^p`; `None` when the scheme is exact.
    pub order: Option<f64>,
    pub exact: bool,
}

/// Tolerance below which a consistency error counts as roundoff.
pub const EXACT_TOL: f64 = 1e-10;

pub fn consistency_order(d: usize, u: &Poly, resolutions: &[u32]) -> Result<OrderFit> {
    if resolutions.len() < 3 {
        return Err(invalid("resolutions", "need at least three resolutions"));
    }
    if u.nvars() != d {
        return Err(invalid("u", format!("polynomial has {} variables, expected {d}", u.nvars())));
    }
    let image = wf_apply(u);
    let mut errors = Vec::new();
    for &n in resolutions {
        let grid = Arc::new(crate::simplex::build_grid(d, n)?);
        let gen = assemble_simplex_generator(Arc::clone(&grid))?;
        let samples = grid.sample(|x| u.eval_f64(x));
        let gu = gen.apply(&samples)?;
        let err = (0..grid.len())
            .map(|i| (gu[i] - image.eval_f64(&grid.coords(i))).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let scale = errors.iter().copied().fold(0.0, f64::max);
    let exact = scale <= EXACT_TOL * (1.0 + rat_scale(u));
    let order = if exact {
        None
    } else {
        let hs: Vec<f64> = resolutions.iter().map(|&n| 1.0 / f64::from(n)).collect();
        loglog_slope(&hs, &errors).map(|f| f.slope)
    };
    Ok(OrderFit {
        resolutions: resolutions.to_vec(),
        errors,
        order,
        exact,
    })
}

fn rat_scale(u: &Poly) -> f64 {
    crate::poly::rat_to_f64(&u.max_abs_coeff())
}

/// Discrete face-commutation record at one resolution.
#[derive(Clone, Debug, Serialize)]
pub struct FaceCommutation {
    pub n: u32,
    /// `|restrict(exp(tG) u) - exp(t G_F) restrict(u)|`: discrete against
    /// discrete, roundoff-sized because faces are invariant for the scheme.
    pub discrete_defect: f64,
    /// `|restrict(exp(tG) u) - T_F(t) restrict(u)|` against the exact
    /// polynomial face semigroup.
    pub error_vs_exact: f64,
}

/// Compares the parent semigroup restricted to `face` with the face
/// semigroup, both discrete and exact, for polynomial initial data.
pub fn face_commutation(d: usize, n: u32, face: &Face, u: &Poly, t: f64) -> Result<FaceCommutation> {
    let grid = Arc::new(crate::simplex::build_grid(d, n)?);
    let gen = assemble_simplex_generator(Arc::clone(&grid))?;
    let (fgrid, map) = restrict_to_face(&grid, face)?;
    let u0 = grid.sample(|x| u.eval_f64(x));
    let evolved = expm_action(gen.matrix(), &u0, t)?;
    let restricted: Vec<f64> = map.iter().map(|&i| evolved[i]).collect();

    let fdim = fgrid.dim();
    let uf = u.restrict_to_face(face);
    let fvals0: Vec<f64> = map.iter().map(|&i| u0[i]).collect();
    let (discrete, exact): (Vec<f64>, Vec<f64>) = if fdim == 0 {
        (fvals0.clone(), fvals0)
    } else {
        let fgen = assemble_unchecked(Arc::new(fgrid.clone()))?;
        let disc = expm_action(fgen.matrix(), &fvals0, t)?;
        let op = assemble_any(fdim, uf.degree())?;
        let coeffs: Vec<f64> = uf.to_basis(op.basis())?.iter().map(crate::poly::rat_to_f64).collect();
        let evolved_poly = poly_semigroup_apply(&op, &coeffs, t)?;
        let p = Poly::from_basis_f64(op.basis(), &evolved_poly)?;
        let ex = (0..fgrid.len()).map(|i| p.eval_f64(&fgrid.coords(i))).collect();
        (disc, ex)
    };
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(FaceCommutation {
        n,
        discrete_defect: max_diff(&restricted, &discrete),
        error_vs_exact: max_diff(&restricted, &exact),
    })
}

/// The `k` eigenvalues of largest real part, by subspace iteration on
/// `exp(tau G)` followed by a Rayleigh-Ritz step; `mu -> ln(mu) / tau`.
pub fn leading_eigenvalues(gen: &SparseMatrix, k: usize, tau: f64) -> Result<Vec<Complex64>> {
    use rand::{Rng, SeedableRng};
    if !(tau > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    let n = gen.nrows();
    let p = (k + 4).min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut q = DMatrix::<f64>::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let apply = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(n, m.ncols());
        for c in 0..m.ncols() {
            let col: Vec<f64> = m.column(c).iter().copied().collect();
            let e = expm_action(gen, &col, tau)?;
            out.column_mut(c).copy_from_slice(&e);
        }
        Ok(out)
    };
    for _ in 0..60 {
        q = apply(&q)?.qr().q();
    }
    let h = q.transpose() * apply(&q)?;
    let schur = nalgebra::linalg::Schur::try_new(h, 1e-14, 100_000)
        .ok_or_else(|| Error::Internal("Ritz eigenproblem did not converge".into()))?;
    let mut eig: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|mu| mu.ln() / tau)
        .collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re));
    eig.truncate(k);
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::rat;
    use crate::simplex::build_grid;

    fn gen(d: usize, n: u32) -> DiscreteGenerator {
        assemble_simplex_generator(Arc::new(build_grid(d, n).unwrap())).unwrap()
    }

    #[test]
    fn markov_structure() {
        for d in 1..=3 {
            for n in [4, 7, 12] {
                let g = gen(d, n);
                let r = g.matrix().markov_report(0.0);
                assert!(r.ok, "d={d} n={n}: {r:?}");
            }
        }
    }

    #[test]
    fn vertex_rows_vanish() {
        let g = gen(3, 6);
        for i in 0..g.grid().len() {
            if g.grid().is_vertex(i) {
                assert_eq!(g.matrix().row(i).count(), 0);
                assert!(g.stencil(i).is_empty());
            }
        }
    }

    #[test]
    fn face_rows_stay_on_face() {
        let g = gen(3, 8);
        for i in 0..g.grid().len() {
            let tag = g.grid().face_tag(i);
            for (j, _) in g.matrix().row(i) {
                let kj = g.grid().lattice(j);
                for &z in &tag.zeroed {
                    assert_eq!(kj[z], 0);
                }
                if tag.top {
                    assert_eq!(kj.iter().sum::<u32>(), 8);
                }
            }
        }
    }

    #[test]
    fn affine_and_quadratic_exact() {
        let g = gen(2, 16);
        let aff = g.grid().sample(|x| 1.0 + 2.0 * x[0] - 3.0 * x[1]);
        assert!(g.apply(&aff).unwrap().iter().all(|v| v.abs() < 1e-12));
        let q = g.grid().sample(|x| x[0] * x[0] - x[0]);
        let gq = g.apply(&q).unwrap();
        for (a, b) in gq.iter().zip(&q) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn order_of_quartic() {
        let u = Poly::monomial(2, vec![4, 0], rat(1, 1));
        let f = consistency_order(2, &u, &[8, 16, 32]).unwrap();
        assert!(!f.exact);
        assert!((f.order.unwrap() - 2.0).abs() < 0.1, "{f:?}");
        let cubic = Poly::monomial(2, vec![3, 0], rat(1, 1));
        assert!(consistency_order(2, &cubic, &[8, 16, 32]).unwrap().exact);
        assert!(consistency_order(2, &cubic, &[8, 16]).is_err());
    }

    #[test]
    fn face_commutation_small() {
        let u = &Poly::monomial(2, vec![2, 2], rat(1, 1)) + &Poly::monomial(2, vec![4, 0], rat(1, 1));
        let face = Face::new(2, &[1], false).unwrap();
        let r = face_commutation(2, 12, &face, &u, 0.5).unwrap();
        assert!(r.discrete_defect < 1e-12, "{r:?}");
        assert!(r.error_vs_exact > 0.0 && r.error_vs_exact < 1e-2);
    }

    #[test]
    fn leading_spectrum_small() {
        let g = gen(2, 10);
        let e = leading_eigenvalues(g.matrix(), 6, 1.0).unwrap();
        for z in &e[..3] {
            assert!(z.norm() < 1e-9);
        }
        for z in &e[3..6] {
            assert!((z.re + 1.0).abs() < 1e-8 && z.im.abs() < 1e-8);
        }
    }
}
