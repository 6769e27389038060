//! One-dimensional factor operators: `A u = m(x) x u''` on `[0, b]` with a
//! Neumann condition at `b`, and `m(x) x (1 - x) u''` on `[0, 1]`.

use num_complex::Complex64;
use serde::Serialize;

use crate::banded::ShiftedSolver;
use crate::error::{check_len, invalid, Result};
use crate::expm::expm_path;
use crate::fit::{loglog_slope, min_constant_pair, ConstantPair, PairConstraint, SlopeFit};
use crate::multiplier::Multiplier;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Kind1D {
    /// `x u''` on `[0, b]`, `u'(b) = 0`.
    XNeumann { b: f64 },
    /// `x (1 - x) u''` on `[0, 1]`.
    XOneMinusX,
}

impl Kind1D {
    pub fn length(&self) -> f64 {
        match self {
            Self::XNeumann { b } => *b,
            Self::XOneMinusX => 1.0,
        }
    }

    /// The degenerate coefficient `a(x)`.
    pub fn coefficient(&self, x: f64) -> f64 {
        match self {
            Self::XNeumann { .. } => x,
            Self::XOneMinusX => x * (1.0 - x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Operator1D {
    kind: Kind1D,
    n: usize,
    nodes: Vec<f64>,
    m_vals: Vec<f64>,
    m0: f64,
    matrix: SparseMatrix,
}

pub fn discretize_1d(kind: Kind1D, m: &Multiplier, n: usize) -> Result<Operator1D> {
    if n < 4 {
        return Err(invalid("n", format!("need at least 4 intervals, got {n}")));
    }
    if let Kind1D::XNeumann { b } = kind {
        if !(b > 0.0) || !b.is_finite() {
            return Err(invalid("b", format!("interval length must be positive, got {b}")));
        }
    }
    let len = kind.length();
    let h = len / n as f64;
    let nodes: Vec<f64> = (0..=n).map(|k| if k == n { len } else { k as f64 * h }).collect();
    let (m_vals, m0) = m.sample_checked(nodes.iter().map(std::slice::from_ref))?;
    let mut trip = Vec::with_capacity(3 * (n + 1));
    for k in 0..=n {
        let w = m_vals[k] * kind.coefficient(nodes[k]) / (h * h);
        if w == 0.0 {
            continue;
        }
        if k == n {
            // mirror node u_{n+1} := u_{n-1}
            trip.push((k, k - 1, 2.0 * w));
            trip.push((k, k, -2.0 * w));
        } else {
            trip.push((k, k - 1, w));
            trip.push((k, k + 1, w));
            trip.push((k, k, -2.0 * w));
        }
    }
    Ok(Operator1D {
        kind,
        n,
        nodes,
        m_vals,
        m0,
        matrix: SparseMatrix::from_triplets(n + 1, n + 1, trip),
    })
}

impl Operator1D {
    pub fn kind(&self) -> Kind1D {
        self.kind
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        self.kind.length() / self.n as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn multiplier_values(&self) -> &[f64] {
        &self.m_vals
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), u.len())?;
        Ok(self.matrix.matvec(u))
    }

    /// `max_k sqrt(a(x_{k+1/2})) |u_{k+1} - u_k| / h`.
    pub fn weighted_gradient_norm(&self, u: &[Complex64]) -> f64 {
        let h = self.h();
        (0..self.n)
            .map(|k| {
                let mid = 0.5 * (self.nodes[k] + self.nodes[k + 1]);
                self.kind.coefficient(mid).sqrt() * (u[k + 1] - u[k]).norm() / h
            })
            .fold(0.0, f64::max)
    }

    pub fn weighted_gradient_norm_real(&self, u: &[f64]) -> f64 {
        let c: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.weighted_gradient_norm(&c)
    }
}

pub fn sup_norm(u: &[f64]) -> f64 {
    u.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sup_norm_complex(u: &[Complex64]) -> f64 {
    u.iter().fold(0.0, |m, v| m.max(v.norm()))
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientScanResult {
    pub epsilons: Vec<f64>,
    pub lhs: Vec<f64>,
    pub bound: Vec<f64>,
    pub constants: ConstantPair,
    pub certified: bool,
}

/// Largest `eps` allowed by the interval length: `min(sqrt(b/2), b/4, 1)`.
pub fn epsilon_cap(b: f64) -> f64 {
    (b / 2.0).sqrt().min(b / 4.0).min(1.0)
}

fn gradient_constraints(op: &Operator1D, u: &[f64], epsilons: &[f64]) -> Result<(f64, Vec<PairConstraint>)> {
    let au = op.apply(u)?;
    let lhs = op.weighted_gradient_norm_real(u);
    let (nu, nau) = (sup_norm(u), sup_norm(&au));
    Ok((
        lhs,
        epsilons
            .iter()
            .map(|&e| PairConstraint {
                lhs,
                a: nu / e,
                b: e * nau,
            })
            .collect(),
    ))
}

fn check_epsilons(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(invalid("epsilons", "empty list"));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("epsilons", "values must be positive"));
    }
    Ok(())
}

/// Smallest `(C, D)` with `||sqrt(a) u'|| <= C/eps ||u|| + D eps ||A u||` for
/// every scanned `eps`.
pub fn scan_gradient_inequality(op: &Operator1D, u: &[f64], epsilons: &[f64]) -> Result<GradientScanResult> {
    check_epsilons(epsilons)?;
    let (lhs, cons) = gradient_constraints(op, u, epsilons)?;
    let constants = min_constant_pair(&cons)?;
    let bound: Vec<f64> = cons.iter().map(|k| constants.c * k.a + constants.d * k.b).collect();
    let certified = bound.iter().all(|b| lhs <= *b);
    Ok(GradientScanResult {
        epsilons: epsilons.to_vec(),
        lhs: vec![lhs; epsilons.len()],
        bound,
        constants,
        certified,
    })
}

/// One `(C, D)` pair certified for every function of a family at every `eps`.
pub fn certify_gradient_family(op: &Operator1D, family: &[Vec<f64>], epsilons: &[f64]) -> Result<ConstantPair> {
    check_epsilons(epsilons)?;
    let mut cons = Vec::new();
    for u in family {
        cons.extend(gradient_constraints(op, u, epsilons)?.1);
    }
    min_constant_pair(&cons)
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingFit {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// `None` when the norms vanish (nothing to fit).
    pub fit: Option<SlopeFit>,
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("times", "empty list"));
    }
    if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(invalid("times", "times must be positive and finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times", "times must be strictly increasing"));
    }
    Ok(())
}

/// Fits the exponent of `t -> ||sqrt(a) (T(t) u0)'||`.
pub fn smoothing_rate_1d(op: &Operator1D, u0: &[f64], times: &[f64]) -> Result<SmoothingFit> {
    check_times(times)?;
    check_len(op.len(), u0.len())?;
    let path = expm_path(op.matrix(), u0, times)?;
    let norms: Vec<f64> = path.iter().map(|u| op.weighted_gradient_norm_real(u)).collect();
    // roundoff in the exponential shows up in differences divided by h
    let floor = 1e-10 * sup_norm(u0) / op.h();
    let fit = if norms.iter().all(|v| *v <= floor) {
        None
    } else {
        loglog_slope(times, &norms)
    };
    Ok(SmoothingFit {
        times: times.to_vec(),
        norms,
        fit,
    })
}

/// `(lambda - A_h)^{-1}` as a banded direct solver.
#[derive(Clone, Debug)]
pub struct Resolvent1D {
    solver: ShiftedSolver,
}

pub fn resolvent_1d(op: &Operator1D, lambda: Complex64) -> Result<Resolvent1D> {
    Ok(Resolvent1D {
        solver: ShiftedSolver::new(op.matrix(), lambda, 1.0, None)?,
    })
}

impl Resolvent1D {
    pub fn lambda(&self) -> Complex64 {
        self.solver.lambda()
    }

    pub fn apply(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        self.solver.solve(u)
    }

    pub fn apply_real(&self, u: &[f64]) -> Result<Vec<Complex64>> {
        self.solver.solve_real(u)
    }
}

/// Smallest `C` with `|u(x) - u(y)| <= C |sqrt(x) - sqrt(y)|` over node pairs.
pub fn equicontinuity_modulus(op: &Operator1D, u: &[f64]) -> Result<f64> {
    check_len(op.len(), u.len())?;
    let roots: Vec<f64> = op.nodes().iter().map(|x| x.sqrt()).collect();
    let mut c: f64 = 0.0;
    for i in 0..u.len() {
        for j in (i + 1)..u.len() {
            let den = (roots[i] - roots[j]).abs();
            if den > 0.0 {
                c = c.max((u[i] - u[j]).abs() / den);
            }
        }
    }
    Ok(c)
}

/// Smallest `C0` with `modulus(u) <= C0 (||u|| + ||A_h u||)` over a family.
pub fn fit_equicontinuity_constant(op: &Operator1D, family: &[Vec<f64>]) -> Result<f64> {
    let mut c0: f64 = 0.0;
    for u in family {
        let m = equicontinuity_modulus(op, u)?;
        let s = sup_norm(u) + sup_norm(&op.apply(u)?);
        if s > 0.0 {
            c0 = c0.max(m / s);
        }
    }
    Ok(c0)
}
