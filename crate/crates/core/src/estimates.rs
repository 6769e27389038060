//! Verification experiments: sector resolvent scans, smoothing and defect
//! rate fits, multiplier resolvent checks and report aggregation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::banded::{rcm_ordering, ShiftedSolver};
use crate::charts::Parametrix;
use crate::discretize::DiscreteGenerator;
use crate::error::{check_len, invalid, Result};
use crate::expm::expm_path;
use crate::fit::{loglog_slope, SlopeFit};
use crate::multiplier::Multiplier;
use crate::poly::Poly;
use crate::sparse::SparseMatrix;
use crate::tensor::{
    build_partition_1d, choose_window_count, prism_windows, simplex_product_windows, ApproxResolvent, TensorGenerator, Window,
};
use crate::wf1d::{check_times, sup_norm, sup_norm_complex, Operator1D};

/// Named node-value functions used to estimate operator norms.
#[derive(Clone, Debug, Serialize)]
pub struct TestFamily {
    pub names: Vec<String>,
    pub functions: Vec<Vec<f64>>,
}

impl TestFamily {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn complex(&self) -> Vec<Vec<Complex64>> {
        self.functions
            .iter()
            .map(|u| u.iter().map(|&v| Complex64::new(v, 0.0)).collect())
            .collect()
    }

    pub fn extend(&mut self, other: TestFamily) {
        self.names.extend(other.names);
        self.functions.extend(other.functions);
    }
}

/// 10 functions with independent uniform node values in `[-1, 1]` and 10
/// random polynomials of degree at most 3, sampled at `points`.
pub fn standard_family(points: &[Vec<f64>], seed: u64) -> TestFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points.first().map_or(1, Vec::len);
    let mut fam = TestFamily {
        names: Vec::new(),
        functions: Vec::new(),
    };
    for k in 0..10 {
        fam.names.push(format!("nodes{k}"));
        fam.functions.push(points.iter().map(|_| rng.random_range(-1.0..=1.0)).collect());
    }
    for k in 0..10 {
        let p = Poly::random(&mut rng, dim, 3);
        fam.names.push(format!("poly{k}"));
        fam.functions.push(points.iter().map(|x| p.eval_f64(x)).collect());
    }
    fam
}

/// Unit steps `sign(x_k - c)` across each coordinate `k` at the given
/// levels; the natural rough data for rate fits.
pub fn step_family(points: &[Vec<f64>], levels: &[f64]) -> TestFamily {
    let dim = points.first().map_or(1, Vec::len);
    let mut fam = TestFamily {
        names: Vec::new(),
        functions: Vec::new(),
    };
    for k in 0..dim {
        for &c in levels {
            fam.names.push(format!("step{k}@{c}"));
            fam.functions
                .push(points.iter().map(|x| if x[k] > c { 1.0 } else { -1.0 }).collect());
        }
    }
    fam
}

/// An operator with a weighted-gradient seminorm per direction.
pub enum ScanOperator<'a> {
    Simplex(&'a DiscreteGenerator),
    /// `unit_interval[c]` selects the `x(1-x)` weight for interval factors.
    Prism { gen: &'a TensorGenerator, unit_interval: Vec<bool> },
    Interval(&'a Operator1D),
    /// A bare generator: resolvent norms only, no gradients.
    Matrix(&'a SparseMatrix),
}

impl ScanOperator<'_> {
    pub fn matrix(&self) -> &SparseMatrix {
        match self {
            Self::Simplex(g) => g.matrix(),
            Self::Prism { gen, .. } => gen.matrix(),
            Self::Interval(op) => op.matrix(),
            Self::Matrix(m) => m,
        }
    }

    pub fn directions(&self) -> usize {
        match self {
            Self::Simplex(g) => g.grid().dim(),
            Self::Prism { gen, .. } => gen.prism().dim(),
            Self::Interval(_) => 1,
            Self::Matrix(_) => 0,
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Simplex(g) => (0..g.grid().len()).map(|i| g.grid().coords(i)).collect(),
            Self::Prism { gen, .. } => gen.prism().all_coords(),
            Self::Interval(op) => op.nodes().iter().map(|&x| vec![x]).collect(),
            Self::Matrix(_) => Vec::new(),
        }
    }

    /// Smallest mesh width, for the resolution check of time windows.
    pub fn mesh(&self) -> f64 {
        match self {
            Self::Simplex(g) => g.grid().h(),
            Self::Prism { gen, .. } => {
                let h = |f: &crate::tensor::FactorGrid| match f {
                    crate::tensor::FactorGrid::Simplex(g) => g.h(),
                    crate::tensor::FactorGrid::Interval(v) => v[1] - v[0],
                };
                h(gen.prism().left()).min(h(gen.prism().right()))
            }
            Self::Interval(op) => op.h(),
            Self::Matrix(_) => 0.0,
        }
    }

    pub fn weighted_gradients(&self, v: &[Complex64]) -> Vec<f64> {
        match self {
            Self::Simplex(g) => (0..g.grid().dim()).map(|i| g.weighted_gradient_norm(v, i)).collect(),
            Self::Prism { gen, unit_interval } => (0..gen.prism().dim())
                .map(|c| gen.weighted_gradient_norm(v, c, unit_interval.get(c).copied().unwrap_or(true)))
                .collect(),
            Self::Interval(op) => vec![op.weighted_gradient_norm(v)],
            Self::Matrix(_) => Vec::new(),
        }
    }
}

/// Rays and moduli of a sector scan, plus explicitly listed points.
#[derive(Clone, Debug, Serialize)]
pub struct SectorScanSpec {
    pub rays: Vec<f64>,
    pub moduli: Vec<f64>,
    pub explicit: Vec<Complex64>,
}

impl SectorScanSpec {
    pub fn new(rays: Vec<f64>, moduli: Vec<f64>) -> Self {
        Self {
            rays,
            moduli,
            explicit: Vec::new(),
        }
    }

    /// Rays `0, +-pi/4, +-pi/2, +-3pi/4` and 16 moduli in `[1, 1e5]`.
    pub fn standard() -> Self {
        let rays = vec![0.0, PI / 4.0, -PI / 4.0, PI / 2.0, -PI / 2.0, 0.75 * PI, -0.75 * PI];
        Self::new(rays, crate::fit::logspace(1.0, 1e5, 16))
    }

    fn points(&self) -> Vec<(f64, f64, Complex64)> {
        let mut pts = Vec::new();
        for &th in &self.rays {
            for &m in &self.moduli {
                pts.push((th, m, Complex64::from_polar(m, th)));
            }
        }
        for &l in &self.explicit {
            pts.push((l.arg(), l.norm(), l));
        }
        pts
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorRecord {
    pub theta: f64,
    pub modulus: f64,
    pub lambda: Complex64,
    /// `sup_u |lambda| ||R(lambda) u|| / ||u||` over the family.
    pub resolvent_norm: Option<f64>,
    /// `sup_u ||sqrt(a_i) D_i R(lambda) u|| / ||u||` per direction.
    pub gradient_norms: Vec<f64>,
    pub rcond: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorScan {
    pub spec: SectorScanSpec,
    pub records: Vec<SectorRecord>,
}

/// Solves `(lambda - G) v = u` for every family member and scan point;
/// solver failures are recorded per point.
pub fn run_sector_scan(op: &ScanOperator<'_>, family: &TestFamily, spec: &SectorScanSpec) -> Result<SectorScan> {
    if spec.rays.iter().any(|t| !(t.abs() < PI)) {
        return Err(invalid("rays", "angles must lie strictly inside (-pi, pi)"));
    }
    if spec.moduli.iter().any(|m| !(*m > 0.0)) {
        return Err(invalid("moduli", "moduli must be positive"));
    }
    let g = op.matrix();
    for u in &family.functions {
        check_len(g.nrows(), u.len())?;
    }
    let perm = rcm_ordering(g);
    let fam = family.complex();
    let records = spec
        .points()
        .into_par_iter()
        .map(|(theta, modulus, lambda)| {
            let mut rec = SectorRecord {
                theta,
                modulus,
                lambda,
                resolvent_norm: None,
                gradient_norms: Vec::new(),
                rcond: None,
                failure: None,
            };
            let solver = match ShiftedSolver::new(g, lambda, 1.0, Some(perm.clone())) {
                Ok(s) => s,
                Err(e) => {
                    rec.failure = Some(e.to_string());
                    return rec;
                }
            };
            rec.rcond = Some(solver.rcond());
            let mut norm: f64 = 0.0;
            let mut grads = vec![0.0f64; op.directions()];
            for u in &fam {
                let nu = sup_norm_complex(u);
                if nu == 0.0 {
                    continue;
                }
                match solver.solve(u) {
                    Ok(v) => {
                        norm = norm.max(modulus * sup_norm_complex(&v) / nu);
                        for (gmax, gv) in grads.iter_mut().zip(op.weighted_gradients(&v)) {
                            *gmax = gmax.max(gv / nu);
                        }
                    }
                    Err(e) => {
                        rec.failure = Some(e.to_string());
                        return rec;
                    }
                }
            }
            if !norm.is_finite() {
                rec.failure = Some("non-finite resolvent norm".into());
                return rec;
            }
            rec.resolvent_norm = Some(norm);
            rec.gradient_norms = grads;
            rec
        })
        .collect();
    Ok(SectorScan {
        spec: spec.clone(),
        records,
    })
}

impl SectorScan {
    fn on_ray(&self, theta: f64) -> impl Iterator<Item = &SectorRecord> {
        self.records.iter().filter(move |r| (r.theta - theta).abs() < 1e-12)
    }

    pub fn failures(&self) -> Vec<&SectorRecord> {
        self.records.iter().filter(|r| r.failure.is_some()).collect()
    }

    /// `M(theta) = sup |lambda| ||R(lambda)||` along a ray, or `None` if any
    /// point of the ray failed.
    pub fn sector_constant(&self, theta: f64) -> Option<f64> {
        let mut m: f64 = 0.0;
        let mut any = false;
        for r in self.on_ray(theta) {
            m = m.max(r.resolvent_norm?);
            any = true;
        }
        any.then_some(m)
    }

    /// Log-log fit of the weighted gradient norm in direction `dir` against
    /// `|lambda|` over `[lo, hi]` on a ray.
    pub fn gradient_fit(&self, theta: f64, dir: usize, lo: f64, hi: f64) -> Option<SlopeFit> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .on_ray(theta)
            .filter(|r| r.modulus >= lo * (1.0 - 1e-12) && r.modulus <= hi * (1.0 + 1e-12))
            .filter_map(|r| r.gradient_norms.get(dir).map(|g| (r.modulus, *g)))
            .unzip();
        loglog_slope(&xs, &ys)
    }

    pub fn table(&self) -> Table {
        let dirs = self.records.iter().map(|r| r.gradient_norms.len()).max().unwrap_or(0);
        let mut headers: Vec<String> = ["theta", "modulus", "re_lambda", "im_lambda", "resolvent_norm", "rcond"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        headers.extend((0..dirs).map(|i| format!("grad_{i}")));
        headers.push("failure".into());
        let rows = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![
                    fmt(r.theta),
                    fmt(r.modulus),
                    fmt(r.lambda.re),
                    fmt(r.lambda.im),
                    opt(r.resolvent_norm),
                    opt(r.rcond),
                ];
                row.extend((0..dirs).map(|i| opt(r.gradient_norms.get(i).copied())));
                row.push(r.failure.clone().unwrap_or_default());
                row
            })
            .collect();
        Table { headers, rows }
    }
}

/// A plain table of formatted cells for CSV output.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// `sup_u ||R(lambda) u|| / ||u||` over the family for `d = 1` next to the
/// exact sup norm `max_i sum_j |R_ij|`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormCrossCheck {
    pub estimate: f64,
    pub exact: f64,
}

pub fn resolvent_norm_cross_check(op: &Operator1D, lambda: Complex64, family: &TestFamily) -> Result<NormCrossCheck> {
    let solver = ShiftedSolver::new(op.matrix(), lambda, 1.0, None)?;
    let n = op.len();
    let mut rows = vec![0.0; n];
    for j in 0..n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[j] = Complex64::new(1.0, 0.0);
        let col = solver.solve(&e)?;
        for (r, c) in rows.iter_mut().zip(&col) {
            *r += c.norm();
        }
    }
    let mut est: f64 = 0.0;
    for u in family.complex() {
        let nu = sup_norm_complex(&u);
        if nu > 0.0 {
            est = est.max(sup_norm_complex(&solver.solve(&u)?) / nu);
        }
    }
    Ok(NormCrossCheck {
        estimate: est,
        exact: rows.into_iter().fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingScan {
    pub times: Vec<f64>,
    /// `norms[dir][k] = sup_u ||sqrt(a) D_dir T(t_k) u|| / ||u||`.
    pub norms: Vec<Vec<f64>>,
    pub fits: Vec<Option<SlopeFit>>,
    pub large_times: Vec<f64>,
    pub large_norms: Vec<Vec<f64>>,
    /// Norms at the large times never grow by more than 5% step to step.
    pub large_time_bounded: bool,
}

/// Gradient smoothing along `T(t) = exp(tG)` for each family member. `times`
/// must satisfy `min t >= 2 h^2`; `large_times` (possibly empty) feed the
/// boundedness check.
pub fn run_smoothing_scan(op: &ScanOperator<'_>, family: &TestFamily, times: &[f64], large_times: &[f64]) -> Result<SmoothingScan> {
    check_times(times)?;
    if !large_times.is_empty() {
        check_times(large_times)?;
    }
    let h = op.mesh();
    if times[0] < 2.0 * h * h {
        return Err(invalid("times", format!("smallest time {} is below the resolution floor 2h^2 = {}", times[0], 2.0 * h * h)));
    }
    let g = op.matrix();
    let dirs = op.directions();
    let mut all: Vec<f64> = times.to_vec();
    all.extend_from_slice(large_times);
    let per_u: Result<Vec<(f64, Vec<Vec<f64>>)>> = family
        .functions
        .par_iter()
        .map(|u| {
            check_len(g.nrows(), u.len())?;
            let path = expm_path(g, u, &sorted(&all))?;
            let grads = path
                .iter()
                .map(|v| {
                    let c: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                    op.weighted_gradients(&c)
                })
                .collect();
            Ok((sup_norm(u), grads))
        })
        .collect();
    let order = sorted(&all);
    let index = |t: f64| order.iter().position(|&s| s == t).expect("time present");
    let mut norms = vec![vec![0.0f64; times.len()]; dirs];
    let mut large = vec![vec![0.0f64; large_times.len()]; dirs];
    for (nu, grads) in per_u? {
        if nu == 0.0 {
            continue;
        }
        for dir in 0..dirs {
            for (k, &t) in times.iter().enumerate() {
                norms[dir][k] = norms[dir][k].max(grads[index(t)][dir] / nu);
            }
            for (k, &t) in large_times.iter().enumerate() {
                large[dir][k] = large[dir][k].max(grads[index(t)][dir] / nu);
            }
        }
    }
    // roundoff of the exponential shows up in differences divided by h
    let floor = 1e-10 / h;
    let fits = norms
        .iter()
        .map(|ys| {
            if ys.iter().all(|v| *v <= floor) {
                None
            } else {
                loglog_slope(times, ys)
            }
        })
        .collect();
    let large_time_bounded = large.iter().all(|ys| ys.windows(2).all(|w| w[1] <= 1.05 * w[0] + floor));
    Ok(SmoothingScan {
        times: times.to_vec(),
        norms,
        fits,
        large_times: large_times.to_vec(),
        large_norms: large,
        large_time_bounded,
    })
}

fn sorted(ts: &[f64]) -> Vec<f64> {
    let mut v = ts.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[derive(Clone, Debug, Serialize)]
pub struct ParametrixRecord {
    pub theta: f64,
    pub modulus: f64,
    /// `sup_u ||B u|| / ||u||`.
    pub b_norm: f64,
    pub c_norm: f64,
    /// `sup_u ||(B + C) u|| / ||u||`.
    pub total_norm: f64,
    /// `sup_u |lambda| ||S u|| / ||u||`.
    pub s_norm: f64,
    /// Worst relative mismatch between `B + C` and the direct residual.
    pub consistency: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParametrixScan {
    pub records: Vec<ParametrixRecord>,
}

pub fn run_parametrix_scan(p: &Parametrix, family: &TestFamily, rays: &[f64], moduli: &[f64]) -> Result<ParametrixScan> {
    let fam = family.complex();
    let pts: Vec<(f64, f64)> = rays.iter().flat_map(|&t| moduli.iter().map(move |&m| (t, m))).collect();
    let records: Result<Vec<ParametrixRecord>> = pts
        .par_iter()
        .map(|&(theta, modulus)| {
            let r = p.at(Complex64::from_polar(modulus, theta))?;
            let mut rec = ParametrixRecord {
                theta,
                modulus,
                b_norm: 0.0,
                c_norm: 0.0,
                total_norm: 0.0,
                s_norm: 0.0,
                consistency: 0.0,
            };
            for u in &fam {
                let nu = sup_norm_complex(u);
                if nu == 0.0 {
                    continue;
                }
                let d = r.defect(u)?;
                rec.b_norm = rec.b_norm.max(sup_norm_complex(&d.b) / nu);
                rec.c_norm = rec.c_norm.max(sup_norm_complex(&d.c) / nu);
                rec.total_norm = rec.total_norm.max(sup_norm_complex(&d.residual) / nu);
                rec.s_norm = rec.s_norm.max(modulus * sup_norm_complex(&d.su) / nu);
                rec.consistency = rec.consistency.max(d.consistency());
            }
            Ok(rec)
        })
        .collect();
    Ok(ParametrixScan { records: records? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefectPart {
    B,
    C,
    Total,
}

impl ParametrixScan {
    /// Smallest scanned modulus from which on every record (all rays) has
    /// total defect below 1.
    pub fn threshold(&self) -> Option<f64> {
        let mut mods: Vec<f64> = self.records.iter().map(|r| r.modulus).collect();
        mods.sort_by(f64::total_cmp);
        mods.dedup();
        let mut best = None;
        for &m in mods.iter().rev() {
            if self.records.iter().filter(|r| r.modulus == m).all(|r| r.total_norm < 1.0) {
                best = Some(m);
            } else {
                break;
            }
        }
        best
    }

    pub fn fit(&self, part: DefectPart, theta: f64, lo: f64, hi: f64) -> Option<SlopeFit> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .records
            .iter()
            .filter(|r| (r.theta - theta).abs() < 1e-12 && r.modulus >= lo * (1.0 - 1e-12) && r.modulus <= hi * (1.0 + 1e-12))
            .map(|r| {
                let y = match part {
                    DefectPart::B => r.b_norm,
                    DefectPart::C => r.c_norm,
                    DefectPart::Total => r.total_norm,
                };
                (r.modulus, y)
            })
            .unzip();
        loglog_slope(&xs, &ys)
    }

    /// Fitted constant `C` in `||S(lambda)|| <= 3C / |lambda|`.
    pub fn s_constant(&self) -> f64 {
        self.records.iter().map(|r| r.s_norm / 3.0).fold(0.0, f64::max)
    }

    pub fn table(&self) -> Table {
        let headers = ["theta", "modulus", "b_norm", "c_norm", "total_norm", "s_norm", "consistency"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = self
            .records
            .iter()
            .map(|r| {
                [r.theta, r.modulus, r.b_norm, r.c_norm, r.total_norm, r.s_norm, r.consistency]
                    .iter()
                    .map(|&v| fmt(v))
                    .collect()
            })
            .collect();
        Table { headers, rows }
    }
}

/// Largest modulus `a n^2 / 4` whose boundary layer `sqrt(a / |lambda|)`
/// still spans two cells of a grid with resolution `n`.
pub fn resolvable_modulus(n: u32, a: f64) -> f64 {
    a * f64::from(n) * f64::from(n) / 4.0
}

/// Result of the approximate-resolvent experiment for `m A`.
#[derive(Clone, Debug, Serialize)]
pub struct MultiplierExperiment {
    pub lambda: Complex64,
    pub m0: f64,
    pub sector_constant: f64,
    pub epsilon: f64,
    pub window_count: usize,
    pub windows: usize,
    /// Rings around each window's support when windows are solved on
    /// patches; `None` for whole-grid window solves.
    pub halo: Option<usize>,
    pub oscillation: f64,
    pub c1_norm: f64,
    pub c2_norm: f64,
    pub c3_norm: f64,
    pub defect_norm: f64,
    pub consistency: f64,
    pub neumann_terms: usize,
    pub max_rel_error: f64,
}

/// `sup |lambda| ||R(lambda, A)u|| / ||u||` along the ray of `lambda` for
/// `|lambda|` in `[1, |lambda|]`, with at least the value 1.
pub fn fitted_sector_constant(a: &SparseMatrix, family: &TestFamily, theta: f64, top: f64) -> Result<f64> {
    let spec = SectorScanSpec::new(vec![theta], crate::fit::logspace(1.0, top.max(1.0), 8));
    let scan = run_sector_scan(&ScanOperator::Matrix(a), family, &spec)?;
    Ok(scan.sector_constant(theta).unwrap_or(f64::INFINITY).max(1.0))
}

fn multiplier_experiment(
    a: &SparseMatrix,
    m_vals: Vec<f64>,
    windows: Vec<Window>,
    coords: &[Vec<f64>],
    m: &Multiplier,
    meta: (f64, f64, f64, usize),
    halo: Option<usize>,
    lambda: Complex64,
    family: &TestFamily,
) -> Result<MultiplierExperiment> {
    let (m0, k, eps, count) = meta;
    let osc = crate::tensor::freezing_oscillation(coords, &windows, m);
    let nwin = windows.len();
    let perm = rcm_ordering(a);
    let ar = match halo {
        Some(h) => ApproxResolvent::localized(a.clone(), m_vals, windows, lambda, h)?,
        None => ApproxResolvent::new(a.clone(), m_vals, windows, lambda, Some(perm.clone()))?,
    };
    let direct = ShiftedSolver::new(ar.perturbed(), lambda, 1.0, Some(perm))?;
    let mut out = MultiplierExperiment {
        lambda,
        m0,
        sector_constant: k,
        epsilon: eps,
        window_count: count,
        windows: nwin,
        halo,
        oscillation: osc,
        c1_norm: 0.0,
        c2_norm: 0.0,
        c3_norm: 0.0,
        defect_norm: 0.0,
        consistency: 0.0,
        neumann_terms: 0,
        max_rel_error: 0.0,
    };
    for u in family.complex() {
        let nu = sup_norm_complex(&u);
        if nu == 0.0 {
            continue;
        }
        let parts = ar.defect_decomposition(&u)?;
        out.c1_norm = out.c1_norm.max(sup_norm_complex(&parts.c1) / nu);
        out.c2_norm = out.c2_norm.max(sup_norm_complex(&parts.c2) / nu);
        out.c3_norm = out.c3_norm.max(sup_norm_complex(&parts.c3) / nu);
        out.defect_norm = out.defect_norm.max(sup_norm_complex(&parts.residual) / nu);
        out.consistency = out.consistency.max(parts.consistency());
        let (r, terms) = ar.neumann_resolvent(&u, 1e-12, 200)?;
        out.neumann_terms = out.neumann_terms.max(terms);
        let exact = direct.solve(&u)?;
        let err = r.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        out.max_rel_error = out.max_rel_error.max(err / sup_norm_complex(&exact).max(f64::MIN_POSITIVE));
    }
    Ok(out)
}

/// `m(y) A_2` on the prism with windows in `y` only; `m_y` is a function of
/// `y` alone. The window count is the smallest with oscillation at most
/// `m0 / (6 (1 + M))`.
pub fn prism_multiplier_experiment(gen: &TensorGenerator, m_y: &Multiplier, lambda: Complex64, family: &TestFamily) -> Result<MultiplierExperiment> {
    let coords = gen.prism().all_coords();
    let ys: Vec<Vec<f64>> = coords.iter().map(|c| vec![c[1]]).collect();
    let (m_vals, m0) = m_y.sample_checked(ys.iter().map(|c| c.as_slice()))?;
    let k = fitted_sector_constant(gen.matrix(), family, lambda.arg(), lambda.norm())?;
    let eps = m0 / (6.0 * (1.0 + k));
    let len = ys.iter().map(|c| c[0]).fold(0.0, f64::max);
    let count = choose_window_count(m_y, 1, len, eps, false, 4096)?;
    let part = build_partition_1d(count, len, 1.0)?;
    let m_prism = Multiplier::custom("m(y)", m0, {
        let m = m_y.clone();
        move |x: &[f64]| m.eval(&[x[1]])
    });
    let windows = prism_windows(&coords, 1, &part, &m_prism, &[0.0, 0.0]);
    multiplier_experiment(gen.matrix(), m_vals, windows, &coords, &m_prism, (m0, k, eps, count), None, lambda, family)
}

/// `m(x) A_d` on the simplex with product windows; the window count is the
/// smallest with oscillation at most `m0 / (2 3^d (1 + M))`. Windows are
/// solved on patches whose halo spans four decay lengths
/// `sqrt(max(m) / (2 |lambda|))` of the frozen resolvent, and at least two
/// rings.
pub fn simplex_multiplier_experiment(gen: &DiscreteGenerator, m: &Multiplier, lambda: Complex64, family: &TestFamily) -> Result<MultiplierExperiment> {
    let grid = gen.grid();
    let d = grid.dim();
    let coords: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.coords(i)).collect();
    let (m_vals, m0) = m.sample_checked(coords.iter().map(|c| c.as_slice()))?;
    let k = fitted_sector_constant(gen.matrix(), family, lambda.arg(), lambda.norm())?;
    let eps = m0 / (2.0 * 3f64.powi(d as i32) * (1.0 + k));
    let count = choose_window_count(m, d, 1.0, eps, true, 4096)?;
    let part = build_partition_1d(count, 1.0, 1.0)?;
    let windows = simplex_product_windows(grid, &part, m);
    let m_max = m_vals.iter().copied().fold(0.0, f64::max);
    let halo = ((4.0 * (m_max / (2.0 * lambda.norm())).sqrt() / grid.h()).ceil() as usize).max(2);
    multiplier_experiment(gen.matrix(), m_vals, windows, &coords, m, (m0, k, eps, count), Some(halo), lambda, family)
}

/// A named comparison `lower <= value <= upper`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub id: String,
    pub category: String,
    pub parameters: serde_json::Value,
    pub checks: Vec<Check>,
    pub oracle: String,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(id: &str, category: &str, oracle: &str, parameters: serde_json::Value) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            parameters,
            checks: Vec::new(),
            oracle: oracle.into(),
            notes: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) -> &mut Self {
        let pass = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        self.checks.push(Check {
            name: name.into(),
            value,
            lower,
            upper,
            pass,
        });
        self
    }

    pub fn check_le(&mut self, name: &str, value: f64, upper: f64) -> &mut Self {
        self.check(name, value, None, Some(upper))
    }

    pub fn check_range(&mut self, name: &str, value: f64, lower: f64, upper: f64) -> &mut Self {
        self.check(name, value, Some(lower), Some(upper))
    }

    /// A boolean outcome recorded as `1` (pass) or `0` against `[1, 1]`.
    pub fn check_true(&mut self, name: &str, ok: bool) -> &mut Self {
        self.check(name, if ok { 1.0 } else { 0.0 }, Some(1.0), Some(1.0))
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug, Serialize, Default, PartialEq, Eq)]
pub struct CategoryCount {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub pass: bool,
    pub passed: usize,
    pub failed: usize,
    pub categories: BTreeMap<String, CategoryCount>,
    pub reports: Vec<VerificationReport>,
}

/// Concatenates reports (sorted by category, then id) with a global flag.
pub fn aggregate_reports(mut reports: Vec<VerificationReport>) -> Summary {
    reports.sort_by(|a, b| (&a.category, &a.id).cmp(&(&b.category, &b.id)));
    let mut categories: BTreeMap<String, CategoryCount> = BTreeMap::new();
    for r in &reports {
        let c = categories.entry(r.category.clone()).or_default();
        if r.pass() {
            c.passed += 1;
        } else {
            c.failed += 1;
        }
    }
    let passed = reports.iter().filter(|r| r.pass()).count();
    Summary {
        pass: passed == reports.len(),
        passed,
        failed: reports.len() - passed,
        categories,
        reports,
    }
}
