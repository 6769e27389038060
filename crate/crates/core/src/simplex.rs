//! Geometry of the canonical simplex `S_d = {x >= 0, sum x <= 1}`: points,
//! lattice grids with exact face tags, faces and their charts, graded
//! monomial bases and grid functions.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};

/// Tolerance used when validating constructed points.
pub const POINT_TOL: f64 = 1e-12;

/// A point of `S_d` in the coordinates `x_1..x_d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("coords", "a point needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite() || *c < -POINT_TOL) {
            return Err(invalid("coords", format!("negative or non-finite coordinate in {coords:?}")));
        }
        let s: f64 = coords.iter().sum();
        if s > 1.0 + POINT_TOL {
            return Err(invalid("coords", format!("coordinate sum {s} exceeds 1")));
        }
        Ok(Self { coords })
    }

    pub fn barycenter(d: usize) -> Self {
        Self {
            coords: vec![1.0 / (d as f64 + 1.0); d],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// All vectors of `len` nonnegative integers summing to `total`, in
/// ascending lexicographic order.
pub fn compositions(len: usize, total: u32) -> Vec<Vec<u32>> {
    fn rec(len: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if len == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=total {
            prefix.push(first);
            rec(len - 1, total - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if len == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(len, total, &mut Vec::with_capacity(len), &mut out);
    out
}

/// Binomial coefficient as `u128`; panics on overflow, which only happens
/// far outside the supported sizes.
pub fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n.saturating_sub(k));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Active constraints of a lattice node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceTag {
    /// Coordinates (0-based) equal to zero.
    pub zeroed: Vec<usize>,
    /// Whether the coordinates sum to one.
    pub top: bool,
}

/// Uniform lattice `{k/n : k in N^d, |k| <= n}` in graded-lex order.
#[derive(Clone, Debug)]
pub struct SimplexGrid {
    d: usize,
    n: u32,
    nodes: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

/// Builds the lattice grid of `S_d` with resolution `n`.
pub fn build_grid(d: usize, n: u32) -> Result<SimplexGrid> {
    if d == 0 {
        return Err(invalid("d", "dimension must be positive"));
    }
    if n == 0 {
        return Err(invalid("n", "resolution must be positive"));
    }
    let count = binomial(u64::from(n) + d as u64, d as u64);
    if count > 50_000_000 {
        return Err(Error::Capacity(format!("{count} grid nodes")));
    }
    Ok(SimplexGrid::with_dim(d, n))
}

impl SimplexGrid {
    /// Internal constructor that also accepts `d = 0` (a single vertex).
    pub(crate) fn with_dim(d: usize, n: u32) -> Self {
        let mut nodes = Vec::new();
        for level in 0..=n {
            if d == 0 && level > 0 {
                break;
            }
            nodes.extend(compositions(d, level));
        }
        let index = nodes.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Self { d, n, nodes, index }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn resolution(&self) -> u32 {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / f64::from(self.n)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integer lattice coordinates of node `i`.
    pub fn lattice(&self, i: usize) -> &[u32] {
        &self.nodes[i]
    }

    pub fn lattice_nodes(&self) -> &[Vec<u32>] {
        &self.nodes
    }

    pub fn index_of(&self, k: &[u32]) -> Option<usize> {
        self.index.get(k).copied()
    }

    /// Index of `k + offset` if that lattice point lies in the grid.
    pub fn neighbor(&self, k: &[u32], offset: &[i32]) -> Option<usize> {
        let mut m = Vec::with_capacity(k.len());
        for (a, b) in k.iter().zip(offset) {
            let v = i64::from(*a) + i64::from(*b);
            if v < 0 {
                return None;
            }
            m.push(v as u32);
        }
        self.index_of(&m)
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let n = f64::from(self.n);
        self.nodes[i].iter().map(|&k| f64::from(k) / n).collect()
    }

    pub fn point(&self, i: usize) -> SimplexPoint {
        SimplexPoint {
            coords: self.coords(i),
        }
    }

    pub fn face_tag(&self, i: usize) -> FaceTag {
        let k = &self.nodes[i];
        FaceTag {
            zeroed: (0..self.d).filter(|&j| k[j] == 0).collect(),
            top: k.iter().sum::<u32>() == self.n,
        }
    }

    pub fn is_vertex(&self, i: usize) -> bool {
        let k = &self.nodes[i];
        k.iter().filter(|&&v| v != 0).count() == 0 || k.iter().any(|&v| v == self.n)
    }

    /// Samples a function of the coordinates at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.coords(i))).collect()
    }

    pub fn to_json(&self, values: &[Complex64]) -> Result<serde_json::Value> {
        check_len(self.len(), values.len())?;
        Ok(serde_json::json!({
            "d": self.d,
            "n": self.n,
            "nodes": self.nodes,
            "values": values.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>(),
        }))
    }
}

/// A proper face of `S_d`: a set of coordinates set to zero, optionally
/// together with the constraint `sum x = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    d: usize,
    zeroed: Vec<usize>,
    top: bool,
}

impl Face {
    pub fn new(d: usize, zeroed: &[usize], top: bool) -> Result<Self> {
        let mut z = zeroed.to_vec();
        z.sort_unstable();
        z.dedup();
        if z.len() != zeroed.len() {
            return Err(Error::InvalidFace("repeated coordinate".into()));
        }
        if let Some(&bad) = z.iter().find(|&&i| i >= d) {
            return Err(Error::InvalidFace(format!("coordinate {bad} out of range for d = {d}")));
        }
        if z.is_empty() && !top {
            return Err(Error::InvalidFace("no constraint given".into()));
        }
        if top && z.len() == d {
            return Err(Error::InvalidFace("all coordinates zero and sum one is empty".into()));
        }
        Ok(Self { d, zeroed: z, top })
    }

    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    pub fn zeroed(&self) -> &[usize] {
        &self.zeroed
    }

    pub fn top(&self) -> bool {
        self.top
    }

    /// Coordinates that are not forced to zero.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.d).filter(|i| !self.zeroed.contains(i)).collect()
    }

    /// Coordinates used as the face's intrinsic chart (kept coordinates,
    /// minus the last one when the face lies in `sum x = 1`).
    pub fn chart_coords(&self) -> Vec<usize> {
        let mut k = self.kept();
        if self.top {
            k.pop();
        }
        k
    }

    /// The coordinate eliminated through `sum x = 1`, if any.
    pub fn eliminated(&self) -> Option<usize> {
        if self.top {
            self.kept().last().copied()
        } else {
            None
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.chart_coords().len()
    }

    pub fn contains_lattice(&self, k: &[u32], n: u32) -> bool {
        self.zeroed.iter().all(|&i| k[i] == 0) && (!self.top || k.iter().sum::<u32>() == n)
    }

    /// Embeds face-chart lattice coordinates into the parent lattice.
    pub fn embed_lattice(&self, kf: &[u32], n: u32) -> Vec<u32> {
        let mut k = vec![0u32; self.d];
        let chart = self.chart_coords();
        for (c, &v) in chart.iter().zip(kf) {
            k[*c] = v;
        }
        if let Some(e) = self.eliminated() {
            k[e] = n - kf.iter().sum::<u32>();
        }
        k
    }

    /// Embeds face-chart real coordinates into the parent coordinates.
    pub fn embed_point(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for (c, &v) in self.chart_coords().iter().zip(y) {
            x[*c] = v;
        }
        if let Some(e) = self.eliminated() {
            x[e] = 1.0 - y.iter().sum::<f64>();
        }
        x
    }
}

/// Restricts a grid to a face. Returns the face grid in its intrinsic
/// dimension and the map from face-grid indices to parent indices.
pub fn restrict_to_face(grid: &SimplexGrid, face: &Face) -> Result<(SimplexGrid, Vec<usize>)> {
    if face.ambient_dim() != grid.dim() {
        return Err(Error::InvalidFace(format!(
            "face lives in dimension {}, grid in {}",
            face.ambient_dim(),
            grid.dim()
        )));
    }
    let fg = SimplexGrid::with_dim(face.intrinsic_dim(), grid.resolution());
    let map = fg
        .lattice_nodes()
        .iter()
        .map(|kf| {
            let k = face.embed_lattice(kf, grid.resolution());
            grid.index_of(&k)
                .ok_or_else(|| Error::Internal(format!("face node {k:?} missing from parent grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fg, map))
}

/// Exponent vector of a monomial `x^alpha`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex {
    exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

/// Monomials of degree at most `N` in `d` variables, sorted by degree and
/// then lexicographically.
#[derive(Clone, Debug)]
pub struct GradedPolyBasis {
    d: usize,
    max_degree: u32,
    monomials: Vec<MultiIndex>,
    index: HashMap<Vec<u32>, usize>,
    level_start: Vec<usize>,
}

impl GradedPolyBasis {
    pub fn new(d: usize, max_degree: u32) -> Self {
        let mut monomials = Vec::new();
        let mut level_start = Vec::with_capacity(max_degree as usize + 2);
        for m in 0..=max_degree {
            level_start.push(monomials.len());
            monomials.extend(compositions(d, m).into_iter().map(MultiIndex::new));
        }
        level_start.push(monomials.len());
        let index = monomials
            .iter()
            .enumerate()
            .map(|(i, a)| (a.exponents.clone(), i))
            .collect();
        Self {
            d,
            max_degree,
            monomials,
            index,
            level_start,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    /// Index range of the monomials of degree exactly `m`.
    pub fn level(&self, m: u32) -> std::ops::Range<usize> {
        let m = m as usize;
        self.level_start[m]..self.level_start[m + 1]
    }
}

/// Evaluates `sum_alpha c_alpha x^alpha` with direct powers and
/// compensated (Neumaier) summation.
pub fn eval_poly(basis: &GradedPolyBasis, coeffs: &[Complex64], p: &SimplexPoint) -> Result<Complex64> {
    check_len(basis.len(), coeffs.len())?;
    check_len(basis.dim(), p.dim())?;
    let powers = power_table(p.coords(), basis.max_degree());
    let mut re = Neumaier::default();
    let mut im = Neumaier::default();
    for (mono, c) in basis.monomials().iter().zip(coeffs) {
        let v = monomial_value(&powers, mono.exponents());
        re.add(c.re * v);
        im.add(c.im * v);
    }
    Ok(Complex64::new(re.sum(), im.sum()))
}

/// Real-coefficient variant of [`eval_poly`] at raw coordinates.
pub fn eval_poly_real(basis: &GradedPolyBasis, coeffs: &[f64], x: &[f64]) -> f64 {
    let powers = power_table(x, basis.max_degree());
    let mut acc = Neumaier::default();
    for (mono, c) in basis.monomials().iter().zip(coeffs) {
        acc.add(c * monomial_value(&powers, mono.exponents()));
    }
    acc.sum()
}

fn power_table(x: &[f64], max_degree: u32) -> Vec<Vec<f64>> {
    x.iter()
        .map(|&xi| {
            let mut row = Vec::with_capacity(max_degree as usize + 1);
            let mut acc = 1.0;
            for _ in 0..=max_degree {
                row.push(acc);
                acc *= xi;
            }
            row
        })
        .collect()
}

fn monomial_value(powers: &[Vec<f64>], exps: &[u32]) -> f64 {
    exps.iter()
        .zip(powers)
        .map(|(&e, row)| row[e as usize])
        .product()
}

#[derive(Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Complex samples attached to a grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<SimplexGrid>,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(grid: Arc<SimplexGrid>, values: Vec<Complex64>) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn from_real(grid: Arc<SimplexGrid>, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.grid
            .to_json(&self.values)
            .expect("lengths checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        assert_eq!(build_grid(1, 2).unwrap().len(), 3);
        assert_eq!(build_grid(2, 2).unwrap().len(), 6);
        assert_eq!(build_grid(3, 4).unwrap().len(), 35);
        let g = build_grid(1, 2).unwrap();
        assert_eq!(
            (0..3).map(|i| g.coords(i)[0]).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn grid_counts_brute_force() {
        for d in 1..=4usize {
            for n in 1..=8u32 {
                let mut count = 0u128;
                let mut k = vec![0u32; d];
                loop {
                    if k.iter().sum::<u32>() <= n {
                        count += 1;
                    }
                    let mut j = 0;
                    while j < d {
                        k[j] += 1;
                        if k[j] <= n {
                            break;
                        }
                        k[j] = 0;
                        j += 1;
                    }
                    if j == d {
                        break;
                    }
                }
                assert_eq!(build_grid(d, n).unwrap().len() as u128, count);
                assert_eq!(binomial(u64::from(n) + d as u64, d as u64), count);
            }
        }
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(build_grid(0, 3).is_err());
        assert!(build_grid(2, 0).is_err());
    }

    #[test]
    fn graded_lex_order() {
        let g = build_grid(2, 2).unwrap();
        let expected: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![0, 1],
            vec![1, 0],
            vec![0, 2],
            vec![1, 1],
            vec![2, 0],
        ];
        assert_eq!(g.lattice_nodes(), expected.as_slice());
    }

    #[test]
    fn face_tags_match_coordinates() {
        let g = build_grid(3, 3).unwrap();
        for i in 0..g.len() {
            let k = g.lattice(i);
            let tag = g.face_tag(i);
            for j in 0..3 {
                assert_eq!(tag.zeroed.contains(&j), k[j] == 0);
            }
            assert_eq!(tag.top, k.iter().sum::<u32>() == 3);
        }
    }

    #[test]
    fn face_restrictions() {
        let g2 = build_grid(2, 4).unwrap();
        let (fg, map) = restrict_to_face(&g2, &Face::new(2, &[1], false).unwrap()).unwrap();
        assert_eq!(fg.dim(), 1);
        for (i, &p) in map.iter().enumerate() {
            assert_eq!(fg.coords(i)[0], g2.coords(p)[0]);
            assert_eq!(g2.coords(p)[1], 0.0);
        }

        let g = build_grid(2, 2).unwrap();
        let (fg, map) = restrict_to_face(&g, &Face::new(2, &[0, 1], false).unwrap()).unwrap();
        assert_eq!(fg.len(), 1);
        assert_eq!(g.lattice(map[0]), &[0, 0]);

        let g3 = build_grid(3, 3).unwrap();
        let (fg, _) = restrict_to_face(&g3, &Face::new(3, &[2], false).unwrap()).unwrap();
        assert_eq!(fg.len(), 10);
    }

    #[test]
    fn top_face_uses_last_coordinate_chart() {
        let g = build_grid(3, 4).unwrap();
        let face = Face::new(3, &[], true).unwrap();
        let (fg, map) = restrict_to_face(&g, &face).unwrap();
        assert_eq!(fg.len(), 15);
        for (i, &p) in map.iter().enumerate() {
            let k = g.lattice(p);
            assert_eq!(&k[..2], fg.lattice(i));
            assert_eq!(k.iter().sum::<u32>(), 4);
        }
    }

    #[test]
    fn invalid_faces() {
        assert!(Face::new(2, &[], false).is_err());
        assert!(Face::new(2, &[0, 1], true).is_err());
        assert!(Face::new(2, &[2], false).is_err());
        assert!(Face::new(2, &[0, 0], false).is_err());
    }

    #[test]
    fn eval_examples() {
        let b = GradedPolyBasis::new(2, 2);
        let one = Complex64::new(1.0, 0.0);
        let mut c = vec![Complex64::default(); b.len()];
        c[0] = one;
        let p = SimplexPoint::new(vec![0.3, 0.2]).unwrap();
        assert_eq!(eval_poly(&b, &c, &p).unwrap(), one);

        let mut c = vec![Complex64::default(); b.len()];
        c[b.index_of(&[1, 0]).unwrap()] = one;
        let p = SimplexPoint::new(vec![0.25, 0.5]).unwrap();
        assert_eq!(eval_poly(&b, &c, &p).unwrap().re, 0.25);

        let mut c = vec![Complex64::default(); b.len()];
        c[b.index_of(&[2, 0]).unwrap()] = one;
        c[b.index_of(&[1, 0]).unwrap()] = -one;
        let p = SimplexPoint::new(vec![0.5, 0.0]).unwrap();
        assert_eq!(eval_poly(&b, &c, &p).unwrap().re, -0.25);

        assert!(eval_poly(&b, &c[..3], &p).is_err());
    }

    #[test]
    fn basis_levels() {
        let b = GradedPolyBasis::new(3, 4);
        assert_eq!(b.len() as u128, binomial(7, 3));
        for m in 0..=4 {
            for i in b.level(m) {
                assert_eq!(b.monomials()[i].degree(), m);
            }
        }
    }

    #[test]
    fn points_validate() {
        assert!(SimplexPoint::new(vec![0.6, 0.5]).is_err());
        assert!(SimplexPoint::new(vec![-0.1, 0.5]).is_err());
        assert!(SimplexPoint::new(vec![0.5, 0.5]).is_ok());
    }
}
