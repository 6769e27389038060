//! The Wright-Fisher operator on the graded monomial basis: exact matrix,
//! exact spectrum, the polynomial semigroup and face restriction.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{check_len, invalid, Error, Result};
use crate::poly::{f64_to_rat, rat, rat_to_f64, Poly, Rational};
use crate::simplex::{binomial, Face, GradedPolyBasis, Neumaier};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 6;
/// Largest supported basis size.
pub const MAX_BASIS: u128 = 100_000;

/// Exact matrix of `A_d` on the monomials of degree `<= N`; column `alpha`
/// holds the coefficients of `A_d x^alpha`. Columns are stored sparsely
/// since each has at most `d + 1` entries.
#[derive(Clone, Debug)]
pub struct PolyOperatorMatrix {
    basis: GradedPolyBasis,
    cols: Vec<Vec<(usize, Rational)>>,
}

pub fn assemble_poly_operator(d: usize, max_degree: u32) -> Result<PolyOperatorMatrix> {
    if d == 0 {
        return Err(invalid("d", "dimension must be positive"));
    }
    assemble_any(d, max_degree)
}

pub(crate) fn assemble_any(d: usize, max_degree: u32) -> Result<PolyOperatorMatrix> {
    if d > MAX_DIM {
        return Err(Error::Capacity(format!("d = {d} exceeds {MAX_DIM}")));
    }
    let size = binomial(u64::from(max_degree) + d as u64, d as u64);
    if size > MAX_BASIS {
        return Err(Error::Capacity(format!("basis size {size} exceeds {MAX_BASIS}")));
    }
    let basis = GradedPolyBasis::new(d, max_degree);
    let half = rat(1, 2);
    let cols = basis
        .monomials()
        .iter()
        .map(|mono| {
            let a = mono.exponents();
            let mut acc: BTreeMap<usize, Rational> = BTreeMap::new();
            // d_ij x^a = a_i (a_j - delta_ij) x^(a - e_i - e_j); multiply by
            // x_i delta_ij - x_i x_j and add up exponents.
            for i in 0..d {
                for j in 0..d {
                    let ai = i64::from(a[i]);
                    let aj = i64::from(a[j]) - i64::from(i == j);
                    if ai == 0 || aj <= 0 {
                        continue;
                    }
                    let c = Rational::from_integer(BigInt::from(ai * aj)) * &half;
                    let mut e: Vec<i64> = a.iter().map(|&v| i64::from(v)).collect();
                    e[i] -= 1;
                    e[j] -= 1;
                    if i == j {
                        let mut f = e.clone();
                        f[i] += 1;
                        push(&mut acc, &basis, &f, c.clone());
                    }
                    let mut f = e;
                    f[i] += 1;
                    f[j] += 1;
                    push(&mut acc, &basis, &f, -c);
                }
            }
            acc.into_iter().filter(|(_, v)| !v.is_zero()).collect()
        })
        .collect();
    Ok(PolyOperatorMatrix { basis, cols })
}

fn push(acc: &mut BTreeMap<usize, Rational>, basis: &GradedPolyBasis, e: &[i64], c: Rational) {
    let e: Vec<u32> = e.iter().map(|&v| v as u32).collect();
    let row = basis.index_of(&e).expect("image degree never exceeds source degree");
    *acc.entry(row).or_insert_with(Rational::zero) += c;
}

impl PolyOperatorMatrix {
    pub fn basis(&self) -> &GradedPolyBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn size(&self) -> usize {
        self.basis.len()
    }

    /// Nonzero entries `(row, value)` of column `c`.
    pub fn column(&self, c: usize) -> &[(usize, Rational)] {
        &self.cols[c]
    }

    pub fn entry(&self, r: usize, c: usize) -> Rational {
        self.cols[c]
            .iter()
            .find(|(i, _)| *i == r)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(Rational::zero)
    }

    pub fn to_f64_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.size();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (c, col) in self.cols.iter().enumerate() {
            for (r, v) in col {
                m[(*r, c)] = rat_to_f64(v);
            }
        }
        m
    }

    /// Exact matrix-vector product.
    pub fn apply(&self, coeffs: &[Rational]) -> Result<Vec<Rational>> {
        check_len(self.size(), coeffs.len())?;
        let mut out = vec![Rational::zero(); self.size()];
        for (c, col) in self.cols.iter().enumerate() {
            if coeffs[c].is_zero() {
                continue;
            }
            for (r, v) in col {
                out[*r] += v * &coeffs[c];
            }
        }
        Ok(out)
    }

    fn degree_of(&self, i: usize) -> u32 {
        self.basis.monomials()[i].degree()
    }

    /// Checks graded triangularity and the scalar diagonal blocks.
    pub fn check_structure(&self) -> Result<()> {
        for (c, col) in self.cols.iter().enumerate() {
            let m = self.degree_of(c);
            for (r, v) in col {
                let k = self.degree_of(*r);
                if k > m {
                    return Err(Error::Internal(format!("entry ({r}, {c}) raises degree")));
                }
                if k == m {
                    if *r != c {
                        return Err(Error::Internal(format!("off-diagonal entry ({r}, {c}) in block {m}")));
                    }
                    if *v != eigenvalue(m) {
                        return Err(Error::Internal(format!("diagonal ({c}, {c}) is {v}, expected {}", eigenvalue(m))));
                    }
                }
            }
            if m >= 2 && !col.iter().any(|(r, _)| *r == c) {
                return Err(Error::Internal(format!("missing diagonal entry in column {c}")));
            }
        }
        Ok(())
    }
}

/// `-m (m - 1) / 2`.
pub fn eigenvalue(m: u32) -> Rational {
    let m = i64::from(m);
    rat(-m * (m - 1), 2)
}

/// Number of monomials of degree exactly `m` in `d` variables.
pub fn multiplicity_formula(m: u32, d: usize) -> u128 {
    if d == 0 {
        return u128::from(m == 0);
    }
    binomial(u64::from(m) + d as u64 - 1, d as u64 - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub d: usize,
    #[serde(rename = "N")]
    pub max_degree: u32,
    /// `(eigenvalue, multiplicity)` sorted by decreasing eigenvalue.
    #[serde(serialize_with = "ser_eigs")]
    pub eigs: Vec<(Rational, usize)>,
}

fn ser_eigs<S: serde::Serializer>(eigs: &[(Rational, usize)], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(eigs.len()))?;
    for (v, m) in eigs {
        seq.serialize_element(&(v.numer().to_string(), v.denom().to_string(), *m))?;
    }
    seq.end()
}

impl SpectrumReport {
    pub fn total_multiplicity(&self) -> usize {
        self.eigs.iter().map(|(_, m)| m).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let eigs: Vec<serde_json::Value> = self
            .eigs
            .iter()
            .map(|(v, m)| {
                let num: i64 = v.numer().try_into().unwrap_or(i64::MIN);
                let den: i64 = v.denom().try_into().unwrap_or(i64::MIN);
                serde_json::json!([num, den, m])
            })
            .collect();
        serde_json::json!({ "d": self.d, "N": self.max_degree, "eigs": eigs })
    }

    pub fn multiplicity_of(&self, value: &Rational) -> usize {
        self.eigs
            .iter()
            .find(|(v, _)| v == value)
            .map_or(0, |(_, m)| *m)
    }
}

/// Reads the spectrum off the diagonal after checking triangularity.
pub fn exact_spectrum(op: &PolyOperatorMatrix) -> Result<SpectrumReport> {
    op.check_structure()?;
    let mut counts: BTreeMap<Rational, usize> = BTreeMap::new();
    for c in 0..op.size() {
        *counts.entry(op.entry(c, c)).or_insert(0) += 1;
    }
    let eigs: Vec<(Rational, usize)> = counts.into_iter().rev().collect();
    for m in 0..=op.basis().max_degree() {
        let lam = eigenvalue(m);
        let expected: u128 = (0..=op.basis().max_degree())
            .filter(|&k| eigenvalue(k) == lam)
            .map(|k| multiplicity_formula(k, op.dim()))
            .sum();
        let got = eigs.iter().find(|(v, _)| *v == lam).map_or(0, |(_, c)| *c);
        if got as u128 != expected {
            return Err(Error::Internal(format!(
                "eigenvalue {lam}: diagonal count {got} differs from formula {expected}"
            )));
        }
    }
    Ok(SpectrumReport {
        d: op.dim(),
        max_degree: op.basis().max_degree(),
        eigs,
    })
}

/// `exp(tM) c`, computed level by level from the triangular structure.
///
/// The solution restricted to degree `k` is `sum_{j >= k} e^{lambda_j t} a_{k,j}`
/// where the vectors `a_{k,j}` follow from an exact rational recursion;
/// floating point enters only through the exponentials.
pub fn poly_semigroup_apply(op: &PolyOperatorMatrix, coeffs: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid("t", format!("time must be finite and nonnegative, got {t}")));
    }
    check_len(op.size(), coeffs.len())?;
    let exact = coeffs.iter().map(|&v| f64_to_rat(v)).collect::<Result<Vec<_>>>()?;
    let parts = spectral_parts(op, &exact)?;
    let top = op.basis().max_degree();
    let weights: Vec<f64> = (0..=top).map(|j| (rat_to_f64(&eigenvalue(j)) * t).exp()).collect();
    let mut out = vec![0.0; op.size()];
    for (idx, o) in out.iter_mut().enumerate() {
        let k = op.degree_of(idx);
        let mut acc = Neumaier::default();
        for j in k..=top {
            let a = &parts[idx][(j - k) as usize];
            if !a.is_zero() {
                acc.add(weights[j as usize] * rat_to_f64(a));
            }
        }
        *o = acc.sum();
    }
    Ok(out)
}

/// Exact spectral decomposition of a coefficient vector: entry `[i][j - k]`
/// is the component of coefficient `i` (degree `k`) along `e^{lambda_j t}`.
pub fn spectral_parts(op: &PolyOperatorMatrix, c: &[Rational]) -> Result<Vec<Vec<Rational>>> {
    check_len(op.size(), c.len())?;
    let basis = op.basis();
    let top = basis.max_degree();
    let mut parts: Vec<Vec<Rational>> = (0..op.size())
        .map(|i| vec![Rational::zero(); (top - op.degree_of(i) + 1) as usize])
        .collect();
    for k in (0..=top).rev() {
        let range = basis.level(k);
        if k < top {
            for j in (k + 1)..=top {
                // L a_{k+1, j}: contributions from level k+1 columns.
                let mut image: BTreeMap<usize, Rational> = BTreeMap::new();
                for col in basis.level(k + 1) {
                    let a = &parts[col][(j - k - 1) as usize];
                    if a.is_zero() {
                        continue;
                    }
                    for (r, v) in op.column(col) {
                        if range.contains(r) {
                            *image.entry(*r).or_insert_with(Rational::zero) += v * a;
                        }
                    }
                }
                let gap = eigenvalue(j) - eigenvalue(k);
                for (r, v) in image {
                    if v.is_zero() {
                        continue;
                    }
                    if gap.is_zero() {
                        return Err(Error::Internal(format!("resonant coupling between degrees {k} and {j}")));
                    }
                    parts[r][(j - k) as usize] = v / &gap;
                }
            }
        }
        for i in range {
            let mut rest = c[i].clone();
            for a in &parts[i][1..] {
                rest -= a;
            }
            parts[i][0] = rest;
        }
    }
    Ok(parts)
}

/// `A_p` on a face together with the exact restriction map on coefficients.
#[derive(Clone, Debug)]
pub struct FaceOperator {
    pub face: Face,
    pub op: PolyOperatorMatrix,
    /// Column `alpha` holds the face-basis coefficients of `x^alpha|_F`.
    restriction: Vec<Vec<(usize, Rational)>>,
}

pub fn face_restrict_operator(op: &PolyOperatorMatrix, face: &Face) -> Result<FaceOperator> {
    if face.ambient_dim() != op.dim() {
        return Err(Error::InvalidFace(format!(
            "face dimension {} does not match operator dimension {}",
            face.ambient_dim(),
            op.dim()
        )));
    }
    let face_op = assemble_any(face.intrinsic_dim(), op.basis().max_degree())?;
    let restriction = op
        .basis()
        .monomials()
        .iter()
        .map(|m| {
            let p = Poly::monomial(op.dim(), m.exponents().to_vec(), Rational::one());
            let r = p.restrict_to_face(face).to_basis(face_op.basis())?;
            Ok(r.into_iter().enumerate().filter(|(_, v)| !v.is_zero()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FaceOperator {
        face: face.clone(),
        op: face_op,
        restriction,
    })
}

impl FaceOperator {
    pub fn restrict(&self, coeffs: &[Rational]) -> Result<Vec<Rational>> {
        check_len(self.restriction.len(), coeffs.len())?;
        let mut out = vec![Rational::zero(); self.op.size()];
        for (c, col) in self.restriction.iter().enumerate() {
            if coeffs[c].is_zero() {
                continue;
            }
            for (r, v) in col {
                out[*r] += v * &coeffs[c];
            }
        }
        Ok(out)
    }

    pub fn restrict_f64(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.restriction.len(), coeffs.len())?;
        let mut out = vec![0.0; self.op.size()];
        for (c, col) in self.restriction.iter().enumerate() {
            for (r, v) in col {
                out[*r] += rat_to_f64(v) * coeffs[c];
            }
        }
        Ok(out)
    }

    /// Largest `|R M_d - M_p R|` entry over all basis monomials; zero when
    /// the operator commutes with restriction.
    pub fn commutation_defect(&self, parent: &PolyOperatorMatrix) -> Result<Rational> {
        let mut worst = Rational::zero();
        for c in 0..parent.size() {
            let mut e = vec![Rational::zero(); parent.size()];
            e[c] = Rational::one();
            let lhs = self.restrict(&parent.apply(&e)?)?;
            let rhs = self.op.apply(&self.restrict(&e)?)?;
            for (a, b) in lhs.iter().zip(&rhs) {
                let diff = (a - b).abs();
                if diff > worst {
                    worst = diff;
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::wf_apply;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(d: usize, n: u32) -> Vec<(i64, usize)> {
        let s = exact_spectrum(&assemble_poly_operator(d, n).unwrap()).unwrap();
        s.eigs
            .iter()
            .map(|(v, m)| {
                assert!(v.is_integer());
                (i64::try_from(v.to_integer()).unwrap(), *m)
            })
            .collect()
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(spec(1, 3), vec![(0, 2), (-1, 1), (-3, 1)]);
        assert_eq!(spec(2, 3), vec![(0, 3), (-1, 3), (-3, 4)]);
        assert_eq!(spec(2, 4), vec![(0, 3), (-1, 3), (-3, 4), (-6, 5)]);
        assert_eq!(spec(3, 0), vec![(0, 1)]);
    }

    #[test]
    fn square_column() {
        let op = assemble_poly_operator(1, 3).unwrap();
        let b = op.basis();
        let col = op.column(b.index_of(&[2]).unwrap());
        let mut expect = vec![(b.index_of(&[1]).unwrap(), rat(1, 1)), (b.index_of(&[2]).unwrap(), rat(-1, 1))];
        expect.sort_by_key(|e| e.0);
        assert_eq!(col, expect.as_slice());
    }

    #[test]
    fn matches_symbolic_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in 1..=3 {
            let op = assemble_poly_operator(d, 4).unwrap();
            let u = Poly::random(&mut rng, d, 4);
            let c = u.to_basis(op.basis()).unwrap();
            let image = Poly::from_basis(op.basis(), &op.apply(&c).unwrap());
            assert_eq!(image, wf_apply(&u));
        }
    }

    #[test]
    fn affine_functions_annihilated() {
        for d in 1..=4 {
            let op = assemble_poly_operator(d, 3).unwrap();
            for c in op.basis().level(0).chain(op.basis().level(1)) {
                assert!(op.column(c).is_empty());
            }
        }
    }

    #[test]
    fn capacity_errors() {
        assert!(matches!(assemble_poly_operator(7, 2), Err(Error::Capacity(_))));
        assert!(matches!(assemble_poly_operator(6, 40), Err(Error::Capacity(_))));
    }

    #[test]
    fn semigroup_eigenfunction() {
        let op = assemble_poly_operator(2, 3).unwrap();
        let b = op.basis();
        let mut c = vec![0.0; b.len()];
        c[b.index_of(&[2, 0]).unwrap()] = 1.0;
        c[b.index_of(&[1, 0]).unwrap()] = -1.0;
        for &t in &[0.0, 0.3, 2.0] {
            let out = poly_semigroup_apply(&op, &c, t).unwrap();
            for (o, ci) in out.iter().zip(&c) {
                assert!((o - (-t).exp() * ci).abs() < 1e-15);
            }
        }
        assert!(poly_semigroup_apply(&op, &c, -1.0).is_err());
    }

    #[test]
    fn semigroup_matches_pade() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let op = assemble_poly_operator(3, 5).unwrap();
        let m = op.to_f64_dense();
        let u = Poly::random(&mut rng, 3, 5);
        let c: Vec<f64> = u.to_basis(op.basis()).unwrap().iter().map(rat_to_f64).collect();
        for &t in &[0.05, 0.5, 3.0] {
            let ours = poly_semigroup_apply(&op, &c, t).unwrap();
            let reference = (&m * t).exp() * nalgebra::DVector::from_column_slice(&c);
            let scale = reference.amax();
            for (a, b) in ours.iter().zip(reference.iter()) {
                assert!((a - b).abs() <= 1e-12 * scale, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn face_examples() {
        let op = assemble_poly_operator(2, 3).unwrap();
        let face = Face::new(2, &[1], false).unwrap();
        let f = face_restrict_operator(&op, &face).unwrap();
        assert!(f.commutation_defect(&op).unwrap().is_zero());
        let b = op.basis();
        let mut c = vec![Rational::zero(); b.len()];
        c[b.index_of(&[2, 1]).unwrap()] = Rational::one();
        assert!(f.restrict(&c).unwrap().iter().all(|v| v.is_zero()));
    }
}
