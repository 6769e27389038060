//! Sparse multivariate polynomials with exact rational coefficients.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::{Face, GradedPolyBasis};

pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn f64_to_rat(x: f64) -> Result<Rational> {
    Rational::from_float(x).ok_or_else(|| crate::error::invalid("coeffs", format!("non-finite value {x}")))
}

/// `sum_alpha c_alpha x^alpha` in `nvars` variables; zero coefficients are
/// never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Rational>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Rational) -> Self {
        Self::monomial(nvars, vec![0; nvars], c)
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, Rational::one())
    }

    pub fn monomial(nvars: usize, exps: Vec<u32>, c: Rational) -> Self {
        assert_eq!(exps.len(), nvars, "exponent length must match variable count");
        let mut p = Self::zero(nvars);
        p.add_term(exps, c);
        p
    }

    /// The coordinate function `x_i` (0-based).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, e, Rational::one())
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Rational)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn coeff(&self, exps: &[u32]) -> Rational {
        self.terms.get(exps).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get() + c;
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            return Self::zero(self.nvars);
        }
        Self {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    pub fn deriv(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                out.add_term(f, c * Rational::from_integer(BigInt::from(e[i])));
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::one(self.nvars);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Substitutes variable `i` by `subs[i]`; all substitutes must share a
    /// variable count, which becomes that of the result.
    pub fn compose(&self, subs: &[Poly]) -> Self {
        assert_eq!(subs.len(), self.nvars, "one substitute per variable");
        let target = subs.first().map_or(0, |p| p.nvars);
        let maxdeg = self.degree() as usize;
        let powers: Vec<Vec<Poly>> = subs
            .iter()
            .map(|s| {
                let mut row = vec![Poly::one(target)];
                for k in 1..=maxdeg {
                    let next = &row[k - 1] * s;
                    row.push(next);
                }
                row
            })
            .collect();
        let mut out = Poly::zero(target);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(target, c.clone());
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    term = &term * &powers[i][k as usize];
                }
            }
            out = &out + &term;
        }
        out
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                rat_to_f64(c)
                    * e.iter()
                        .zip(x)
                        .map(|(&k, &xi)| xi.powi(k as i32))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn eval_exact(&self, x: &[Rational]) -> Rational {
        let mut acc = Rational::zero();
        for (e, c) in &self.terms {
            let mut v = c.clone();
            for (&k, xi) in e.iter().zip(x) {
                for _ in 0..k {
                    v *= xi;
                }
            }
            acc += v;
        }
        acc
    }

    /// Exact quotient by `(1 - x_k)`, or `None` if it does not divide.
    pub fn div_one_minus(&self, k: usize) -> Option<Self> {
        let mut groups: BTreeMap<Vec<u32>, BTreeMap<u32, Rational>> = BTreeMap::new();
        for (e, c) in &self.terms {
            let mut rest = e.clone();
            let p = rest[k];
            rest[k] = 0;
            groups.entry(rest).or_default().insert(p, c.clone());
        }
        let mut out = Self::zero(self.nvars);
        for (rest, coeffs) in groups {
            let top = *coeffs.keys().next_back().expect("nonempty group");
            // p = (1 - x) q  <=>  q_j = sum_{i <= j} p_i, with sum_i p_i = 0.
            let mut running = Rational::zero();
            for j in 0..=top {
                if let Some(c) = coeffs.get(&j) {
                    running += c;
                }
                if j < top {
                    let mut e = rest.clone();
                    e[k] = j;
                    out.add_term(e, running.clone());
                }
            }
            if !running.is_zero() {
                return None;
            }
        }
        Some(out)
    }

    /// Coefficients on a graded basis; fails if a term is not representable.
    pub fn to_basis(&self, basis: &GradedPolyBasis) -> Result<Vec<Rational>> {
        if basis.dim() != self.nvars {
            return Err(Error::LengthMismatch {
                expected: basis.dim(),
                got: self.nvars,
            });
        }
        let mut out = vec![Rational::zero(); basis.len()];
        for (e, c) in &self.terms {
            let i = basis
                .index_of(e)
                .ok_or_else(|| Error::Capacity(format!("monomial {e:?} exceeds basis degree")))?;
            out[i] = c.clone();
        }
        Ok(out)
    }

    pub fn from_basis(basis: &GradedPolyBasis, coeffs: &[Rational]) -> Self {
        let mut p = Self::zero(basis.dim());
        for (m, c) in basis.monomials().iter().zip(coeffs) {
            p.add_term(m.exponents().to_vec(), c.clone());
        }
        p
    }

    pub fn from_basis_f64(basis: &GradedPolyBasis, coeffs: &[f64]) -> Result<Self> {
        let c = coeffs.iter().map(|&v| f64_to_rat(v)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_basis(basis, &c))
    }

    /// Restriction to a face in the face's intrinsic chart.
    pub fn restrict_to_face(&self, face: &Face) -> Self {
        let p = face.intrinsic_dim();
        let chart = face.chart_coords();
        let mut subs = vec![Poly::zero(p); self.nvars];
        for (j, &c) in chart.iter().enumerate() {
            subs[c] = Poly::var(p, j);
        }
        if let Some(e) = face.eliminated() {
            let mut rest = Poly::one(p);
            for j in 0..p {
                rest = &rest - &Poly::var(p, j);
            }
            subs[e] = rest;
        }
        if self.nvars == 0 {
            return self.clone();
        }
        self.compose(&subs)
    }

    /// Random polynomial of total degree at most `degree` with small
    /// rational coefficients `a/b`, `|a| <= 9`, `1 <= b <= 4`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, nvars: usize, degree: u32) -> Self {
        let basis = GradedPolyBasis::new(nvars, degree);
        let mut p = Self::zero(nvars);
        for m in basis.monomials() {
            let a: i64 = rng.random_range(-9..=9);
            let b: i64 = rng.random_range(1..=4);
            p.add_term(m.exponents().to_vec(), rat(a, b));
        }
        p
    }

    pub fn max_abs_coeff(&self) -> Rational {
        self.terms
            .values()
            .map(|c| c.abs())
            .max()
            .unwrap_or_else(Rational::zero)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(&-Rational::one())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }
}

/// `½ sum_{i,j} x_i (delta_ij - x_j) d_ij u`, computed symbolically.
pub fn wf_apply(u: &Poly) -> Poly {
    let n = u.nvars();
    let half = rat(1, 2);
    let mut out = Poly::zero(n);
    for i in 0..n {
        let di = u.deriv(i);
        for j in 0..n {
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

/// Carré du champ `sum_{i,j} x_i (delta_ij - x_j) d_i f d_j g`.
pub fn carre_du_champ_poly(f: &Poly, g: &Poly) -> Poly {
    let n = f.nvars();
    let df: Vec<Poly> = (0..n).map(|i| f.deriv(i)).collect();
    let dg: Vec<Poly> = (0..n).map(|i| g.deriv(i)).collect();
    let mut out = Poly::zero(n);
    for i in 0..n {
        for j in 0..n {
            let mut coef = Poly::zero(n);
            if i == j {
                coef = &coef + &Poly::var(n, i);
            }
            coef = &coef - &(&Poly::var(n, i) * &Poly::var(n, j));
            out = &out + &(&coef * &(&df[i] * &dg[j]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wf_on_square() {
        let x = Poly::var(1, 0);
        let u = &x * &x;
        assert_eq!(wf_apply(&u), &x - &u);
    }

    #[test]
    fn division_by_one_minus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q = Poly::random(&mut rng, 3, 3);
            let lin = &Poly::one(3) - &Poly::var(3, 2);
            let p = &lin * &q;
            assert_eq!(p.div_one_minus(2).unwrap(), q);
        }
        let p = Poly::var(2, 0);
        assert!(p.div_one_minus(0).is_none());
    }

    #[test]
    fn compose_matches_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Poly::random(&mut rng, 2, 4);
        let s = Poly::var(2, 1);
        let r = Poly::var(2, 0);
        let x = &r * &(&Poly::one(2) - &s);
        let v = u.compose(&[x, s]);
        let (rr, ss) = (0.3, 0.6);
        let direct = u.eval_f64(&[rr * (1.0 - ss), ss]);
        assert!((v.eval_f64(&[rr, ss]) - direct).abs() < 1e-12);
    }

    #[test]
    fn product_rule_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=3 {
            let f = Poly::random(&mut rng, d, 3);
            let g = Poly::random(&mut rng, d, 3);
            let lhs = wf_apply(&(&f * &g));
            let rhs = &(&(&f * &wf_apply(&g)) + &(&g * &wf_apply(&f))) + &carre_du_champ_poly(&f, &g);
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn face_restriction_top() {
        // x1*x2 on {x1 + x2 = 1} in the chart x1 -> x1 (1 - x1).
        let u = &Poly::var(2, 0) * &Poly::var(2, 1);
        let face = Face::new(2, &[], true).unwrap();
        let r = u.restrict_to_face(&face);
        let x = Poly::var(1, 0);
        assert_eq!(r, &x - &(&x * &x));
    }
}
