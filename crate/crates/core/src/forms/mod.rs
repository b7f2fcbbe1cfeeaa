//! Exact bigraded exterior calculus on the flat model `T*R^n`.
//!
//! A form is stored in the canonical basis `dx_I ^ dy_J` with `I` and `J`
//! strictly increasing, and polynomial coefficients. In this model the
//! horizontal distribution is the coordinate one, so the exterior derivative
//! splits as `d = d_plus + d_minus` and the `(2,-1)` component `delta`
//! vanishes identically.

mod poly;
mod serial;

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use poly::Poly;
pub use serial::{FormDocument, MonomialDocument, TermDocument};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormsError {
    #[error("deformation parameter q must be nonzero")]
    ZeroQ,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("not a polynomial: `{0}`")]
    NotPolynomial(String),
    #[error("invalid basis element: {0}")]
    InvalidBasis(String),
    #[error("coefficient does not fit the JSON integer range: {0}")]
    CoefficientOverflow(String),
}

/// A canonical basis element `dx_I ^ dy_J` (1-based, strictly increasing).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Basis {
    pub dx: Vec<usize>,
    pub dy: Vec<usize>,
}

impl Basis {
    pub fn scalar() -> Self {
        Basis {
            dx: Vec::new(),
            dy: Vec::new(),
        }
    }

    /// Type `(b, c)`: number of base and fibre factors.
    pub fn bidegree(&self) -> (usize, usize) {
        (self.dx.len(), self.dy.len())
    }

    pub fn degree(&self) -> usize {
        self.dx.len() + self.dy.len()
    }

    fn validate(&self, n: usize) -> Result<(), FormsError> {
        for idx in [&self.dx, &self.dy] {
            let increasing = idx.windows(2).all(|w| w[0] < w[1]);
            let in_range = idx.iter().all(|&i| i >= 1 && i <= n);
            if !increasing || !in_range {
                return Err(FormsError::InvalidBasis(format!("{self}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let factors: Vec<String> = self
            .dx
            .iter()
            .map(|i| format!("dx{i}"))
            .chain(self.dy.iter().map(|i| format!("dy{i}")))
            .collect();
        if factors.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", factors.join("^"))
        }
    }
}

/// Merges two strictly increasing index lists. Returns `None` on a repeated
/// index, otherwise the merged list and the parity of the shuffle.
fn merge_sign(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, bool)> {
    let mut merged = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let mut odd = false;
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            merged.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            // b[j] jumps over the remaining a[i..].
            if (a.len() - i) % 2 == 1 {
                odd = !odd;
            }
            merged.push(b[j]);
            j += 1;
        } else {
            return None;
        }
    }
    Some((merged, odd))
}

/// Exterior form with polynomial coefficients on `T*R^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BigradedForm {
    n: usize,
    terms: BTreeMap<Basis, Poly>,
}

impl BigradedForm {
    pub fn zero(n: usize) -> Self {
        BigradedForm {
            n,
            terms: BTreeMap::new(),
        }
    }

    /// The 0-form `f`.
    pub fn function(f: Poly) -> Self {
        let mut out = Self::zero(f.dim());
        out.accumulate(Basis::scalar(), f);
        out
    }

    pub fn term(n: usize, basis: Basis, coeff: Poly) -> Result<Self, FormsError> {
        basis.validate(n)?;
        if coeff.dim() != n {
            return Err(FormsError::DimensionMismatch(n, coeff.dim()));
        }
        let mut out = Self::zero(n);
        out.accumulate(basis, coeff);
        Ok(out)
    }

    pub fn dx(n: usize, i: usize) -> Self {
        Self::term(
            n,
            Basis {
                dx: vec![i],
                dy: vec![],
            },
            Poly::one(n),
        )
        .expect("dx index in range")
    }

    pub fn dy(n: usize, i: usize) -> Self {
        Self::term(
            n,
            Basis {
                dx: vec![],
                dy: vec![i],
            },
            Poly::one(n),
        )
        .expect("dy index in range")
    }

    /// The symplectic form `sum_i dy_i ^ dx_i`, stored in canonical order as
    /// `-sum_i dx_i ^ dy_i`. It is of type (1,1).
    pub fn omega(n: usize) -> Self {
        let mut out = Self::zero(n);
        for i in 1..=n {
            out.accumulate(
                Basis {
                    dx: vec![i],
                    dy: vec![i],
                },
                -&Poly::one(n),
            );
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Basis, &Poly)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, basis: &Basis) -> Poly {
        self.terms
            .get(basis)
            .cloned()
            .unwrap_or_else(|| Poly::zero(self.n))
    }

    /// The set of types `(b, c)` with a nonzero component.
    pub fn bidegrees(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self.terms.keys().map(Basis::bidegree).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The `(b, c)` component.
    pub fn component(&self, b: usize, c: usize) -> Self {
        BigradedForm {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| k.bidegree() == (b, c))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    fn accumulate(&mut self, basis: Basis, coeff: Poly) {
        if coeff.is_zero() {
            return;
        }
        let sum = match self.terms.remove(&basis) {
            Some(existing) => &existing + &coeff,
            None => coeff,
        };
        if !sum.is_zero() {
            self.terms.insert(basis, sum);
        }
    }

    fn check(&self, other: &Self) -> Result<(), FormsError> {
        if self.n != other.n {
            return Err(FormsError::DimensionMismatch(self.n, other.n));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, FormsError> {
        self.check(other)?;
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.accumulate(k.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FormsError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(&-BigRational::one())
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        let mut out = Self::zero(self.n);
        for (k, v) in &self.terms {
            out.accumulate(k.clone(), v.scale(c));
        }
        out
    }

    pub fn mul_poly(&self, p: &Poly) -> Self {
        let mut out = Self::zero(self.n);
        for (k, v) in &self.terms {
            out.accumulate(k.clone(), v * p);
        }
        out
    }

    /// Exterior product with Koszul signs relative to the canonical order.
    pub fn wedge(&self, other: &Self) -> Result<Self, FormsError> {
        self.check(other)?;
        let mut out = Self::zero(self.n);
        for (ka, pa) in &self.terms {
            for (kb, pb) in &other.terms {
                // dx_I dy_J dx_K dy_L -> dx_I dx_K dy_J dy_L
                let mut odd = (ka.dy.len() * kb.dx.len()) % 2 == 1;
                let Some((dx, s1)) = merge_sign(&ka.dx, &kb.dx) else {
                    continue;
                };
                let Some((dy, s2)) = merge_sign(&ka.dy, &kb.dy) else {
                    continue;
                };
                odd ^= s1 ^ s2;
                let coeff = pa * pb;
                out.accumulate(Basis { dx, dy }, if odd { -&coeff } else { coeff });
            }
        }
        Ok(out)
    }

    /// `d_plus a = sum_i dx_i ^ (da/dx_i)`; raises the base degree by one.
    pub fn partial_plus(&self) -> Self {
        let mut out = Self::zero(self.n);
        for (k, p) in &self.terms {
            for i in 1..=self.n {
                let dp = p.dx(i);
                if dp.is_zero() || k.dx.contains(&i) {
                    continue;
                }
                let Some((dx, odd)) = merge_sign(&[i], &k.dx) else {
                    continue;
                };
                out.accumulate(
                    Basis {
                        dx,
                        dy: k.dy.clone(),
                    },
                    if odd { -&dp } else { dp },
                );
            }
        }
        out
    }

    /// `d_minus a = sum_i dy_i ^ (da/dy_i)`; raises the fibre degree by one.
    pub fn partial_minus(&self) -> Self {
        let mut out = Self::zero(self.n);
        for (k, p) in &self.terms {
            for i in 1..=self.n {
                let dp = p.dy(i);
                if dp.is_zero() || k.dy.contains(&i) {
                    continue;
                }
                // dy_i moves past dx_I first.
                let Some((dy, odd)) = merge_sign(&[i], &k.dy) else {
                    continue;
                };
                let odd = odd ^ (k.dx.len() % 2 == 1);
                out.accumulate(
                    Basis {
                        dx: k.dx.clone(),
                        dy,
                    },
                    if odd { -&dp } else { dp },
                );
            }
        }
        out
    }

    /// The `(2,-1)` component of `d`. Coordinate fibrations with a constant
    /// base metric are bi-Lagrangian, so this is identically zero here.
    pub fn delta(&self) -> Self {
        Self::zero(self.n)
    }

    /// The de Rham differential `d = d_plus + d_minus + delta`.
    pub fn exterior_derivative(&self) -> Self {
        let d = self
            .partial_plus()
            .add(&self.partial_minus())
            .expect("same dimension");
        debug_assert!(self.delta().is_zero());
        d
    }

    /// `d_q = d_plus + q^-1 d_minus + q delta`.
    pub fn deformed_derivative(&self, q: &BigRational) -> Result<Self, FormsError> {
        if q.is_zero() {
            return Err(FormsError::ZeroQ);
        }
        let delta = self.delta();
        debug_assert!(delta.is_zero());
        self.partial_plus()
            .add(&self.partial_minus().scale(&q.recip()))?
            .add(&delta.scale(q))
    }

    /// Returns `Some(c)` when `self = c * other` for a constant `c`.
    pub fn constant_ratio(&self, other: &Self) -> Option<BigRational> {
        if self.n != other.n || other.is_zero() {
            return None;
        }
        let (basis, reference) = other.terms.iter().next()?;
        let ratio = {
            let ours = self.coefficient(basis);
            let theirs = reference.as_constant()?;
            let mine = ours.as_constant()?;
            mine / theirs
        };
        (other.scale(&ratio) == *self).then_some(ratio)
    }

    pub fn to_document(&self) -> Result<FormDocument, FormsError> {
        serial::to_document(self)
    }

    pub fn from_document(doc: &FormDocument) -> Result<Self, FormsError> {
        serial::from_document(doc)
    }
}

impl fmt::Display for BigradedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(k, p)| format!("({p}) {k}"))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Hamiltonian classification of a polynomial function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Classification {
    /// `d_minus d_plus H = 0`.
    pub simple: bool,
    /// `d_plus H = 0`.
    pub exceptionally_simple: bool,
    /// The constant `c'` with `omega = c' d_minus d_plus H`, when it exists.
    #[serde(serialize_with = "serial::optional_rational")]
    pub conformal_ratio: Option<BigRational>,
}

/// `d_minus d_plus H` of a function.
pub fn mixed_derivative(h: &Poly) -> BigradedForm {
    BigradedForm::function(h.clone()).partial_plus().partial_minus()
}

pub fn classify_hamiltonian(h: &Poly) -> Classification {
    let f = BigradedForm::function(h.clone());
    let plus = f.partial_plus();
    let mixed = plus.partial_minus();
    let conformal_ratio = if mixed.is_zero() {
        None
    } else {
        // mixed = lambda * omega  =>  c' = 1 / lambda
        mixed
            .constant_ratio(&BigradedForm::omega(h.dim()))
            .filter(|l| !l.is_zero())
            .map(|l| l.recip())
    };
    Classification {
        simple: mixed.is_zero(),
        exceptionally_simple: plus.is_zero(),
        conformal_ratio,
    }
}

/// Components `(a, b)` of the deformed Hamiltonian field as polynomials:
/// `a_i = q^-1 dH/dy_i`, `b_i = -dH/dx_i`.
pub fn deformed_field_poly(h: &Poly, q: &BigRational) -> Result<(Vec<Poly>, Vec<Poly>), FormsError> {
    if q.is_zero() {
        return Err(FormsError::ZeroQ);
    }
    let n = h.dim();
    let inv = q.recip();
    let a = (1..=n).map(|i| h.dy(i).scale(&inv)).collect();
    let b = (1..=n).map(|i| -&h.dx(i)).collect();
    Ok((a, b))
}

/// `omega(u, v) = sum_i (b_u,i a_v,i - a_u,i b_v,i)` on polynomial vector fields.
pub fn omega_poly(u: &(Vec<Poly>, Vec<Poly>), v: &(Vec<Poly>, Vec<Poly>)) -> Poly {
    let n = u.0.first().map(Poly::dim).unwrap_or(0);
    let mut acc = Poly::zero(n);
    for i in 0..u.0.len() {
        acc = &acc + &(&(&u.1[i] * &v.0[i]) - &(&u.0[i] * &v.1[i]));
    }
    acc
}

/// `{H, F}_q = omega(X^q_H, X_F)`, which in coordinates is
/// `sum_i (q^-1 dH/dy_i dF/dx_i - dH/dx_i dF/dy_i)`.
pub fn symbolic_bracket(h: &Poly, f: &Poly, q: &BigRational) -> Result<Poly, FormsError> {
    if h.dim() != f.dim() {
        return Err(FormsError::DimensionMismatch(h.dim(), f.dim()));
    }
    let xh = deformed_field_poly(h, q)?;
    let xf = deformed_field_poly(f, &BigRational::one())?;
    Ok(omega_poly(&xh, &xf))
}

/// `{H, F}_q - {F, H}_q`.
pub fn antisymmetrized_bracket(h: &Poly, f: &Poly, q: &BigRational) -> Result<Poly, FormsError> {
    Ok(&symbolic_bracket(h, f, q)? - &symbolic_bracket(f, h, q)?)
}

/// Cyclic Jacobi sum of the antisymmetrized bracket.
pub fn jacobi_sum(h: &Poly, f: &Poly, g: &Poly, q: &BigRational) -> Result<Poly, FormsError> {
    let a = |u: &Poly, v: &Poly| antisymmetrized_bracket(u, v, q);
    let t1 = a(h, &a(f, g)?)?;
    let t2 = a(f, &a(g, h)?)?;
    let t3 = a(g, &a(h, f)?)?;
    Ok(&(&t1 + &t2) + &t3)
}

/// Sign of a rational as -1, 0 or 1.
pub fn rational_sign(q: &BigRational) -> i32 {
    if q.is_zero() {
        0
    } else if q.is_positive() {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;

    fn poly(text: &str, n: usize) -> Poly {
        Poly::from_expression(&Expression::parse(text, n).unwrap()).unwrap()
    }

    fn r(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn repeated_factor_vanishes() {
        let dx1 = BigradedForm::dx(1, 1);
        assert!(dx1.wedge(&dx1).unwrap().is_zero());
    }

    #[test]
    fn dy_dx_is_minus_dx_dy() {
        let lhs = BigradedForm::dy(1, 1).wedge(&BigradedForm::dx(1, 1)).unwrap();
        let rhs = BigradedForm::dx(1, 1).wedge(&BigradedForm::dy(1, 1)).unwrap();
        assert_eq!(lhs, rhs.neg());
        assert_eq!(lhs.bidegrees(), vec![(1, 1)]);
    }

    #[test]
    fn partials_of_product_function() {
        let f = BigradedForm::function(poly("x1*y1", 1));
        assert_eq!(
            f.partial_plus(),
            BigradedForm::dx(1, 1).mul_poly(&poly("y1", 1))
        );
        assert_eq!(
            f.partial_minus(),
            BigradedForm::dy(1, 1).mul_poly(&poly("x1", 1))
        );
        // d_minus d_plus (x1 y1) = dy1 ^ dx1
        let mixed = f.partial_plus().partial_minus();
        assert_eq!(mixed, BigradedForm::dy(1, 1).wedge(&BigradedForm::dx(1, 1)).unwrap());
    }

    #[test]
    fn mixed_derivative_matches_hessian_sum() {
        // sum_{ij} d2H/dy_i dx_j dy_i ^ dx_j
        let h = poly("x1^2*y2 + 3*x2*y1*y2 - x1*x2", 2);
        let mut expected = BigradedForm::zero(2);
        for i in 1..=2 {
            for j in 1..=2 {
                let coeff = h.dx(j).dy(i);
                let basis = BigradedForm::dy(2, i).wedge(&BigradedForm::dx(2, j)).unwrap();
                expected = expected.add(&basis.mul_poly(&coeff)).unwrap();
            }
        }
        assert_eq!(mixed_derivative(&h), expected);
    }

    #[test]
    fn deformed_derivative_of_product() {
        let q = r(1, 3);
        let f = BigradedForm::function(poly("x1*y1", 1));
        let expected = BigradedForm::dx(1, 1)
            .mul_poly(&poly("y1", 1))
            .add(&BigradedForm::dy(1, 1).mul_poly(&poly("3*x1", 1)))
            .unwrap();
        assert_eq!(f.deformed_derivative(&q).unwrap(), expected);
        assert_eq!(
            f.deformed_derivative(&BigRational::zero()),
            Err(FormsError::ZeroQ)
        );
    }

    #[test]
    fn omega_is_closed_type_one_one() {
        let w = BigradedForm::omega(3);
        assert_eq!(w.bidegrees(), vec![(1, 1)]);
        for q in [r(-1, 1), r(1, 2), r(2, 1)] {
            assert!(w.deformed_derivative(&q).unwrap().is_zero());
        }
    }

    #[test]
    fn classification_examples() {
        let c = classify_hamiltonian(&poly("x1^2 + y1^3", 1));
        assert!(c.simple && !c.exceptionally_simple && c.conformal_ratio.is_none());

        let c = classify_hamiltonian(&poly("y1^2", 1));
        assert!(c.simple && c.exceptionally_simple);

        let c = classify_hamiltonian(&poly("x1*y1 + x2*y2", 2));
        assert!(!c.simple);
        assert_eq!(c.conformal_ratio, Some(r(1, 1)));

        let c = classify_hamiltonian(&poly("-2*x1*y1 + x1^3", 1));
        assert_eq!(c.conformal_ratio, Some(r(-1, 2)));

        let c = classify_hamiltonian(&poly("x1^2*y1^2", 1));
        assert!(!c.simple && c.conformal_ratio.is_none());

        // x1 y1 alone in n = 2 is not a multiple of omega.
        let c = classify_hamiltonian(&poly("x1*y1", 2));
        assert!(c.conformal_ratio.is_none());
    }

    #[test]
    fn bracket_examples() {
        let h = poly("x1", 1);
        let f = poly("y1", 1);
        let b = symbolic_bracket(&h, &f, &r(1, 2)).unwrap();
        assert_eq!(b.as_constant(), Some(r(-1, 1)));
        let osc = poly("x1^2*y1 + y1^3", 1);
        assert!(symbolic_bracket(&osc, &osc, &r(1, 1)).unwrap().is_zero());
        assert_eq!(
            symbolic_bracket(&h, &f, &BigRational::zero()),
            Err(FormsError::ZeroQ)
        );
    }

    #[test]
    fn swapped_bracket_is_the_classical_deformed_formula() {
        // {F, H}_q = sum_i q^-1 dH/dx_i dF/dy_i - dF/dx_i dH/dy_i
        let h = poly("x1^2*y2 - x2*y1^3 + y1", 2);
        let f = poly("x1*y1*y2 + x2^3 - y2^2", 2);
        let q = r(2, 5);
        let mut expected = Poly::zero(2);
        for i in 1..=2 {
            let t = &(&h.dx(i) * &f.dy(i)).scale(&q.recip()) - &(&f.dx(i) * &h.dy(i));
            expected = &expected + &t;
        }
        assert_eq!(symbolic_bracket(&f, &h, &q).unwrap(), expected);
    }

    #[test]
    fn basis_validation() {
        let bad = Basis {
            dx: vec![2, 1],
            dy: vec![],
        };
        assert!(BigradedForm::term(2, bad, Poly::one(2)).is_err());
        let out_of_range = Basis {
            dx: vec![],
            dy: vec![3],
        };
        assert!(BigradedForm::term(2, out_of_range, Poly::one(2)).is_err());
    }
}
