//! Numeric deformed bracket `{H, F}_q = omega(X^q_H, X_F)` and its
//! Lie-admissibility checks.

use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{deformed_field, DynamicsError};
use crate::expr::{ExprError, Expression, Var};
use crate::forms::{antisymmetrized_bracket, symbolic_bracket, FormsError, Poly};
use crate::phase::{omega, PhasePoint, Space};
use crate::sample::{random_point, random_poly, PolyShape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BracketError {
    #[error("q must be nonzero")]
    ZeroQ,
    #[error("q = -1 is excluded: the antisymmetrized bracket vanishes identically")]
    MinusOne,
    #[error("q = {0} has no exact rational value")]
    NonFiniteQ(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Forms(#[from] FormsError),
}

fn admissible_q(q: f64) -> Result<(), BracketError> {
    if q == 0.0 {
        Err(BracketError::ZeroQ)
    } else if q == -1.0 {
        Err(BracketError::MinusOne)
    } else {
        Ok(())
    }
}

/// `omega(X^q_H(z), X^1_F(z))`.
pub fn deformed_bracket(h: &Expression, f: &Expression, q: f64, z: &PhasePoint) -> Result<f64, BracketError> {
    if q == 0.0 {
        return Err(BracketError::ZeroQ);
    }
    let xh = deformed_field(h, q, z)?;
    let xf = deformed_field(f, 1.0, z)?;
    Ok(omega(&xh, &xf))
}

/// `|({H,F}_q - {F,H}_q) - (1 + q^{-1}) {H,F}_1|`, divided by
/// `max(1, |{H,F}_q| + |{F,H}_q|)`.
pub fn admissibility_defect(h: &Expression, f: &Expression, q: f64, z: &PhasePoint) -> Result<f64, BracketError> {
    admissible_q(q)?;
    let hf = deformed_bracket(h, f, q, z)?;
    let fh = deformed_bracket(f, h, q, z)?;
    let base = deformed_bracket(h, f, 1.0, z)?;
    let defect = ((hf - fh) - (1.0 + 1.0 / q) * base).abs();
    Ok(defect / (hf.abs() + fh.abs()).max(1.0))
}

/// Symbolic `{H, F}_q` as an expression, with `q` an exact rational.
pub fn bracket_expression(h: &Expression, f: &Expression, q: &BigRational) -> Result<Expression, BracketError> {
    if q.is_zero() {
        return Err(BracketError::ZeroQ);
    }
    let n = h.dim();
    let q_inv = q.recip();
    let mut acc = Expression::zero(n);
    for i in 1..=n {
        let forward = h.differentiate(Var::y(i))?.try_mul(&f.differentiate(Var::x(i))?)?;
        let backward = h.differentiate(Var::x(i))?.try_mul(&f.differentiate(Var::y(i))?)?;
        acc = acc.try_add(&forward.scale(&q_inv))?.try_sub(&backward)?;
    }
    Ok(acc)
}

/// Symbolic `{H, F}_q - {F, H}_q`.
pub fn commutator_expression(h: &Expression, f: &Expression, q: &BigRational) -> Result<Expression, BracketError> {
    Ok(bracket_expression(h, f, q)?.try_sub(&bracket_expression(f, h, q)?)?)
}

fn exact_q(q: f64) -> Result<BigRational, BracketError> {
    BigRational::from_float(q).ok_or(BracketError::NonFiniteQ(q))
}

/// Cyclic sum `[H,[F,G]] + [F,[G,H]] + [G,[H,F]]` of the commutator bracket,
/// built symbolically and evaluated at `z`; returns its absolute value.
pub fn jacobi_defect(
    h: &Expression,
    f: &Expression,
    g: &Expression,
    q: f64,
    z: &PhasePoint,
) -> Result<f64, BracketError> {
    admissible_q(q)?;
    let q = exact_q(q)?;
    let c = |u: &Expression, v: &Expression| commutator_expression(u, v, &q);
    let sum = c(h, &c(f, g)?)?
        .try_add(&c(f, &c(g, h)?)?)?
        .try_add(&c(g, &c(h, f)?)?)?;
    Ok(sum.evaluate(&z.to_flat())?.abs())
}

/// `({H,F}_q - {F,H}_q) - (1 + q^{-1}) {H,F}_1` in exact arithmetic.
pub fn exact_admissibility_residual(h: &Poly, f: &Poly, q: &BigRational) -> Result<Poly, BracketError> {
    if q.is_zero() {
        return Err(BracketError::ZeroQ);
    }
    let lhs = antisymmetrized_bracket(h, f, q)?;
    let coeff = BigRational::one() + q.recip();
    let rhs = symbolic_bracket(h, f, &BigRational::one())?.scale(&coeff);
    Ok(&lhs - &rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub q: f64,
    #[serde(rename = "samples")]
    pub sample_count: usize,
    pub max_admissibility_defect: f64,
    pub max_jacobi_defect: f64,
}

/// Settings for a random bracket sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepShape {
    pub n: usize,
    /// Random polynomial pairs, each evaluated at one random point.
    pub pairs: usize,
    /// Random triples for the Jacobi check.
    pub triples: usize,
    pub poly: PolyShape,
    pub radius: f64,
}

impl Default for SweepShape {
    fn default() -> Self {
        SweepShape {
            n: 2,
            pairs: 100,
            triples: 20,
            poly: PolyShape::default(),
            radius: 1.0,
        }
    }
}

/// Numeric admissibility and Jacobi defects over random polynomials, plus
/// the number of pairs whose exact residual is not identically zero.
pub fn sweep<R: Rng + ?Sized>(rng: &mut R, q: f64, shape: &SweepShape) -> Result<(BracketReport, usize), BracketError> {
    admissible_q(q)?;
    let q_exact = exact_q(q)?;
    let n = shape.n;
    let point = |rng: &mut R| PhasePoint::from_flat(&random_point(rng, n, shape.radius), Space::Plane);
    let mut max_adm: f64 = 0.0;
    let mut exact_failures = 0;
    for _ in 0..shape.pairs {
        let h = random_poly(rng, n, &shape.poly);
        let f = random_poly(rng, n, &shape.poly);
        let z = point(rng).map_err(DynamicsError::from)?;
        max_adm = max_adm.max(admissibility_defect(&h.to_expression(), &f.to_expression(), q, &z)?);
        if !exact_admissibility_residual(&h, &f, &q_exact)?.is_zero() {
            exact_failures += 1;
        }
    }
    let mut max_jac: f64 = 0.0;
    for _ in 0..shape.triples {
        let [h, f, g] = [(); 3].map(|_| random_poly(rng, n, &shape.poly).to_expression());
        let z = point(rng).map_err(DynamicsError::from)?;
        max_jac = max_jac.max(jacobi_defect(&h, &f, &g, q, &z)?);
    }
    Ok((
        BracketReport {
            q,
            sample_count: shape.pairs,
            max_admissibility_defect: max_adm,
            max_jacobi_defect: max_jac,
        },
        exact_failures,
    ))
}
