//! Seeded random generators for polynomials, forms and phase points, shared
//! by the property sweeps in the CLI and the test suites.

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::forms::{Basis, BigradedForm, Poly};

#[derive(Debug, Clone, Copy)]
pub struct PolyShape {
    pub max_degree: u32,
    pub terms: usize,
    /// Numerators are drawn from `-coeff_bound..=coeff_bound`.
    pub coeff_bound: i64,
    /// Denominators are drawn from `1..=max_denominator`.
    pub max_denominator: i64,
}

impl Default for PolyShape {
    fn default() -> Self {
        PolyShape {
            max_degree: 3,
            terms: 4,
            coeff_bound: 5,
            max_denominator: 3,
        }
    }
}

pub fn random_exponents<R: Rng + ?Sized>(rng: &mut R, n: usize, max_degree: u32) -> Vec<u32> {
    let degree = rng.gen_range(0..=max_degree);
    let mut exps = vec![0u32; 2 * n];
    for _ in 0..degree {
        exps[rng.gen_range(0..2 * n)] += 1;
    }
    exps
}

pub fn random_rational<R: Rng + ?Sized>(rng: &mut R, shape: &PolyShape) -> BigRational {
    let num = rng.gen_range(-shape.coeff_bound..=shape.coeff_bound);
    let den = rng.gen_range(1..=shape.max_denominator.max(1));
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn random_poly<R: Rng + ?Sized>(rng: &mut R, n: usize, shape: &PolyShape) -> Poly {
    let mut p = Poly::zero(n);
    for _ in 0..shape.terms {
        let exps = random_exponents(rng, n, shape.max_degree);
        p = &p + &Poly::monomial(n, exps, random_rational(rng, shape));
    }
    p
}

/// A random form of total degree `degree` with polynomial coefficients.
pub fn random_form<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    degree: usize,
    terms: usize,
    shape: &PolyShape,
) -> BigradedForm {
    let mut form = BigradedForm::zero(n);
    let slots: Vec<usize> = (0..2 * n).collect();
    for _ in 0..terms {
        let mut chosen: Vec<usize> = slots
            .choose_multiple(rng, degree.min(2 * n))
            .copied()
            .collect();
        chosen.sort_unstable();
        let basis = Basis {
            dx: chosen.iter().filter(|&&s| s < n).map(|s| s + 1).collect(),
            dy: chosen.iter().filter(|&&s| s >= n).map(|s| s - n + 1).collect(),
        };
        let coeff = random_poly(rng, n, shape);
        form = form
            .add(&BigradedForm::term(n, basis, coeff).expect("sorted basis in range"))
            .expect("same dimension");
    }
    form
}

pub fn random_point<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    (0..2 * n).map(|_| rng.gen_range(-radius..=radius)).collect()
}
