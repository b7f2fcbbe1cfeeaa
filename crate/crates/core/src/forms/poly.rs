use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use super::FormsError;
use crate::expr::{Expression, Node, Var};

/// Multivariate polynomial in `(x1..xn, y1..yn)` with exact rational
/// coefficients. Exponent vectors have length `2n`; zero coefficients are
/// never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    n: usize,
    terms: BTreeMap<Vec<u32>, BigRational>,
}

impl Poly {
    pub fn zero(n: usize) -> Self {
        Poly {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: BigRational) -> Self {
        Self::monomial(n, vec![0; 2 * n], c)
    }

    pub fn one(n: usize) -> Self {
        Self::constant(n, BigRational::one())
    }

    /// The coordinate at `slot` in the flattened ordering.
    pub fn coordinate(n: usize, slot: usize) -> Self {
        let mut exps = vec![0; 2 * n];
        exps[slot] = 1;
        Self::monomial(n, exps, BigRational::one())
    }

    pub fn x(n: usize, i: usize) -> Self {
        Self::coordinate(n, i - 1)
    }

    pub fn y(n: usize, i: usize) -> Self {
        Self::coordinate(n, n + i - 1)
    }

    pub fn monomial(n: usize, exps: Vec<u32>, c: BigRational) -> Self {
        assert_eq!(exps.len(), 2 * n, "exponent vector length must be 2n");
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(exps, c);
        }
        Poly { n, terms }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some(c)` when the polynomial is the constant `c` (including zero).
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => {
                let (exps, c) = self.terms.iter().next().unwrap();
                exps.iter().all(|&e| e == 0).then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    fn accumulate(&mut self, exps: Vec<u32>, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(exps);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero(self.n);
        }
        Poly {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|(e, v)| (e.clone(), v * c))
                .collect(),
        }
    }

    /// Exact partial derivative with respect to the coordinate at `slot`.
    pub fn derivative(&self, slot: usize) -> Poly {
        let mut out = Poly::zero(self.n);
        for (exps, c) in &self.terms {
            let e = exps[slot];
            if e == 0 {
                continue;
            }
            let mut lowered = exps.clone();
            lowered[slot] -= 1;
            out.accumulate(lowered, c * BigRational::from_integer(BigInt::from(e)));
        }
        out
    }

    pub fn dx(&self, i: usize) -> Poly {
        self.derivative(i - 1)
    }

    pub fn dy(&self, i: usize) -> Poly {
        self.derivative(self.n + i - 1)
    }

    /// True when no monomial involves any fibre coordinate.
    pub fn is_base_only(&self) -> bool {
        self.terms.keys().all(|e| e[self.n..].iter().all(|&k| k == 0))
    }

    pub fn is_fibre_only(&self) -> bool {
        self.terms.keys().all(|e| e[..self.n].iter().all(|&k| k == 0))
    }

    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(exps, c)| {
                let mono: f64 = exps
                    .iter()
                    .zip(z)
                    .map(|(&e, &v)| v.powi(e as i32))
                    .product();
                c.to_f64().unwrap_or(f64::NAN) * mono
            })
            .sum()
    }

    /// Converts a polynomial expression. Division is accepted only by
    /// nonzero constants; transcendental functions are rejected.
    pub fn from_expression(e: &Expression) -> Result<Poly, FormsError> {
        from_node(e.root(), e.dim())
    }

    /// Builds the expression `sum c * prod var^e` in monomial order.
    pub fn to_expression(&self) -> Expression {
        let mut acc = Node::Const(BigRational::zero());
        for (exps, c) in &self.terms {
            let mut mono = Node::Const(c.clone());
            for (slot, &e) in exps.iter().enumerate() {
                if e > 0 {
                    mono = Node::mul(mono, Node::pow(Node::Var(Var::from_slot(slot, self.n)), e));
                }
            }
            acc = Node::add(acc, mono);
        }
        Expression::from_node(self.n, acc).expect("polynomial variables are in range")
    }

    fn check(&self, other: &Poly) {
        assert_eq!(self.n, other.n, "polynomial dimension mismatch");
    }
}

fn from_node(node: &Node, n: usize) -> Result<Poly, FormsError> {
    Ok(match node {
        Node::Const(c) => Poly::constant(n, c.clone()),
        Node::Var(v) => Poly::coordinate(n, v.slot(n)),
        Node::Add(a, b) => &from_node(a, n)? + &from_node(b, n)?,
        Node::Sub(a, b) => &from_node(a, n)? - &from_node(b, n)?,
        Node::Mul(a, b) => &from_node(a, n)? * &from_node(b, n)?,
        Node::Div(a, b) => {
            let den = from_node(b, n)?;
            match den.as_constant() {
                Some(c) if !c.is_zero() => from_node(a, n)?.scale(&c.recip()),
                _ => return Err(FormsError::NotPolynomial(node.to_string())),
            }
        }
        Node::Neg(a) => -&from_node(a, n)?,
        Node::Pow(a, k) => {
            let base = from_node(a, n)?;
            let mut acc = Poly::one(n);
            for _ in 0..*k {
                acc = &acc * &base;
            }
            acc
        }
        Node::Func(..) => return Err(FormsError::NotPolynomial(node.to_string())),
    })
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        self.check(rhs);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.accumulate(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self.check(rhs);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.accumulate(e.clone(), -c.clone());
        }
        out
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        self.check(rhs);
        let mut out = Poly::zero(self.n);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let exps = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.accumulate(exps, ca * cb);
            }
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly {
            n: self.n,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), -c)).collect(),
        }
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        write!(f, "{}", self.to_expression())
    }
}
