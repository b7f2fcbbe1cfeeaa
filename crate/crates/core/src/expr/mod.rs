//! Scalar expressions in base variables `x1..xn` and fibre variables `y1..yn`.
//!
//! Expressions keep exact rational constants. Derivatives are taken
//! symbolically and only then lowered to `f64` tapes for evaluation, so a
//! Hessian evaluated through [`JetEvaluator`] is the evaluation of exact
//! second derivatives rather than a finite-difference estimate.

mod eval;
mod node;
mod parse;

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

pub use eval::{Jet, JetEvaluator, Tape};
pub use node::{Func, Node};
pub use parse::parse_rational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("variable `{name}` at byte {offset} is out of range for dimension {n}")]
    VariableOutOfRange {
        name: String,
        offset: usize,
        n: usize,
    },
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("division by zero in `{subexpression}`")]
    DivisionByZero { subexpression: String },
    #[error("variable {0} is not declared in dimension {1}")]
    InvalidVariable(Var, usize),
}

pub type Result<T> = std::result::Result<T, ExprError>;

/// Which half of the phase space a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    /// Base coordinate `x_i`.
    Base,
    /// Fibre coordinate `y_i`.
    Fibre,
}

/// A coordinate variable. `index` is 1-based, as written in expression text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub kind: VarKind,
    pub index: usize,
}

impl Var {
    pub fn x(index: usize) -> Self {
        Var {
            kind: VarKind::Base,
            index,
        }
    }

    pub fn y(index: usize) -> Self {
        Var {
            kind: VarKind::Fibre,
            index,
        }
    }

    /// Position in the flattened coordinate vector `(x1..xn, y1..yn)`.
    pub fn slot(&self, n: usize) -> usize {
        match self.kind {
            VarKind::Base => self.index - 1,
            VarKind::Fibre => n + self.index - 1,
        }
    }

    /// Inverse of [`Var::slot`].
    pub fn from_slot(slot: usize, n: usize) -> Self {
        if slot < n {
            Var::x(slot + 1)
        } else {
            Var::y(slot - n + 1)
        }
    }

    pub fn is_declared(&self, n: usize) -> bool {
        self.index >= 1 && self.index <= n
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            VarKind::Base => write!(f, "x{}", self.index),
            VarKind::Fibre => write!(f, "y{}", self.index),
        }
    }
}

/// An immutable expression tree over a fixed dimension `n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Expression {
    n: usize,
    root: Node,
}

impl Expression {
    /// Parses `text` against the expression grammar for dimension `n`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(ExprError::InvalidDimension);
        }
        let root = parse::Parser::new(text, n).parse()?;
        Ok(Expression { n, root })
    }

    /// Wraps a node, checking that every variable is declared in dimension `n`.
    pub fn from_node(n: usize, root: Node) -> Result<Self> {
        if n == 0 {
            return Err(ExprError::InvalidDimension);
        }
        let mut vars = BTreeSet::new();
        root.collect_vars(&mut vars);
        if let Some(v) = vars.into_iter().find(|v| !v.is_declared(n)) {
            return Err(ExprError::InvalidVariable(v, n));
        }
        Ok(Expression { n, root })
    }

    pub fn constant(n: usize, value: BigRational) -> Self {
        Expression {
            n,
            root: Node::Const(value),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(n, BigRational::zero())
    }

    pub fn var(n: usize, v: Var) -> Result<Self> {
        Self::from_node(n, Node::Var(v))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn into_node(self) -> Node {
        self.root
    }

    pub fn variables(&self) -> BTreeSet<Var> {
        let mut vars = BTreeSet::new();
        self.root.collect_vars(&mut vars);
        vars
    }

    pub fn depends_on(&self, kind: VarKind) -> bool {
        self.variables().iter().any(|v| v.kind == kind)
    }

    /// True only for the literal constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(&self.root, Node::Const(c) if c.is_zero())
    }

    pub fn as_constant(&self) -> Option<&BigRational> {
        match &self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Exact partial derivative with respect to `v`.
    pub fn differentiate(&self, v: Var) -> Result<Self> {
        if !v.is_declared(self.n) {
            return Err(ExprError::InvalidVariable(v, self.n));
        }
        Ok(Expression {
            n: self.n,
            root: self.root.derivative(v),
        })
    }

    /// Symbolic gradient ordered `(d/dx1..d/dxn, d/dy1..d/dyn)`.
    pub fn gradient(&self) -> Vec<Expression> {
        (0..2 * self.n)
            .map(|slot| Expression {
                n: self.n,
                root: self.root.derivative(Var::from_slot(slot, self.n)),
            })
            .collect()
    }

    fn check_dim(&self, other: &Expression) -> Result<()> {
        if self.n != other.n {
            return Err(ExprError::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Expression) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Expression {
            n: self.n,
            root: Node::add(self.root.clone(), other.root.clone()),
        })
    }

    pub fn try_sub(&self, other: &Expression) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Expression {
            n: self.n,
            root: Node::sub(self.root.clone(), other.root.clone()),
        })
    }

    pub fn try_mul(&self, other: &Expression) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Expression {
            n: self.n,
            root: Node::mul(self.root.clone(), other.root.clone()),
        })
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        Expression {
            n: self.n,
            root: Node::mul(Node::Const(c.clone()), self.root.clone()),
        }
    }

    /// Lowers the expression to an `f64` evaluation tape.
    pub fn compile(&self) -> Tape {
        Tape::compile(&self.root)
    }

    /// Evaluates at the flattened point `(x1..xn, y1..yn)`.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        if z.len() != 2 * self.n {
            return Err(ExprError::DimensionMismatch {
                expected: 2 * self.n,
                found: z.len(),
            });
        }
        self.compile().eval(z)
    }

    /// Value, gradient and Hessian at `z` from exact symbolic derivatives.
    pub fn evaluate_jet(&self, z: &[f64]) -> Result<Jet> {
        JetEvaluator::new(self).evaluate(z)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

pub(crate) fn rational_from_int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub(crate) fn is_one(c: &BigRational) -> bool {
    c.is_one()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn parses_oscillator_as_quotient_of_sum() {
        let e = Expression::parse("(x1^2 + y1^2)/2", 1).unwrap();
        match e.root() {
            Node::Div(num, den) => {
                assert!(matches!(num.as_ref(), Node::Add(_, _)));
                assert_eq!(den.as_ref(), &Node::Const(rational_from_int(2)));
            }
            other => panic!("unexpected root {other:?}"),
        }
        assert_eq!(e.variables().len(), 2);
    }

    #[test]
    fn parses_multiplier_term() {
        let e = Expression::parse("y1*(x1^2 + x2^2 - 1)", 2).unwrap();
        let expected = Node::Mul(
            Box::new(Node::Var(Var::y(1))),
            Box::new(Node::Sub(
                Box::new(Node::Add(
                    Box::new(Node::Pow(Box::new(Node::Var(Var::x(1))), 2)),
                    Box::new(Node::Pow(Box::new(Node::Var(Var::x(2))), 2)),
                )),
                Box::new(Node::Const(rational_from_int(1))),
            )),
        );
        assert_eq!(e.root(), &expected);
    }

    #[test]
    fn trailing_operator_reports_offset() {
        let err = Expression::parse("x1 +", 1).unwrap_err();
        assert!(matches!(err, ExprError::Syntax { offset: 4, .. }), "{err:?}");
    }

    #[test]
    fn rejects_out_of_range_variable() {
        let err = Expression::parse("x1 + y3", 2).unwrap_err();
        assert!(matches!(
            err,
            ExprError::VariableOutOfRange { offset: 5, n: 2, .. }
        ));
        assert!(Expression::parse("x0", 2).is_err());
    }

    #[test]
    fn derivative_examples() {
        let e = Expression::parse("(x1^2+y1^2)/2", 1).unwrap();
        let d = e.differentiate(Var::y(1)).unwrap();
        let y1 = Expression::parse("y1", 1).unwrap();
        for z in [[0.3, -1.7], [2.0, 5.0], [-4.0, 0.25]] {
            assert!(close(d.evaluate(&z).unwrap(), y1.evaluate(&z).unwrap()));
        }

        let e = Expression::parse("sin(x1)*y1", 1).unwrap();
        let d = e.differentiate(Var::x(1)).unwrap();
        assert_eq!(d.to_string(), "cos(x1)*y1");

        let e = Expression::parse("x1*y1", 1).unwrap();
        let dd = e
            .differentiate(Var::x(1))
            .unwrap()
            .differentiate(Var::y(1))
            .unwrap();
        assert_eq!(dd.as_constant(), Some(&rational_from_int(1)));
    }

    #[test]
    fn jet_of_oscillator() {
        let e = Expression::parse("(x1^2+y1^2)/2", 1).unwrap();
        let jet = e.evaluate_jet(&[1.0, 2.0]).unwrap();
        assert_eq!(jet.value, 2.5);
        assert_eq!(jet.gradient, vec![1.0, 2.0]);
        assert_eq!(jet.hessian[(0, 0)], 1.0);
        assert_eq!(jet.hessian[(0, 1)], 0.0);
        assert_eq!(jet.hessian, jet.hessian.transpose());
    }

    #[test]
    fn division_by_zero_names_subexpression() {
        let e = Expression::parse("x1/y1", 1).unwrap();
        match e.evaluate(&[1.0, 0.0]).unwrap_err() {
            ExprError::DivisionByZero { subexpression } => assert_eq!(subexpression, "x1/y1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(e.evaluate_jet(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn display_reparses_to_same_tree() {
        for text in [
            "x1 - (x2 - y1)",
            "-x1^2",
            "(-x1)^2",
            "x1*-y1",
            "x1/(y1*x2)",
            "(x1/y1)/x2",
            "--x1",
            "0.5*x1 - 1/3",
            "exp(-(x1 + y2))^3",
            "(x1^2)^3",
            "sin(cos(x1*y1)) + 2*(x2 - -y2)",
        ] {
            let e = Expression::parse(text, 2).unwrap();
            let printed = e.to_string();
            let again = Expression::parse(&printed, 2).unwrap();
            assert_eq!(e, again, "{text} printed as {printed}");
        }
    }

    #[test]
    fn constants_fold_at_parse_time() {
        let e = Expression::parse("-1/2 + 3*2", 1).unwrap();
        assert_eq!(
            e.as_constant(),
            Some(&BigRational::new(BigInt::from(11), BigInt::from(2)))
        );
        let e = Expression::parse("1.25e1", 1).unwrap();
        assert_eq!(
            e.as_constant(),
            Some(&BigRational::new(BigInt::from(25), BigInt::from(2)))
        );
    }

    #[test]
    fn separation_queries() {
        let e = Expression::parse("x1 + cos(x2)", 2).unwrap();
        assert!(e.depends_on(VarKind::Base));
        assert!(!e.depends_on(VarKind::Fibre));
        assert!(Expression::parse("0", 2).unwrap().is_zero());
    }
}
