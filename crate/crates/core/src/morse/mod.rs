//! Morse theory for `H_q = f(x) + sum_i y_i w_i(x) + q g(y)`.
//!
//! Critical points of `H_q` are pairs `(x, y)` with `w(x) = 0` and
//! `df + sum_i y_i dw_i = 0`; the negative gradient flow in the metric `G_q`
//! (with `G_B = I`) is `du/dt = (-dH/dx, -q^{-1} dH/dy)`.

mod complex;
mod critical;
mod flowlines;

use num_rational::BigRational;
use thiserror::Error;

use crate::expr::{parse_rational, ExprError, Expression, Var, VarKind};
use crate::phase::Space;

pub use complex::{
    adiabatic_deviation, build_complex, gf2_rank, homology_ranks, AdiabaticPoint, FlowLineRecord,
    MorseComplex, MorseSettings,
};
pub use critical::{
    critical_index, find_critical_points, find_critical_points_with, CriticalPoint, CriticalSettings,
    IndexCertificate, IndexReport,
};
pub use flowlines::{count_flow_lines, FlowLineCount, FlowLineSettings};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MorseError {
    #[error("{role} must depend only on {allowed} variables: `{expression}`")]
    Separation {
        role: String,
        allowed: &'static str,
        expression: String,
    },
    #[error("expected {expected} constraint functions, found {found}")]
    ConstraintCount { expected: usize, found: usize },
    #[error("q must lie in (0, 1], got {0}")]
    InvalidQ(f64),
    #[error("invalid q list: {0}")]
    QList(String),
    #[error("invalid search box: {0}")]
    InvalidBox(String),
    #[error("Morse condition fails at {z:?}: eigenvalue {eigenvalue:e} is within {tolerance:e} of zero")]
    Degenerate {
        z: Vec<f64>,
        eigenvalue: f64,
        tolerance: f64,
    },
    #[error("0 is not a regular value of w at x = {x:?}: constraint Jacobian has rank {rank} < {k}")]
    IrregularConstraint { x: Vec<f64>, rank: usize, k: usize },
    #[error("flow lines need index(p-) - index(p+) = 1, got {minus} and {plus}")]
    IndexGap { minus: usize, plus: usize },
    #[error("shooting supports unstable dimension 1 or 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("boundary composition d_{m} d_{} is nonzero over Z/2", m + 1)]
    BoundarySquare { m: usize },
    #[error("integration failed at q = {q} (t = {t}); an adaptive stepper with tighter tolerances may help")]
    Stiffness { q: f64, t: f64 },
    #[error("no critical point of index {index} near {near:?} at q = {q}")]
    MissingCriticalPoint { q: f64, index: usize, near: Vec<f64> },
    #[error("no flow line found between the chosen pair at q = {q}")]
    NoFlowLine { q: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Data of the Lagrange-multiplier Hamiltonian.
#[derive(Debug, Clone)]
pub struct MorseSpec {
    pub f: Expression,
    /// Exactly `n` entries; identically zero entries do not constrain.
    pub w: Vec<Expression>,
    pub g: Expression,
    pub q: f64,
    pub space: Space,
}

fn check_kind(role: &str, e: &Expression, forbidden: VarKind, allowed: &'static str) -> Result<(), MorseError> {
    if e.depends_on(forbidden) {
        return Err(MorseError::Separation {
            role: role.to_string(),
            allowed,
            expression: e.to_string(),
        });
    }
    Ok(())
}

impl MorseSpec {
    pub fn new(f: Expression, w: Vec<Expression>, g: Expression, q: f64) -> Result<Self, MorseError> {
        let spec = MorseSpec {
            f,
            w,
            g,
            q,
            space: Space::Plane,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn with_q(&self, q: f64) -> Result<Self, MorseError> {
        let spec = MorseSpec { q, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn validate(&self) -> Result<(), MorseError> {
        let n = self.dim();
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(MorseError::InvalidQ(self.q));
        }
        if self.w.len() != n {
            return Err(MorseError::ConstraintCount {
                expected: n,
                found: self.w.len(),
            });
        }
        check_kind("f", &self.f, VarKind::Fibre, "base")?;
        for (i, w) in self.w.iter().enumerate() {
            if w.dim() != n {
                return Err(ExprError::DimensionMismatch {
                    expected: n,
                    found: w.dim(),
                }
                .into());
            }
            check_kind(&format!("w{}", i + 1), w, VarKind::Fibre, "base")?;
        }
        if self.g.dim() != n {
            return Err(ExprError::DimensionMismatch {
                expected: n,
                found: self.g.dim(),
            }
            .into());
        }
        check_kind("g", &self.g, VarKind::Base, "fibre")
    }

    /// Indices (0-based) of the constraint functions that are not identically zero.
    pub fn active_constraints(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&i| !self.w[i].is_zero()).collect()
    }

    /// `k`, the number of active constraints.
    pub fn k(&self) -> usize {
        self.active_constraints().len()
    }
}

/// Exact rational for a decimal `q`, using its shortest round-trip representation.
pub(crate) fn decimal_rational(q: f64) -> BigRational {
    parse_rational(&format!("{q}"))
        .or_else(|| BigRational::from_float(q))
        .expect("finite q")
}

/// `H_q = f + sum_i y_i w_i + q g`.
pub fn build_hamiltonian(spec: &MorseSpec) -> Result<Expression, MorseError> {
    spec.validate()?;
    let n = spec.dim();
    let mut h = spec.f.clone();
    for i in spec.active_constraints() {
        let term = Expression::var(n, Var::y(i + 1))?.try_mul(&spec.w[i])?;
        h = h.try_add(&term)?;
    }
    h.try_add(&spec.g.scale(&decimal_rational(spec.q)))
        .map_err(MorseError::from)
}

/// An axis-aligned box in `(x, y)`; on the torus only the `y` bounds limit escape.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, MorseError> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() % 2 != 0 {
            return Err(MorseError::InvalidBox(format!(
                "bounds of lengths {} and {} do not describe a phase space",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b && a.is_finite() && b.is_finite())) {
            return Err(MorseError::InvalidBox("every lower bound must be below its upper bound".into()));
        }
        Ok(SearchBox { lo, hi })
    }

    /// `[-r, r]^{2n}`.
    pub fn cube(n: usize, r: f64) -> Self {
        SearchBox {
            lo: vec![-r; 2 * n],
            hi: vec![r; 2 * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len() / 2
    }

    pub fn contains(&self, z: &[f64], space: Space) -> bool {
        let n = self.dim();
        z.iter().enumerate().all(|(i, v)| {
            (space == Space::Torus && i < n) || (self.lo[i] <= *v && *v <= self.hi[i])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) fn circle_spec(q: f64) -> MorseSpec {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        MorseSpec::new(p("x2"), vec![p("x1^2 + x2^2 - 1"), p("0")], p("y2^2/2"), q).unwrap()
    }

    #[test]
    fn hamiltonian_assembly() {
        let h = build_hamiltonian(&circle_spec(0.5)).unwrap();
        let expected = Expression::parse("x2 + y1*(x1^2 + x2^2 - 1) + (1/2)*(y2^2/2)", 2).unwrap();
        for z in [[0.1, 0.2, 0.3, 0.4], [1.0, -2.0, 0.5, 3.0]] {
            assert!((h.evaluate(&z).unwrap() - expected.evaluate(&z).unwrap()).abs() < 1e-15);
        }
        assert_eq!(circle_spec(0.5).k(), 1);
    }

    #[test]
    fn zero_g_reduces_to_constraint_hamiltonian() {
        let p = |s: &str| Expression::parse(s, 1).unwrap();
        let spec = MorseSpec::new(p("x1"), vec![p("x1^2 - 1")], p("0"), 0.3).unwrap();
        let h = build_hamiltonian(&spec).unwrap();
        let other = build_hamiltonian(&spec.with_q(0.9).unwrap()).unwrap();
        assert_eq!(h, other);
        assert_eq!(h.evaluate(&[2.0, 5.0]).unwrap(), 2.0 + 5.0 * 3.0);
    }

    #[test]
    fn separation_is_enforced() {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        let err = MorseSpec::new(p("x2 + y1"), vec![p("x1"), p("0")], p("y2^2"), 0.5).unwrap_err();
        match err {
            MorseError::Separation { role, expression, .. } => {
                assert_eq!(role, "f");
                assert!(expression.contains("y1"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            MorseSpec::new(p("x2"), vec![p("x1"), p("0")], p("x1*y2"), 0.5),
            Err(MorseError::Separation { .. })
        ));
        assert!(matches!(
            MorseSpec::new(p("x2"), vec![p("x1"), p("0")], p("y2"), 0.0),
            Err(MorseError::InvalidQ(_))
        ));
        assert!(matches!(
            MorseSpec::new(p("x2"), vec![p("x1")], p("y2"), 0.5),
            Err(MorseError::ConstraintCount { .. })
        ));
    }

    #[test]
    fn decimal_q_is_exact() {
        assert_eq!(decimal_rational(0.3).to_string(), "3/10");
        assert_eq!(decimal_rational(0.25).to_string(), "1/4");
    }
}
