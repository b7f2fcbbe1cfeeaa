//! Semantic validation and execution of each scenario kind.
//!
//! `prepare` turns a parsed scenario into a [`Plan`] with every expression
//! compiled and every value range checked, so that `execute` only fails on
//! numerical trouble.

mod bracket;
mod classify;
mod morse;
mod simulate;
mod sweep;
mod verify;

use std::fmt::Display;

use defham::dynamics::FlowSpec;
use defham::expr::Expression;
use defham::ode::Integrator;
use defham::phase::{PhasePoint, Space};
use defham::sample::PolyShape;

use crate::scenario::{FlowFixture, PolyConfig, Q, Scenario};
use crate::{CliError, Context, Invalid, REPORT_FILE};

pub(crate) enum Plan {
    Simulate(simulate::Plan),
    Verify(verify::Plan),
    Classify(classify::Plan),
    Bracket(bracket::Plan),
    Morse(morse::Plan),
    Sweep(sweep::Plan),
}

pub(crate) enum RunError {
    /// Recorded in the report; the run exits with status 1.
    Numeric(String),
    Cli(CliError),
}

impl From<CliError> for RunError {
    fn from(e: CliError) -> Self {
        RunError::Cli(e)
    }
}

pub(crate) fn numeric<E: Display>(context: &str) -> impl FnOnce(E) -> RunError + '_ {
    move |e| RunError::Numeric(format!("{context}: {e}"))
}

pub(crate) fn prepare(s: &Scenario) -> Result<Plan, Invalid> {
    Ok(match s {
        Scenario::Simulate(s) => Plan::Simulate(simulate::prepare(s)?),
        Scenario::VerifyFlow(s) => Plan::Verify(verify::prepare(s)?),
        Scenario::Classify(s) => Plan::Classify(classify::prepare(s)?),
        Scenario::Bracket(s) => Plan::Bracket(bracket::prepare(s)?),
        Scenario::Morse(s) => Plan::Morse(morse::prepare(s)?),
        Scenario::Sweep(s) => Plan::Sweep(sweep::prepare(s)?),
    })
}

pub(crate) fn execute(plan: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    match plan {
        Plan::Simulate(p) => simulate::execute(p, ctx),
        Plan::Verify(p) => verify::execute(p, ctx),
        Plan::Classify(p) => classify::execute(p, ctx),
        Plan::Bracket(p) => bracket::execute(p, ctx),
        Plan::Morse(p) => morse::execute(p, ctx),
        Plan::Sweep(p) => sweep::execute(p, ctx),
    }
}

pub(crate) fn dimension(n: usize, at: &str) -> Result<(), Invalid> {
    if n == 0 {
        return Err(Invalid::at(at, "n must be at least 1"));
    }
    Ok(())
}

pub(crate) fn expression(text: &str, n: usize, at: &str) -> Result<Expression, Invalid> {
    Expression::parse(text, n).map_err(|e| Invalid::at(at, e.to_string()))
}

pub(crate) fn positive(v: f64, at: &str) -> Result<(), Invalid> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Invalid::at(at, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

pub(crate) fn non_negative(v: f64, at: &str) -> Result<(), Invalid> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Invalid::at(at, format!("must be non-negative and finite, got {v}")));
    }
    Ok(())
}

pub(crate) fn point(z: &[f64], n: usize, space: Space, at: &str) -> Result<PhasePoint, Invalid> {
    if z.len() != 2 * n {
        return Err(Invalid::at(at, format!("expected {} coordinates, found {}", 2 * n, z.len())));
    }
    PhasePoint::from_flat(z, space).map_err(|e| Invalid::at(at, e.to_string()))
}

pub(crate) fn integrator(i: Integrator, at: &str) -> Result<Integrator, Invalid> {
    i.validate().map_err(|e| Invalid::at(at, e))?;
    Ok(i)
}

pub(crate) fn non_empty<T>(list: &[T], at: &str) -> Result<(), Invalid> {
    if list.is_empty() {
        return Err(Invalid::at(at, "must not be empty"));
    }
    Ok(())
}

/// Artifact names are plain file names inside the output directory.
pub(crate) fn file_name(name: &str, at: &str) -> Result<(), Invalid> {
    let plain = !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\'])
        && name != REPORT_FILE;
    if !plain {
        return Err(Invalid::at(at, format!("`{name}` must be a plain file name other than {REPORT_FILE}")));
    }
    Ok(())
}

pub(crate) fn poly_shape(p: &PolyConfig, at: &str) -> Result<PolyShape, Invalid> {
    if p.coeff_bound < 0 {
        return Err(Invalid::at(format!("{at}/coeff_bound"), "must be non-negative"));
    }
    if p.max_denominator < 1 {
        return Err(Invalid::at(format!("{at}/max_denominator"), "must be at least 1"));
    }
    Ok(PolyShape {
        max_degree: p.max_degree,
        terms: p.terms,
        coeff_bound: p.coeff_bound,
        max_denominator: p.max_denominator,
    })
}

pub(crate) fn q_values(list: &[Q]) -> Vec<f64> {
    list.iter().map(|q| q.value).collect()
}

/// A validated single flow.
#[derive(Debug, Clone)]
pub(crate) struct Flow {
    pub hamiltonian: Expression,
    pub space: Space,
    pub z0: PhasePoint,
    pub t_final: f64,
    pub integrator: Integrator,
}

impl Flow {
    pub fn prepare(f: &FlowFixture, at: &str) -> Result<Self, Invalid> {
        dimension(f.n, &format!("{at}/n"))?;
        let space = Space::from(f.space);
        Ok(Flow {
            hamiltonian: expression(&f.hamiltonian, f.n, &format!("{at}/hamiltonian"))?,
            space,
            z0: point(&f.initial, f.n, space, &format!("{at}/initial"))?,
            t_final: {
                positive(f.t_final, &format!("{at}/t_final"))?;
                f.t_final
            },
            integrator: integrator(f.integrator.into(), &format!("{at}/integrator"))?,
        })
    }

    pub fn spec(&self, q: f64) -> FlowSpec {
        FlowSpec::new(self.hamiltonian.clone(), q, self.t_final)
            .with_integrator(self.integrator)
            .with_space(self.space)
    }

    pub fn n(&self) -> usize {
        self.hamiltonian.dim()
    }
}

/// Fixed-width scientific notation that round-trips.
pub(crate) fn float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_names() {
        assert!(file_name("out.csv", "/output").is_ok());
        for bad in ["", "..", "a/b", "report.json"] {
            assert_eq!(file_name(bad, "/output").unwrap_err().pointer, "/output");
        }
    }

    #[test]
    fn points_need_two_n_coordinates() {
        assert!(point(&[0.0, 1.0], 1, Space::Plane, "/p").is_ok());
        let e = point(&[0.0], 1, Space::Plane, "/p").unwrap_err();
        assert!(e.message.contains("expected 2"));
    }
}
