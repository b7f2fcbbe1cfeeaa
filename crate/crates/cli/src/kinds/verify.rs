use defham::dynamics::{
    conformal_rate, energy_derivative_defect, integrate, integrate_variational, max_defect, pullback_defect,
    regime_check, DeformedField, PullbackMode,
};
use defham::forms::Poly;
use defham::ode::Integrator;
use defham::phase::{PhasePoint, Space};
use defham::sample::{random_point, random_poly, PolyShape};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dimension, expression, non_empty, non_negative, numeric, point, poly_shape, positive, Flow, RunError};
use crate::report::Relation;
use crate::scenario::{FlowCheck, VerifyFlow};
use crate::{Context, Invalid};

enum Check {
    Energy {
        name: String,
        n: usize,
        samples: usize,
        shape: PolyShape,
        radius: f64,
        log_q: (f64, f64),
        threshold: f64,
    },
    Regime {
        name: String,
        flow: Flow,
        q_list: Vec<f64>,
        zero_tol: f64,
        conservation_tol: f64,
    },
    Symplectic {
        name: String,
        flow: Flow,
        q: f64,
        threshold: f64,
    },
    NonSimple {
        name: String,
        flow: Flow,
        q: f64,
        steps: Vec<f64>,
        min_defect: f64,
    },
    Conformal {
        name: String,
        flow: Flow,
        q: f64,
        c_prime: f64,
        threshold: f64,
        closed_form: Option<f64>,
    },
}

pub(crate) struct Plan {
    seed: u64,
    checks: Vec<Check>,
}

fn is_sum_of_xy(flow: &Flow) -> bool {
    let n = flow.n();
    let text: Vec<String> = (1..=n).map(|i| format!("x{i}*y{i}")).collect();
    let reference = defham::expr::Expression::parse(&text.join(" + "), n).expect("well-formed");
    match (Poly::from_expression(&flow.hamiltonian), Poly::from_expression(&reference)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn prepare_check(c: &FlowCheck, at: &str) -> Result<Check, Invalid> {
    let field = |f: &str| format!("{at}/{f}");
    Ok(match c {
        FlowCheck::EnergyIdentity {
            name,
            n,
            samples,
            poly,
            radius,
            q_magnitude,
            threshold,
        } => {
            dimension(*n, &field("n"))?;
            positive(*radius, &field("radius"))?;
            non_negative(*threshold, &field("threshold"))?;
            let [lo, hi] = *q_magnitude;
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Invalid::at(field("q_magnitude"), "needs 0 < low <= high"));
            }
            Check::Energy {
                name: name.clone(),
                n: *n,
                samples: *samples,
                shape: poly_shape(poly, &field("poly"))?,
                radius: *radius,
                log_q: (lo.ln(), hi.ln()),
                threshold: *threshold,
            }
        }
        FlowCheck::Regime {
            name,
            flow,
            q_list,
            zero_tol,
            conservation_tol,
        } => {
            non_empty(q_list, &field("q_list"))?;
            non_negative(*zero_tol, &field("zero_tol"))?;
            non_negative(*conservation_tol, &field("conservation_tol"))?;
            Check::Regime {
                name: name.clone(),
                flow: Flow::prepare(flow, &field("flow"))?,
                q_list: super::q_values(q_list),
                zero_tol: *zero_tol,
                conservation_tol: *conservation_tol,
            }
        }
        FlowCheck::Symplectic {
            name,
            flow,
            q,
            threshold,
        } => {
            non_negative(*threshold, &field("threshold"))?;
            Check::Symplectic {
                name: name.clone(),
                flow: Flow::prepare(flow, &field("flow"))?,
                q: q.value,
                threshold: *threshold,
            }
        }
        FlowCheck::NonSimple {
            name,
            n,
            hamiltonian,
            initial,
            t_final,
            q,
            steps,
            min_defect,
        } => {
            dimension(*n, &field("n"))?;
            positive(*t_final, &field("t_final"))?;
            non_empty(steps, &field("steps"))?;
            for (i, s) in steps.iter().enumerate() {
                positive(*s, &field(&format!("steps/{i}")))?;
            }
            non_negative(*min_defect, &field("min_defect"))?;
            Check::NonSimple {
                name: name.clone(),
                flow: Flow {
                    hamiltonian: expression(hamiltonian, *n, &field("hamiltonian"))?,
                    space: Space::Plane,
                    z0: point(initial, *n, Space::Plane, &field("initial"))?,
                    t_final: *t_final,
                    integrator: Integrator::default(),
                },
                q: q.value,
                steps: steps.clone(),
                min_defect: *min_defect,
            }
        }
        FlowCheck::Conformal {
            name,
            flow,
            q,
            c_prime,
            threshold,
            closed_form_threshold,
        } => {
            let flow = Flow::prepare(flow, &field("flow"))?;
            if !(c_prime.is_finite() && *c_prime != 0.0) {
                return Err(Invalid::at(field("c_prime"), "must be finite and nonzero"));
            }
            non_negative(*threshold, &field("threshold"))?;
            if let Some(t) = closed_form_threshold {
                non_negative(*t, &field("closed_form_threshold"))?;
                if !is_sum_of_xy(&flow) {
                    return Err(Invalid::at(
                        field("closed_form_threshold"),
                        "the closed form needs the hamiltonian x1*y1 + ... + xn*yn",
                    ));
                }
            }
            Check::Conformal {
                name: name.clone(),
                flow,
                q: q.value,
                c_prime: *c_prime,
                threshold: *threshold,
                closed_form: *closed_form_threshold,
            }
        }
    })
}

pub(crate) fn prepare(s: &VerifyFlow) -> Result<Plan, Invalid> {
    non_empty(&s.checks, "/checks")?;
    let checks = s
        .checks
        .iter()
        .enumerate()
        .map(|(i, c)| prepare_check(c, &format!("/checks/{i}")))
        .collect::<Result<_, _>>()?;
    Ok(Plan { seed: s.seed, checks })
}

fn energy_identity(
    rng: &mut ChaCha8Rng,
    n: usize,
    samples: usize,
    shape: &PolyShape,
    radius: f64,
    log_q: (f64, f64),
) -> Result<f64, RunError> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let h = random_poly(rng, n, shape).to_expression();
        let magnitude = rng.gen_range(log_q.0..=log_q.1).exp();
        let q = if rng.gen::<bool>() { magnitude } else { -magnitude };
        let z = PhasePoint::from_flat(&random_point(rng, n, radius), Space::Plane).map_err(numeric("point"))?;
        let d = energy_derivative_defect(&h, q, &z).map_err(numeric("energy identity"))?;
        worst = worst.max(d.relative);
    }
    Ok(worst)
}

fn closed_form_error(jacobian: &DMatrix<f64>, t: f64, q: f64) -> f64 {
    let n = jacobian.nrows() / 2;
    let expected = DMatrix::from_fn(2 * n, 2 * n, |i, j| match (i == j, i < n) {
        (true, true) => (t / q).exp(),
        (true, false) => (-t).exp(),
        _ => 0.0,
    });
    (jacobian - expected).amax()
}

pub(crate) fn execute(p: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    for check in &p.checks {
        match check {
            Check::Energy {
                name,
                n,
                samples,
                shape,
                radius,
                log_q,
                threshold,
            } => {
                let worst = energy_identity(&mut rng, *n, *samples, shape, *radius, *log_q)?;
                ctx.check(format!("{name}: max relative defect"), worst, Relation::AtMost, *threshold);
            }
            Check::Regime {
                name,
                flow,
                q_list,
                zero_tol,
                conservation_tol,
            } => {
                for &q in q_list {
                    let ctx_name = format!("{name} (q = {q})");
                    let field = DeformedField::new(&flow.hamiltonian, q).map_err(numeric(&ctx_name))?;
                    let traj = integrate(&flow.spec(q), &flow.z0).map_err(numeric(&ctx_name))?;
                    let r = regime_check(&field, &traj, *zero_tol).map_err(numeric(&ctx_name))?;
                    ctx.check(format!("{ctx_name}: checked samples"), r.checked as f64, Relation::AtLeast, 1.0);
                    ctx.check(format!("{ctx_name}: sign violations"), r.violations as f64, Relation::Equal, 0.0);
                    if q == 1.0 {
                        ctx.check(
                            format!("{ctx_name}: energy drift"),
                            r.max_energy_drift,
                            Relation::AtMost,
                            *conservation_tol,
                        );
                    }
                }
            }
            Check::Symplectic {
                name,
                flow,
                q,
                threshold,
            } => {
                let vf = integrate_variational(&flow.spec(*q), &flow.z0).map_err(numeric(name))?;
                let defect = max_defect(&pullback_defect(&vf, PullbackMode::Symplectic));
                ctx.check(format!("{name}: max pullback defect"), defect, Relation::AtMost, *threshold);
            }
            Check::NonSimple {
                name,
                flow,
                q,
                steps,
                min_defect,
            } => {
                for &step in steps {
                    let spec = flow.spec(*q).with_integrator(Integrator::Rk4 { step });
                    let vf = integrate_variational(&spec, &flow.z0).map_err(numeric(name))?;
                    let series = pullback_defect(&vf, PullbackMode::Symplectic);
                    let last = series.last().map_or(f64::NAN, |s| s.1);
                    ctx.check(
                        format!("{name}: pullback defect at t_final (step {step})"),
                        last,
                        Relation::AtLeast,
                        *min_defect,
                    );
                }
            }
            Check::Conformal {
                name,
                flow,
                q,
                c_prime,
                threshold,
                closed_form,
            } => {
                let vf = integrate_variational(&flow.spec(*q), &flow.z0).map_err(numeric(name))?;
                let rate = conformal_rate(*q, *c_prime);
                let defect = max_defect(&pullback_defect(&vf, PullbackMode::Conformal { rate }));
                ctx.check(format!("{name}: max conformal defect"), defect, Relation::AtMost, *threshold);
                if let Some(tol) = closed_form {
                    let worst = vf
                        .trajectory
                        .samples
                        .iter()
                        .zip(&vf.jacobians)
                        .map(|(s, d)| closed_form_error(d, s.t, *q))
                        .fold(0.0, f64::max);
                    ctx.check(format!("{name}: max closed-form Jacobian error"), worst, Relation::AtMost, *tol);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_at_zero_is_identity() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(closed_form_error(&id, 0.0, 0.5), 0.0);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2f64.exp(), (-1f64).exp()]));
        assert!(closed_form_error(&d, 1.0, 0.5) < 1e-15);
    }
}
