use defham::dynamics::{integrate, regime_check, DeformedField, FlowSpec};
use defham::phase::{PhasePoint, Space};

use super::{dimension, expression, file_name, integrator, non_empty, non_negative, numeric, point, positive, RunError};
use crate::report::Relation;
use crate::scenario::Simulate;
use crate::{Context, Invalid};

pub(crate) struct Plan {
    spec: FlowSpec,
    points: Vec<PhasePoint>,
    max_energy_drift: Option<f64>,
    regime_zero_tol: Option<f64>,
    prefix: String,
}

pub(crate) fn prepare(s: &Simulate) -> Result<Plan, Invalid> {
    dimension(s.n, "/n")?;
    let h = expression(&s.hamiltonian, s.n, "/hamiltonian")?;
    positive(s.t_final, "/t_final")?;
    if s.sample_stride == 0 {
        return Err(Invalid::at("/sample_stride", "must be at least 1"));
    }
    non_empty(&s.initial, "/initial")?;
    let space = Space::from(s.space);
    let points = s
        .initial
        .iter()
        .enumerate()
        .map(|(i, z)| point(z, s.n, space, &format!("/initial/{i}")))
        .collect::<Result<_, _>>()?;
    if let Some(tol) = s.max_energy_drift {
        non_negative(tol, "/max_energy_drift")?;
    }
    if let Some(tol) = s.regime_zero_tol {
        non_negative(tol, "/regime_zero_tol")?;
    }
    file_name(&format!("{}_0.csv", s.output_prefix), "/output_prefix")?;
    let spec = FlowSpec::new(h, s.q.value, s.t_final)
        .with_integrator(integrator(s.integrator.into(), "/integrator")?)
        .with_stride(s.sample_stride)
        .with_space(space);
    Ok(Plan {
        spec,
        points,
        max_energy_drift: s.max_energy_drift,
        regime_zero_tol: s.regime_zero_tol,
        prefix: s.output_prefix.clone(),
    })
}

pub(crate) fn execute(p: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    let field = DeformedField::new(&p.spec.hamiltonian, p.spec.q).map_err(numeric("field"))?;
    for (i, z0) in p.points.iter().enumerate() {
        let traj = integrate(&p.spec, z0).map_err(numeric(&format!("trajectory {i}")))?;
        ctx.write(&format!("{}_{i}.csv", p.prefix), traj.to_csv_string().as_bytes())?;
        if p.max_energy_drift.is_none() && p.regime_zero_tol.is_none() {
            continue;
        }
        let check = regime_check(&field, &traj, p.regime_zero_tol.unwrap_or(0.0)).map_err(numeric("regime"))?;
        if let Some(tol) = p.max_energy_drift {
            ctx.check(format!("trajectory {i}: energy drift"), check.max_energy_drift, Relation::AtMost, tol);
        }
        if p.regime_zero_tol.is_some() {
            ctx.check(format!("trajectory {i}: regime sign violations"), check.violations as f64, Relation::Equal, 0.0);
        }
    }
    Ok(())
}
