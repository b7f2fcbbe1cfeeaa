use std::collections::BTreeMap;

use defham::dynamics::{
    conformal_rate, integrate, integrate_variational, max_defect, pullback_defect, DeformedField, PullbackMode,
};
use defham::morse::adiabatic_deviation;
use defham::phase::MetricFamily;
use rayon::prelude::*;

use super::morse::{setup, Setup};
use super::{float, non_empty, non_negative, numeric, point, Flow, RunError};
use crate::report::Relation;
use crate::scenario::{Observable, Sweep, SweepChecks};
use crate::{Context, Invalid};

struct Adiabatic {
    setup: Setup,
    from: Vec<f64>,
    to: Vec<f64>,
    index: usize,
}

pub(crate) struct Plan {
    flow: Flow,
    q_list: Vec<f64>,
    observables: Vec<Observable>,
    zero_tol: f64,
    c_prime: Option<f64>,
    adiabatic: Option<Adiabatic>,
    checks: SweepChecks,
    output: String,
}

pub(crate) fn prepare(s: &Sweep) -> Result<Plan, Invalid> {
    non_empty(&s.q_list, "/q_list")?;
    non_empty(&s.observables, "/observables")?;
    let flow = Flow::prepare(&s.flow, "/flow")?;
    non_negative(s.zero_tol, "/zero_tol")?;
    if let Some(c) = s.c_prime {
        if !(c.is_finite() && c != 0.0) {
            return Err(Invalid::at("/c_prime", "must be finite and nonzero"));
        }
    }
    let mut observables: Vec<Observable> = Vec::new();
    for &o in &s.observables {
        if !observables.contains(&o) {
            observables.push(o);
        }
    }
    let adiabatic = match &s.morse {
        Some(m) => {
            let space = m.fixture.space.into();
            point(&m.from, m.fixture.n, space, "/morse/from")?;
            point(&m.to, m.fixture.n, space, "/morse/to")?;
            if m.index == 0 {
                return Err(Invalid::at("/morse/index", "must be at least 1"));
            }
            Some(Adiabatic {
                setup: setup(&m.fixture, 1.0, "/morse/fixture")?,
                from: m.from.clone(),
                to: m.to.clone(),
                index: m.index,
            })
        }
        None if observables.contains(&Observable::AdiabaticDeviation) => {
            return Err(Invalid::at("/morse", "adiabatic_deviation needs a morse fixture"));
        }
        None => None,
    };
    if s.checks.regime_sign {
        let field = DeformedField::new(&flow.hamiltonian, 1.0).map_err(|e| Invalid::at("/flow", e.to_string()))?;
        let mixed = field
            .mixed_product(&flow.z0.to_flat())
            .map_err(|e| Invalid::at("/flow/initial", e.to_string()))?;
        if mixed <= 0.0 {
            return Err(Invalid::at(
                "/checks/regime_sign",
                "the regime sign check needs sum_i H_xi H_yi > 0 at the initial point",
            ));
        }
    }
    if let Some(t) = s.checks.fibre_volume_tol {
        non_negative(t, "/checks/fibre_volume_tol")?;
    }
    super::file_name(&s.output, "/output")?;
    Ok(Plan {
        flow,
        q_list: super::q_values(&s.q_list),
        observables,
        zero_tol: s.zero_tol,
        c_prime: s.c_prime,
        adiabatic,
        checks: s.checks.clone(),
        output: s.output.clone(),
    })
}

fn column(o: Observable) -> &'static str {
    match o {
        Observable::FinalH => "final_h",
        Observable::DeltaH => "delta_h",
        Observable::DeltaHSign => "delta_h_sign",
        Observable::PullbackDefect => "pullback_defect",
        Observable::FibreVolume => "fibre_volume",
        Observable::Signature => "signature",
        Observable::AdiabaticDeviation => "adiabatic_deviation",
    }
}

/// One sweep row. Cells that could not be computed stay empty and their
/// failure is listed in `errors`.
#[derive(Debug, Default)]
struct Row {
    q: f64,
    delta_h: Option<f64>,
    fibre_volume: Option<f64>,
    signature: Option<(usize, usize)>,
    cells: BTreeMap<Observable, String>,
    errors: Vec<String>,
}

fn sign_text(v: f64, zero_tol: f64) -> &'static str {
    if v.abs() <= zero_tol {
        "0"
    } else if v > 0.0 {
        "+"
    } else {
        "-"
    }
}

fn compute_row(p: &Plan, q: f64) -> Row {
    let mut row = Row {
        q,
        ..Row::default()
    };
    let wants = |o: Observable| p.observables.contains(&o);
    let needs_traj = wants(Observable::FinalH) || wants(Observable::DeltaH) || wants(Observable::DeltaHSign) || p.checks.regime_sign;
    if needs_traj {
        match integrate(&p.flow.spec(q), &p.flow.z0) {
            Ok(traj) => {
                let h0 = traj.samples.first().map_or(f64::NAN, |s| s.h);
                let h1 = traj.last().map_or(f64::NAN, |s| s.h);
                row.delta_h = Some(h1 - h0);
                row.cells.insert(Observable::FinalH, float(h1));
                row.cells.insert(Observable::DeltaH, float(h1 - h0));
                row.cells.insert(Observable::DeltaHSign, sign_text(h1 - h0, p.zero_tol).to_string());
            }
            Err(e) => row.errors.push(format!("flow: {e}")),
        }
    }
    if wants(Observable::PullbackDefect) {
        let mode = match p.c_prime {
            Some(c) => PullbackMode::Conformal {
                rate: conformal_rate(q, c),
            },
            None => PullbackMode::Symplectic,
        };
        match integrate_variational(&p.flow.spec(q), &p.flow.z0) {
            Ok(vf) => {
                row.cells
                    .insert(Observable::PullbackDefect, float(max_defect(&pullback_defect(&vf, mode))));
            }
            Err(e) => row.errors.push(format!("pullback_defect: {e}")),
        }
    }
    let family = MetricFamily::identity(p.flow.n(), q);
    if wants(Observable::FibreVolume) || p.checks.fibre_volume_tol.is_some() {
        match family.fibre_volume_ratio() {
            Ok(v) => {
                row.fibre_volume = Some(v);
                row.cells.insert(Observable::FibreVolume, float(v));
            }
            Err(e) => row.errors.push(format!("fibre_volume: {e}")),
        }
    }
    if wants(Observable::Signature) || p.checks.signature {
        let sig = family.signature();
        row.signature = Some(sig);
        row.cells.insert(Observable::Signature, format!("{}:{}", sig.0, sig.1));
    }
    if let (true, Some(a)) = (wants(Observable::AdiabaticDeviation), &p.adiabatic) {
        let result = a
            .setup
            .spec
            .with_q(q)
            .and_then(|_| adiabatic_deviation(&a.setup.spec, &[q], (&a.from, &a.to), a.index, &a.setup.bbox, &a.setup.settings));
        match result {
            Ok(points) => {
                row.cells
                    .insert(Observable::AdiabaticDeviation, float(points[0].deviation));
            }
            Err(e) => row.errors.push(format!("adiabatic_deviation: {e}")),
        }
    }
    row
}

fn csv_bytes(p: &Plan, rows: &[Row]) -> Result<Vec<u8>, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["q"];
    header.extend(p.observables.iter().map(|&o| column(o)));
    header.push("error");
    w.write_record(&header).map_err(numeric("csv"))?;
    for r in rows {
        let mut record = vec![float(r.q)];
        record.extend(p.observables.iter().map(|o| r.cells.get(o).cloned().unwrap_or_default()));
        record.push(r.errors.join("; "));
        w.write_record(&record).map_err(numeric("csv"))?;
    }
    w.into_inner().map_err(numeric("csv"))
}

pub(crate) fn execute(p: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    let mut rows: Vec<Row> = p.q_list.par_iter().map(|&q| compute_row(p, q)).collect();
    rows.sort_by(|a, b| a.q.total_cmp(&b.q));
    ctx.write(&p.output, &csv_bytes(p, &rows)?)?;

    if p.checks.regime_sign {
        let wrong = rows
            .iter()
            .filter(|r| {
                let expected = sign_text(1.0 / r.q - 1.0, 0.0);
                !r.delta_h.is_some_and(|d| sign_text(d, p.zero_tol) == expected)
            })
            .count();
        ctx.check("rows whose sign(delta H) differs from sign(1/q - 1)", wrong as f64, Relation::Equal, 0.0);
    }
    if let Some(tol) = p.checks.fibre_volume_tol {
        let n = p.flow.n() as f64;
        let worst = rows
            .iter()
            .filter(|r| r.q > 0.0)
            .map(|r| r.fibre_volume.map_or(f64::INFINITY, |v| (v - r.q.powf(n / 2.0)).abs()))
            .fold(0.0, f64::max);
        ctx.check("max |fibre volume ratio - q^(n/2)| over q > 0", worst, Relation::AtMost, tol);
    }
    if p.checks.signature {
        let n = p.flow.n();
        let wrong = rows
            .iter()
            .filter(|r| {
                let expected = if r.q > 0.0 { (2 * n, 0) } else { (n, n) };
                r.signature != Some(expected)
            })
            .count();
        ctx.check("rows with unexpected metric signature", wrong as f64, Relation::Equal, 0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signs() {
        assert_eq!(sign_text(1e-12, 1e-10), "0");
        assert_eq!(sign_text(-1.0, 1e-10), "-");
        assert_eq!(sign_text(2.0, 0.0), "+");
    }
}
