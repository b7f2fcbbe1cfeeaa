use std::collections::{BTreeMap, BTreeSet};

use defham::morse::{
    adiabatic_deviation, build_complex, homology_ranks, AdiabaticPoint, FlowLineRecord, MorseComplex, MorseError,
    MorseSettings, MorseSpec, SearchBox,
};
use defham::phase::Space;
use serde::Serialize;
use serde_json::json;

use super::{dimension, expression, file_name, non_empty, numeric, point, positive, RunError};
use crate::report::Relation;
use crate::scenario::{BoxConfig, Morse, MorseExpect, MorseFixture, Q};
use crate::{to_json, Context, Invalid};

/// A validated Morse fixture at some `q` in `(0, 1]`.
pub(crate) struct Setup {
    pub spec: MorseSpec,
    pub bbox: SearchBox,
    pub settings: MorseSettings,
}

fn unit_interval(q: f64, at: &str) -> Result<(), Invalid> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Invalid::at(at, format!("q must lie in (0, 1], got {q}")));
    }
    Ok(())
}

pub(crate) fn setup(f: &MorseFixture, q: f64, at: &str) -> Result<Setup, Invalid> {
    let field = |s: &str| format!("{at}/{s}");
    dimension(f.n, &field("n"))?;
    if f.w.len() != f.n {
        return Err(Invalid::at(field("w"), format!("expected {} functions, found {}", f.n, f.w.len())));
    }
    let fx = expression(&f.f, f.n, &field("f"))?;
    let w = f
        .w
        .iter()
        .enumerate()
        .map(|(i, t)| expression(t, f.n, &field(&format!("w/{i}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let g = expression(&f.g, f.n, &field("g"))?;
    let spec = MorseSpec::new(fx, w, g, q)
        .map_err(|e| {
            let pointer = match &e {
                MorseError::Separation { role, .. } if role == "f" => field("f"),
                MorseError::Separation { role, .. } if role == "g" => field("g"),
                MorseError::Separation { role, .. } => {
                    let i: usize = role.trim_start_matches('w').parse().unwrap_or(1);
                    field(&format!("w/{}", i - 1))
                }
                _ => at.to_string(),
            };
            Invalid::at(pointer, e.to_string())
        })?
        .with_space(Space::from(f.space));
    let bbox = match &f.search_box {
        BoxConfig::Cube { radius } => {
            positive(*radius, &field("box/radius"))?;
            SearchBox::cube(f.n, *radius)
        }
        BoxConfig::Bounds { lo, hi } => {
            if lo.len() != 2 * f.n {
                return Err(Invalid::at(field("box/lo"), format!("expected {} bounds", 2 * f.n)));
            }
            SearchBox::new(lo.clone(), hi.clone()).map_err(|e| Invalid::at(field("box"), e.to_string()))?
        }
    };
    if f.grid < 2 {
        return Err(Invalid::at(field("grid"), "must be at least 2"));
    }
    let mut settings = MorseSettings::default();
    settings.critical.grid = f.grid;
    let num = &f.numerics;
    let c = &mut settings.critical;
    let s = &mut settings.flow;
    let tol = |v: Option<f64>, name: &str, slot: &mut f64| -> Result<(), Invalid> {
        if let Some(v) = v {
            positive(v, &field(&format!("numerics/{name}")))?;
            *slot = v;
        }
        Ok(())
    };
    tol(num.newton_tol, "newton_tol", &mut c.newton_tol)?;
    tol(num.dedup_distance, "dedup_distance", &mut c.dedup_distance)?;
    tol(num.degeneracy_tol, "degeneracy_tol", &mut c.degeneracy_tol)?;
    tol(num.residual_tol, "residual_tol", &mut c.residual_tol)?;
    tol(num.epsilon, "epsilon", &mut s.epsilon)?;
    tol(num.delta, "delta", &mut s.delta)?;
    tol(num.t_max, "t_max", &mut s.t_max)?;
    tol(num.rel_tol, "rel_tol", &mut s.rel_tol)?;
    tol(num.abs_tol, "abs_tol", &mut s.abs_tol)?;
    if let Some(m) = num.max_iterations {
        c.max_iterations = m;
    }
    if let Some(m) = num.mesh {
        if m < 4 {
            return Err(Invalid::at(field("numerics/mesh"), "must be at least 4"));
        }
        s.mesh = m;
    }
    Ok(Setup { spec, bbox, settings })
}

/// Validates an adiabatic `q` list: strictly decreasing values in `(0, 1]`.
pub(crate) fn adiabatic_q_list(list: &[Q], at: &str) -> Result<Vec<f64>, Invalid> {
    non_empty(list, at)?;
    for (i, q) in list.iter().enumerate() {
        unit_interval(q.value, &format!("{at}/{i}"))?;
        if i > 0 && q.value >= list[i - 1].value {
            return Err(Invalid::at(format!("{at}/{i}"), "q values must be strictly decreasing"));
        }
    }
    Ok(super::q_values(list))
}

struct Adiabatic {
    q_list: Vec<f64>,
    from: Vec<f64>,
    to: Vec<f64>,
    index: usize,
    min_factor: f64,
}

pub(crate) struct Plan {
    setup: Setup,
    q_invariance: Vec<f64>,
    adiabatic: Option<Adiabatic>,
    expect: MorseExpect,
    output: String,
}

pub(crate) fn prepare(s: &Morse) -> Result<Plan, Invalid> {
    unit_interval(s.q.value, "/q")?;
    let setup = setup(&s.fixture, s.q.value, "/fixture")?;
    let n = s.fixture.n;
    let space = Space::from(s.fixture.space);
    for (i, q) in s.q_invariance.iter().enumerate() {
        unit_interval(q.value, &format!("/q_invariance/{i}"))?;
    }
    let adiabatic = match &s.adiabatic {
        None => None,
        Some(a) => {
            point(&a.from, n, space, "/adiabatic/from")?;
            point(&a.to, n, space, "/adiabatic/to")?;
            if a.index == 0 {
                return Err(Invalid::at("/adiabatic/index", "must be at least 1"));
            }
            positive(a.min_factor, "/adiabatic/min_factor")?;
            Some(Adiabatic {
                q_list: adiabatic_q_list(&a.q_list, "/adiabatic/q_list")?,
                from: a.from.clone(),
                to: a.to.clone(),
                index: a.index,
                min_factor: a.min_factor,
            })
        }
    };
    let e = &s.expect;
    if let Some(points) = &e.critical_points {
        for (i, z) in points.iter().enumerate() {
            point(z, n, space, &format!("/expect/critical_points/{i}"))?;
        }
    }
    if let Some(ix) = &e.indices {
        let expected = e.critical_points.as_ref().map_or(0, Vec::len);
        if ix.len() != expected {
            return Err(Invalid::at(
                "/expect/indices",
                format!("needs one index per expected critical point ({expected})"),
            ));
        }
    }
    positive(e.point_tol, "/expect/point_tol")?;
    file_name(&s.output, "/output")?;
    Ok(Plan {
        setup,
        q_invariance: super::q_values(&s.q_invariance),
        adiabatic,
        expect: e.clone(),
        output: s.output.clone(),
    })
}

#[derive(Serialize)]
struct PointRecord {
    z: Vec<f64>,
    index: usize,
    residual: f64,
}

#[derive(Serialize)]
struct Invariance {
    q: f64,
    homology_ranks: BTreeMap<usize, usize>,
}

fn rank_mismatches(a: &BTreeMap<usize, usize>, b: &BTreeMap<usize, usize>) -> usize {
    let degrees: BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    degrees.iter().filter(|d| a.get(d) != b.get(d)).count()
}

fn ranks_text(r: &BTreeMap<usize, usize>) -> String {
    let parts: Vec<String> = r.iter().map(|(d, k)| format!("{d}:{k}")).collect();
    format!("{{{}}}", parts.join(", "))
}

fn complex_at(setup: &Setup, q: f64) -> Result<MorseComplex, RunError> {
    let spec = setup.spec.with_q(q).map_err(numeric("fixture"))?;
    build_complex(&spec, &setup.bbox, &setup.settings).map_err(numeric(&format!("q = {q}")))
}

fn check_points(c: &MorseComplex, e: &MorseExpect, space: Space, ctx: &mut Context) {
    let found: Vec<(Vec<f64>, usize)> = c.critical_points().map(|p| (p.flat(), p.index)).collect();
    let Some(expected) = &e.critical_points else {
        return;
    };
    ctx.check("critical point count", found.len() as f64, Relation::Equal, expected.len() as f64);
    let mut worst: f64 = 0.0;
    let mut index_mismatches = 0;
    for (i, z) in expected.iter().enumerate() {
        let nearest = found
            .iter()
            .min_by(|a, b| space.distance(&a.0, z).total_cmp(&space.distance(&b.0, z)));
        match nearest {
            Some((p, index)) => {
                worst = worst.max(space.distance(p, z));
                if e.indices.as_ref().is_some_and(|ix| ix[i] != *index) {
                    index_mismatches += 1;
                }
            }
            None => worst = f64::INFINITY,
        }
    }
    ctx.check("max distance to expected critical points", worst, Relation::AtMost, e.point_tol);
    if e.indices.is_some() {
        ctx.check("index mismatches", index_mismatches as f64, Relation::Equal, 0.0);
    }
}

fn check_flow_lines(records: &[FlowLineRecord], expected: usize, ctx: &mut Context) {
    let mismatches = records.iter().filter(|r| r.raw != expected).count() + usize::from(records.is_empty());
    ctx.check(
        format!("raw flow-line count mismatches (expected {expected} per pair)"),
        mismatches as f64,
        Relation::Equal,
        0.0,
    );
}

pub(crate) fn execute(p: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    let spec = &p.setup.spec;
    let complex = match build_complex(spec, &p.setup.bbox, &p.setup.settings) {
        Err(e @ MorseError::BoundarySquare { .. }) => {
            ctx.check("boundary squares to zero", 1.0, Relation::Equal, 0.0);
            return Err(RunError::Numeric(e.to_string()));
        }
        other => other.map_err(numeric(&format!("q = {}", spec.q)))?,
    };
    ctx.check("boundary squares to zero", 0.0, Relation::Equal, 0.0);
    let residual = complex.critical_points().map(|c| c.residual).fold(0.0, f64::max);
    ctx.check(
        "max critical point residual",
        residual,
        Relation::AtMost,
        p.setup.settings.critical.residual_tol,
    );
    let ranks = homology_ranks(&complex);
    if let Some(expected) = &p.expect.homology_ranks {
        ctx.check(
            format!("homology ranks {} vs expected {}", ranks_text(&ranks), ranks_text(expected)),
            rank_mismatches(&ranks, expected) as f64,
            Relation::Equal,
            0.0,
        );
    }
    check_points(&complex, &p.expect, spec.space, ctx);
    if let Some(expected) = p.expect.raw_flow_lines {
        check_flow_lines(&complex.flow_line_counts, expected, ctx);
    }

    let mut invariance = Vec::with_capacity(p.q_invariance.len());
    for &q in &p.q_invariance {
        let other = homology_ranks(&complex_at(&p.setup, q)?);
        ctx.check(
            format!("homology ranks at q = {q} match q = {}", spec.q),
            rank_mismatches(&ranks, &other) as f64,
            Relation::Equal,
            0.0,
        );
        invariance.push(Invariance {
            q,
            homology_ranks: other,
        });
    }

    let mut adiabatic: Vec<AdiabaticPoint> = Vec::new();
    if let Some(a) = &p.adiabatic {
        adiabatic = adiabatic_deviation(
            spec,
            &a.q_list,
            (&a.from, &a.to),
            a.index,
            &p.setup.bbox,
            &p.setup.settings,
        )
        .map_err(numeric("adiabatic deviation"))?;
        let increases = adiabatic.windows(2).filter(|w| w[1].deviation >= w[0].deviation).count();
        ctx.check("adiabatic deviation non-decreasing steps", increases as f64, Relation::Equal, 0.0);
        let factor = match (adiabatic.first(), adiabatic.last()) {
            (Some(f), Some(l)) => f.deviation / l.deviation,
            _ => f64::NAN,
        };
        ctx.check("adiabatic decrease factor", factor, Relation::AtLeast, a.min_factor);
    }

    let points: Vec<PointRecord> = complex
        .critical_points()
        .map(|c| PointRecord {
            z: c.flat(),
            index: c.index,
            residual: c.residual,
        })
        .collect();
    let doc = json!({
        "q": spec.q,
        "critical_points": points,
        "boundary": complex.boundary,
        "homology_ranks": ranks,
        "flow_line_counts": complex.flow_line_counts,
        "warnings": complex.warnings,
        "q_invariance": invariance,
        "adiabatic": adiabatic,
    });
    ctx.write(&p.output, &to_json(&doc))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_comparison() {
        let a = BTreeMap::from([(1, 1), (2, 1)]);
        assert_eq!(rank_mismatches(&a, &a), 0);
        assert_eq!(rank_mismatches(&a, &BTreeMap::from([(1, 1)])), 1);
        assert_eq!(rank_mismatches(&a, &BTreeMap::from([(0, 1), (1, 2)])), 3);
        assert_eq!(ranks_text(&a), "{1:1, 2:1}");
    }
}
