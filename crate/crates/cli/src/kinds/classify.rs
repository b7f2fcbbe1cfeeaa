use defham::expr::parse_rational;
use defham::forms::{classify_hamiltonian, Poly};
use defham::sample::{random_form, PolyShape};
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{dimension, expression, file_name, non_empty, numeric, poly_shape, RunError};
use crate::report::Relation;
use crate::scenario::Classify;
use crate::{to_json, Context, Invalid};

struct Expected {
    simple: bool,
    exceptionally_simple: bool,
    conformal_ratio: Option<BigRational>,
}

struct Entry {
    text: String,
    poly: Poly,
    expect: Option<Expected>,
}

struct Nilpotency {
    samples: usize,
    q_list: Vec<(String, BigRational)>,
    shape: PolyShape,
    terms: usize,
}

pub(crate) struct Plan {
    n: usize,
    seed: u64,
    entries: Vec<Entry>,
    nilpotency: Option<Nilpotency>,
    output: String,
}

pub(crate) fn prepare(s: &Classify) -> Result<Plan, Invalid> {
    dimension(s.n, "/n")?;
    file_name(&s.output, "/output")?;
    let mut entries = Vec::with_capacity(s.hamiltonians.len());
    for (i, e) in s.hamiltonians.iter().enumerate() {
        let at = format!("/hamiltonians/{i}");
        let h = expression(&e.hamiltonian, s.n, &format!("{at}/hamiltonian"))?;
        let poly = Poly::from_expression(&h).map_err(|err| Invalid::at(format!("{at}/hamiltonian"), err.to_string()))?;
        let expect = match &e.expect {
            None => None,
            Some(x) => Some(Expected {
                simple: x.simple,
                exceptionally_simple: x.exceptionally_simple,
                conformal_ratio: match &x.conformal_ratio {
                    None => None,
                    Some(t) => Some(parse_rational(t).ok_or_else(|| {
                        Invalid::at(format!("{at}/expect/conformal_ratio"), format!("`{t}` is not a fraction"))
                    })?),
                },
            }),
        };
        entries.push(Entry {
            text: e.hamiltonian.clone(),
            poly,
            expect,
        });
    }
    let nilpotency = match &s.nilpotency {
        None => None,
        Some(nil) => {
            non_empty(&nil.q_list, "/nilpotency/q_list")?;
            Some(Nilpotency {
                samples: nil.samples,
                q_list: nil.q_list.iter().map(|q| (q.exact.to_string(), q.exact.clone())).collect(),
                shape: poly_shape(&nil.poly, "/nilpotency/poly")?,
                terms: nil.terms,
            })
        }
    };
    if entries.is_empty() && nilpotency.is_none() {
        return Err(Invalid::at("/hamiltonians", "nothing to do: give hamiltonians or nilpotency"));
    }
    Ok(Plan {
        n: s.n,
        seed: s.seed,
        entries,
        nilpotency,
        output: s.output.clone(),
    })
}

#[derive(Serialize)]
struct NilpotencyResult {
    q: String,
    samples: usize,
    failures: usize,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn execute(p: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    let mut classified = Vec::with_capacity(p.entries.len());
    for e in &p.entries {
        let c = classify_hamiltonian(&e.poly);
        if let Some(x) = &e.expect {
            let name = &e.text;
            ctx.check(format!("{name}: simple"), flag(c.simple), Relation::Equal, flag(x.simple));
            ctx.check(
                format!("{name}: exceptionally simple"),
                flag(c.exceptionally_simple),
                Relation::Equal,
                flag(x.exceptionally_simple),
            );
            ctx.check(
                format!("{name}: conformal ratio matches"),
                flag(c.conformal_ratio == x.conformal_ratio),
                Relation::Equal,
                1.0,
            );
        }
        let mut v = serde_json::to_value(&c).expect("classification serializes");
        v["hamiltonian"] = json!(e.text);
        classified.push(v);
    }
    let mut nil_results = Vec::new();
    if let Some(nil) = &p.nilpotency {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        for (label, q) in &nil.q_list {
            let mut failures = 0;
            for i in 0..nil.samples {
                let form = random_form(&mut rng, p.n, i % 2, nil.terms, &nil.shape);
                let dd = form
                    .deformed_derivative(q)
                    .and_then(|f| f.deformed_derivative(q))
                    .map_err(numeric("d_q"))?;
                if !dd.is_zero() {
                    failures += 1;
                }
            }
            ctx.check(format!("d_q^2 = 0 (q = {label}): failures"), failures as f64, Relation::Equal, 0.0);
            nil_results.push(NilpotencyResult {
                q: label.clone(),
                samples: nil.samples,
                failures,
            });
        }
    }
    let doc = json!({ "hamiltonians": classified, "nilpotency": nil_results });
    ctx.write(&p.output, &to_json(&doc))?;
    Ok(())
}
