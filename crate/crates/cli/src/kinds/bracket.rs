use defham::bracket::{sweep, BracketReport, SweepShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{dimension, file_name, non_empty, non_negative, numeric, poly_shape, positive, RunError};
use crate::report::Relation;
use crate::scenario::Bracket;
use crate::{to_json, Context, Invalid};

pub(crate) struct Plan {
    q_list: Vec<f64>,
    seed: u64,
    shape: SweepShape,
    admissibility: f64,
    jacobi: f64,
    output: String,
}

pub(crate) fn prepare(s: &Bracket) -> Result<Plan, Invalid> {
    dimension(s.n, "/n")?;
    non_empty(&s.q_list, "/q_list")?;
    for (i, q) in s.q_list.iter().enumerate() {
        if q.value == -1.0 {
            return Err(Invalid::at(
                format!("/q_list/{i}"),
                "q = -1 is excluded: the antisymmetrized bracket vanishes identically",
            ));
        }
    }
    positive(s.radius, "/radius")?;
    non_negative(s.admissibility_threshold, "/admissibility_threshold")?;
    non_negative(s.jacobi_threshold, "/jacobi_threshold")?;
    file_name(&s.output, "/output")?;
    Ok(Plan {
        q_list: super::q_values(&s.q_list),
        seed: s.seed,
        shape: SweepShape {
            n: s.n,
            pairs: s.pairs,
            triples: s.triples,
            poly: poly_shape(&s.poly, "/poly")?,
            radius: s.radius,
        },
        admissibility: s.admissibility_threshold,
        jacobi: s.jacobi_threshold,
        output: s.output.clone(),
    })
}

#[derive(Serialize)]
struct Row {
    #[serde(flatten)]
    report: BracketReport,
    exact_failures: usize,
}

pub(crate) fn execute(p: &Plan, ctx: &mut Context) -> Result<(), RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut rows = Vec::with_capacity(p.q_list.len());
    for &q in &p.q_list {
        let (report, exact_failures) = sweep(&mut rng, q, &p.shape).map_err(numeric(&format!("q = {q}")))?;
        ctx.check(
            format!("q = {q}: max admissibility defect"),
            report.max_admissibility_defect,
            Relation::AtMost,
            p.admissibility,
        );
        ctx.check(format!("q = {q}: max Jacobi defect"), report.max_jacobi_defect, Relation::AtMost, p.jacobi);
        ctx.check(format!("q = {q}: exact admissibility failures"), exact_failures as f64, Relation::Equal, 0.0);
        rows.push(Row { report, exact_failures });
    }
    ctx.write(&p.output, &to_json(&rows))?;
    Ok(())
}
