use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    /// `null` when the quantity could not be computed.
    pub measured: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, measured: f64, relation: Relation, threshold: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => measured <= threshold,
            Relation::AtLeast => measured >= threshold,
            Relation::Equal => measured == threshold,
        };
        CheckRecord {
            name: name.into(),
            measured,
            relation,
            threshold,
            pass,
        }
    }
}

/// Contents of `report.json`. Timing is printed to stdout only so that
/// reruns produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub kind: String,
    pub scenario: Value,
    pub checks: Vec<CheckRecord>,
    pub artifacts: Vec<String>,
    /// Set when the run stopped on a numerical failure.
    pub error: Option<String>,
    pub pass: bool,
}

impl Report {
    pub fn new(kind: &str, scenario: Value, checks: Vec<CheckRecord>, artifacts: Vec<String>, error: Option<String>) -> Self {
        let pass = error.is_none() && checks.iter().all(|c| c.pass);
        Report {
            kind: kind.to_string(),
            scenario,
            checks,
            artifacts,
            error,
            pass,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(CheckRecord::new("a", 1.0, Relation::AtMost, 1.0).pass);
        assert!(!CheckRecord::new("a", 1.5, Relation::AtMost, 1.0).pass);
        assert!(CheckRecord::new("a", 2.0, Relation::AtLeast, 1.0).pass);
        assert!(CheckRecord::new("a", 2.0, Relation::Equal, 2.0).pass);
        assert!(!CheckRecord::new("a", f64::NAN, Relation::AtMost, 1.0).pass);
        assert!(!CheckRecord::new("a", f64::NAN, Relation::AtLeast, 1.0).pass);
    }

    #[test]
    fn overall_pass_needs_every_check() {
        let ok = CheckRecord::new("a", 0.0, Relation::AtMost, 1.0);
        let bad = CheckRecord::new("b", 2.0, Relation::AtMost, 1.0);
        assert!(Report::new("x", Value::Null, vec![ok.clone()], vec![], None).pass);
        assert!(!Report::new("x", Value::Null, vec![ok.clone(), bad], vec![], None).pass);
        assert!(!Report::new("x", Value::Null, vec![ok], vec![], Some("boom".into())).pass);
        assert!(Report::new("x", Value::Null, vec![], vec![], None).pass);
    }
}
