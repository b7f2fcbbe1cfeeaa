//! Scenario runner behind the `defham` command.
//!
//! A run reads a JSON scenario, validates it, executes it and writes its
//! artifacts plus `report.json` into an output directory. Every file is
//! written to a temporary file first and renamed into place.

mod kinds;
pub mod report;
pub mod scenario;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use report::{CheckRecord, Relation, Report};
use scenario::Scenario;

pub const REPORT_FILE: &str = "report.json";

/// A validation failure at a JSON-pointer location in the scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invalid {
    pub pointer: String,
    pub message: String,
}

impl Invalid {
    pub fn at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Invalid {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Invalid(Invalid),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for unusable input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Invalid(_) => 2,
            CliError::Write { .. } => 1,
        }
    }
}

fn escape_token(t: &str) -> String {
    t.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    path.iter()
        .filter_map(|seg| match seg {
            Segment::Seq { index } => Some(format!("/{index}")),
            Segment::Map { key } => Some(format!("/{}", escape_token(key))),
            Segment::Enum { .. } | Segment::Unknown => None,
        })
        .collect()
}

fn typed<T: DeserializeOwned>(value: Value) -> Result<T, Invalid> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = pointer_of(e.path());
        Invalid::at(pointer, e.into_inner().to_string())
    })
}

/// Parses scenario text, reporting the location of the first schema violation.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Value), Invalid> {
    let value: Value = serde_json::from_str(text).map_err(|e| Invalid::at("", format!("not valid JSON: {e}")))?;
    let mut body = match &value {
        Value::Object(map) => map.clone(),
        _ => return Err(Invalid::at("", "a scenario must be a JSON object")),
    };
    let kind = match body.remove("kind") {
        Some(Value::String(k)) => k,
        Some(_) => return Err(Invalid::at("/kind", "kind must be a string")),
        None => return Err(Invalid::at("/kind", "missing field `kind`")),
    };
    let body = Value::Object(body);
    let scenario = match kind.as_str() {
        "simulate" => Scenario::Simulate(typed(body)?),
        "verify-flow" => Scenario::VerifyFlow(typed(body)?),
        "classify" => Scenario::Classify(typed(body)?),
        "bracket" => Scenario::Bracket(typed(body)?),
        "morse" => Scenario::Morse(typed(body)?),
        "sweep" => Scenario::Sweep(typed(body)?),
        other => {
            return Err(Invalid::at(
                "/kind",
                format!("unknown kind `{other}`; expected simulate, verify-flow, classify, bracket, morse or sweep"),
            ))
        }
    };
    Ok((scenario, value))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses and checks a scenario file without running it.
pub fn validate_file(path: &Path) -> Result<Scenario, CliError> {
    let (scenario, _) = parse_scenario(&read(path)?).map_err(CliError::Invalid)?;
    kinds::prepare(&scenario).map_err(CliError::Invalid)?;
    Ok(scenario)
}

/// Collects checks and writes artifacts for one run.
pub(crate) struct Context<'a> {
    out_dir: &'a Path,
    checks: Vec<CheckRecord>,
    artifacts: Vec<String>,
}

impl Context<'_> {
    pub(crate) fn check(&mut self, name: impl Into<String>, measured: f64, relation: Relation, threshold: f64) {
        self.checks.push(CheckRecord::new(name, measured, relation, threshold));
    }

    pub(crate) fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.out_dir.join(name), bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifacts serialize to JSON");
    bytes.push(b'\n');
    bytes
}

/// Runs a scenario file and writes its artifacts and report into `out_dir`.
pub fn run_file(path: &Path, out_dir: &Path) -> Result<Report, CliError> {
    let (scenario, echo) = parse_scenario(&read(path)?).map_err(CliError::Invalid)?;
    let plan = kinds::prepare(&scenario).map_err(CliError::Invalid)?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut ctx = Context {
        out_dir,
        checks: Vec::new(),
        artifacts: Vec::new(),
    };
    let error = match kinds::execute(&plan, &mut ctx) {
        Ok(()) => None,
        Err(kinds::RunError::Numeric(msg)) => Some(msg),
        Err(kinds::RunError::Cli(e)) => return Err(e),
    };
    let report = Report::new(scenario.kind(), echo, ctx.checks, ctx.artifacts, error);
    write_atomic(&out_dir.join(REPORT_FILE), &to_json(&report))?;
    Ok(report)
}
