//! Scenario file schema.
//!
//! A scenario is a JSON object whose `kind` selects one of the variants of
//! [`Scenario`]. Unknown fields are rejected everywhere.

use std::collections::BTreeMap;

use defham::expr::parse_rational;
use defham::ode::Integrator;
use defham::phase::Space;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use schemars::JsonSchema;
use serde::Deserialize;

/// A nonzero real parameter, written as a JSON number or as a string holding
/// a decimal or a fraction `a/b` (for example `"1/3"`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "QText")]
pub struct Q {
    pub value: f64,
    /// The decimal expansion of a JSON number, or the exact fraction of a string.
    pub exact: BigRational,
}

#[derive(Deserialize, JsonSchema)]
#[serde(untagged)]
#[allow(dead_code)]
enum QText {
    Number(f64),
    Text(String),
}

impl TryFrom<QText> for Q {
    type Error = String;

    fn try_from(raw: QText) -> Result<Self, String> {
        let exact = match raw {
            QText::Number(v) if !v.is_finite() => return Err(format!("{v} is not finite")),
            QText::Number(v) => parse_rational(&format!("{v}")).ok_or_else(|| format!("cannot read {v}"))?,
            QText::Text(t) => parse_rational(&t).ok_or_else(|| format!("`{t}` is not a number or a fraction"))?,
        };
        if exact.is_zero() {
            return Err("q must be nonzero".into());
        }
        let value = exact.to_f64().filter(|v| v.is_finite()).ok_or("q is out of range")?;
        Ok(Q { value, exact })
    }
}

impl JsonSchema for Q {
    fn schema_name() -> String {
        "Q".into()
    }

    fn json_schema(gen: &mut schemars::gen::SchemaGenerator) -> schemars::schema::Schema {
        QText::json_schema(gen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, JsonSchema)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum IntegratorConfig {
    /// Classical Runge-Kutta with a fixed step.
    Rk4 { step: f64 },
    /// Adaptive Runge-Kutta-Fehlberg 4(5).
    Rkf45 {
        rel_tol: f64,
        abs_tol: f64,
        #[serde(default)]
        max_step: Option<f64>,
    },
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig::Rk4 { step: 1e-3 }
    }
}

impl From<IntegratorConfig> for Integrator {
    fn from(c: IntegratorConfig) -> Self {
        match c {
            IntegratorConfig::Rk4 { step } => Integrator::Rk4 { step },
            IntegratorConfig::Rkf45 {
                rel_tol,
                abs_tol,
                max_step,
            } => Integrator::Rkf45 {
                rel_tol,
                abs_tol,
                max_step,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SpaceName {
    #[default]
    Plane,
    /// Base coordinates are taken modulo `2 pi`.
    Torus,
}

impl From<SpaceName> for Space {
    fn from(s: SpaceName) -> Self {
        match s {
            SpaceName::Plane => Space::Plane,
            SpaceName::Torus => Space::Torus,
        }
    }
}

/// Shape of random polynomials with rational coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct PolyConfig {
    pub max_degree: u32,
    pub terms: usize,
    pub coeff_bound: i64,
    pub max_denominator: i64,
}

impl Default for PolyConfig {
    fn default() -> Self {
        PolyConfig {
            max_degree: 3,
            terms: 4,
            coeff_bound: 5,
            max_denominator: 3,
        }
    }
}

fn one() -> usize {
    1
}

fn default_trajectory() -> String {
    "trajectory".into()
}

/// Integrates one Hamiltonian from several initial points and writes one
/// CSV file per point.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Simulate {
    pub n: usize,
    pub hamiltonian: String,
    pub q: Q,
    #[serde(default)]
    pub space: SpaceName,
    /// Initial points `[x1..xn, y1..yn]`.
    pub initial: Vec<Vec<f64>>,
    pub t_final: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// Record every `sample_stride`-th step.
    #[serde(default = "one")]
    pub sample_stride: usize,
    /// Maximum tolerated `|H(t) - H(0)|`.
    #[serde(default)]
    pub max_energy_drift: Option<f64>,
    /// Checks the sign of `dH/dt` against the regime of `q` wherever
    /// `sum_i H_xi H_yi > 0`; rates within this tolerance count as zero.
    #[serde(default)]
    pub regime_zero_tol: Option<f64>,
    /// Files are named `<prefix>_<i>.csv`.
    #[serde(default = "default_trajectory")]
    pub output_prefix: String,
}

/// A single flow started at one point.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FlowFixture {
    pub n: usize,
    pub hamiltonian: String,
    #[serde(default)]
    pub space: SpaceName,
    pub initial: Vec<f64>,
    pub t_final: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

fn default_q_magnitude() -> [f64; 2] {
    [0.1, 10.0]
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FlowCheck {
    /// `dH/dt = (q^-1 - 1) sum_i H_xi H_yi` at random `(H, q, z)`.
    EnergyIdentity {
        name: String,
        n: usize,
        samples: usize,
        #[serde(default)]
        poly: PolyConfig,
        /// Points are drawn from the cube of this half-width.
        #[serde(default = "default_radius")]
        radius: f64,
        /// `|q|` is log-uniform on this range, with a random sign.
        #[serde(default = "default_q_magnitude")]
        q_magnitude: [f64; 2],
        threshold: f64,
    },
    /// Sign of `dH/dt` against the regime of each `q`, and energy
    /// conservation at `q = 1`.
    Regime {
        name: String,
        flow: FlowFixture,
        q_list: Vec<Q>,
        #[serde(default)]
        zero_tol: f64,
        conservation_tol: f64,
    },
    /// `max_t |D^T Omega D - Omega|` along the flow.
    Symplectic {
        name: String,
        flow: FlowFixture,
        q: Q,
        threshold: f64,
    },
    /// Pullback defect at `t_final` with rk4 at each step size; every value
    /// must reach `min_defect`.
    NonSimple {
        name: String,
        n: usize,
        hamiltonian: String,
        initial: Vec<f64>,
        t_final: f64,
        q: Q,
        steps: Vec<f64>,
        min_defect: f64,
    },
    /// `max_t |D^T Omega D - e^{(q^-1 - 1) t / c'} Omega|`; optionally the
    /// Jacobian of `H = sum_i x_i y_i` against `diag(e^{t/q}, e^{-t})`.
    Conformal {
        name: String,
        flow: FlowFixture,
        q: Q,
        c_prime: f64,
        threshold: f64,
        #[serde(default)]
        closed_form_threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VerifyFlow {
    #[serde(default)]
    pub seed: u64,
    pub checks: Vec<FlowCheck>,
}

/// Expected classification of a polynomial Hamiltonian.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExpectedClass {
    pub simple: bool,
    pub exceptionally_simple: bool,
    /// `c'` with `omega = c' d_minus d_plus H`, as a fraction string, or null.
    #[serde(default)]
    pub conformal_ratio: Option<String>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClassifyEntry {
    pub hamiltonian: String,
    #[serde(default)]
    pub expect: Option<ExpectedClass>,
}

/// `d_q d_q = 0` on random forms of degree 0 and 1.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Nilpotency {
    /// Forms per value of `q`, alternating between degrees 0 and 1.
    pub samples: usize,
    pub q_list: Vec<Q>,
    #[serde(default)]
    pub poly: PolyConfig,
    #[serde(default = "default_form_terms")]
    pub terms: usize,
}

fn default_form_terms() -> usize {
    3
}

fn default_classification() -> String {
    "classification.json".into()
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Classify {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hamiltonians: Vec<ClassifyEntry>,
    #[serde(default)]
    pub nilpotency: Option<Nilpotency>,
    #[serde(default = "default_classification")]
    pub output: String,
}

fn default_pairs() -> usize {
    100
}

fn default_triples() -> usize {
    20
}

fn default_bracket_output() -> String {
    "bracket.json".into()
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Bracket {
    pub n: usize,
    pub q_list: Vec<Q>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_triples")]
    pub triples: usize,
    #[serde(default)]
    pub poly: PolyConfig,
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub admissibility_threshold: f64,
    pub jacobi_threshold: f64,
    #[serde(default = "default_bracket_output")]
    pub output: String,
}

/// Search region: a cube `[-radius, radius]^{2n}` or explicit bounds.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum BoxConfig {
    Cube { radius: f64 },
    Bounds { lo: Vec<f64>, hi: Vec<f64> },
}

impl Default for BoxConfig {
    fn default() -> Self {
        BoxConfig::Cube { radius: 2.0 }
    }
}

fn default_grid() -> usize {
    7
}

/// Overrides of the numerical defaults of the Morse pipeline.
#[derive(Debug, Clone, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MorseNumerics {
    pub newton_tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub dedup_distance: Option<f64>,
    pub degeneracy_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    /// Shooting radius around `p-`.
    pub epsilon: Option<f64>,
    /// Capture radius around `p+`.
    pub delta: Option<f64>,
    pub mesh: Option<usize>,
    pub t_max: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MorseFixture {
    pub n: usize,
    /// Function of `x` only.
    pub f: String,
    /// `n` functions of `x` only; `"0"` marks an unused multiplier.
    pub w: Vec<String>,
    /// Function of `y` only.
    pub g: String,
    #[serde(default)]
    pub space: SpaceName,
    #[serde(default, rename = "box")]
    pub search_box: BoxConfig,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub numerics: MorseNumerics,
}

/// Deviation from the constraint set along one flow line as `q` decreases.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Adiabatic {
    /// Strictly decreasing values in `(0, 1]`.
    pub q_list: Vec<Q>,
    /// Approximate location of `p-` (the nearest critical point of index `index` is used).
    pub from: Vec<f64>,
    /// Approximate location of `p+` (index `index - 1`).
    pub to: Vec<f64>,
    pub index: usize,
    /// Required ratio of the first to the last deviation.
    pub min_factor: f64,
}

#[derive(Debug, Clone, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MorseExpect {
    /// Expected nonzero homology ranks keyed by degree.
    #[serde(default)]
    pub homology_ranks: Option<BTreeMap<usize, usize>>,
    /// Expected critical points, in any order.
    #[serde(default)]
    pub critical_points: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_point_tol")]
    pub point_tol: f64,
    /// Expected index of each point listed in `critical_points`.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    /// Expected raw flow-line count for every pair of adjacent indices.
    #[serde(default)]
    pub raw_flow_lines: Option<usize>,
}

fn default_point_tol() -> f64 {
    1e-8
}

fn default_morse_output() -> String {
    "morse.json".into()
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Morse {
    pub fixture: MorseFixture,
    /// In `(0, 1]`.
    pub q: Q,
    /// Further values of `q` at which the homology ranks must agree.
    #[serde(default)]
    pub q_invariance: Vec<Q>,
    #[serde(default)]
    pub adiabatic: Option<Adiabatic>,
    #[serde(default)]
    pub expect: MorseExpect,
    #[serde(default = "default_morse_output")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `H` at `t_final`.
    FinalH,
    /// `H(t_final) - H(0)`.
    DeltaH,
    /// `-`, `0` or `+`.
    DeltaHSign,
    /// Largest symplectic (or conformal, with `c_prime`) pullback defect.
    PullbackDefect,
    /// `vol_{G_q} / vol_{G_1}` of a fibre.
    FibreVolume,
    /// Signature of `G_q` as `positive:negative`.
    Signature,
    /// Requires `morse`.
    AdiabaticDeviation,
}

/// Morse data for the adiabatic deviation column of a sweep.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepMorse {
    pub fixture: MorseFixture,
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub index: usize,
}

#[derive(Debug, Clone, Default, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepChecks {
    /// `sign(H(t_final) - H(0))` equals `sign(q^-1 - 1)`; needs
    /// `sum_i H_xi H_yi > 0` at the initial point.
    #[serde(default)]
    pub regime_sign: bool,
    /// `|vol ratio - q^{n/2}|` at every positive `q`.
    #[serde(default)]
    pub fibre_volume_tol: Option<f64>,
    /// Signature `(2n, 0)` for `q > 0` and `(n, n)` for `q < 0`.
    #[serde(default)]
    pub signature: bool,
}

fn default_sweep_output() -> String {
    "sweep.csv".into()
}

fn default_zero_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub flow: FlowFixture,
    pub q_list: Vec<Q>,
    pub observables: Vec<Observable>,
    /// `|Delta H|` at or below this reads as sign `0`.
    #[serde(default = "default_zero_tol")]
    pub zero_tol: f64,
    /// Measure the pullback defect against `e^{(q^-1 - 1) t / c'} omega`.
    #[serde(default)]
    pub c_prime: Option<f64>,
    #[serde(default)]
    pub morse: Option<SweepMorse>,
    #[serde(default)]
    pub checks: SweepChecks,
    #[serde(default = "default_sweep_output")]
    pub output: String,
}

/// A scenario file.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Simulate(Simulate),
    VerifyFlow(VerifyFlow),
    Classify(Classify),
    Bracket(Bracket),
    Morse(Morse),
    Sweep(Sweep),
}

impl Scenario {
    pub fn kind(&self) -> &'static str {
        match self {
            Scenario::Simulate(_) => "simulate",
            Scenario::VerifyFlow(_) => "verify-flow",
            Scenario::Classify(_) => "classify",
            Scenario::Bracket(_) => "bracket",
            Scenario::Morse(_) => "morse",
            Scenario::Sweep(_) => "sweep",
        }
    }
}

pub fn schema() -> schemars::schema::RootSchema {
    schemars::schema_for!(Scenario)
}
