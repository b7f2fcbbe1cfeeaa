//! The deformed Hamiltonian field `X^q_H = (q^{-1} dH/dy, -dH/dx)`, its flow
//! and the variational equation for the flow Jacobian.

use std::io::{self, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{ExprError, Expression, JetEvaluator};
use crate::ode::{self, Control, Integrator, OdeError, VectorField};
use crate::phase::{omega_matrix, PhaseError, PhasePoint, Space, TangentVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("q must be nonzero")]
    ZeroQ,
    #[error("invalid flow specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("step size underflow at t = {t} (stiff or blowing-up solution)")]
    StepUnderflow { t: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
}

impl From<OdeError> for DynamicsError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Eval(e) => DynamicsError::Expr(e),
            OdeError::StepUnderflow { t } => DynamicsError::StepUnderflow { t },
            OdeError::NonFinite { t } => DynamicsError::NonFinite { t },
        }
    }
}

/// Compiled `X^q_H` with exact first and second derivatives of `H`.
#[derive(Debug, Clone)]
pub struct DeformedField {
    n: usize,
    q: f64,
    jet: JetEvaluator,
}

impl DeformedField {
    pub fn new(h: &Expression, q: f64) -> Result<Self, DynamicsError> {
        if q == 0.0 {
            return Err(DynamicsError::ZeroQ);
        }
        if !q.is_finite() {
            return Err(DynamicsError::InvalidSpec(format!("q must be finite, got {q}")));
        }
        Ok(DeformedField {
            n: h.dim(),
            q,
            jet: JetEvaluator::new(h),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn jet(&self) -> &JetEvaluator {
        &self.jet
    }

    pub fn hamiltonian(&self, z: &[f64]) -> Result<f64, ExprError> {
        self.jet.value(z)
    }

    /// Writes `X^q_H(z)` into `out` in the flattened `(a, b)` layout.
    pub fn eval_flat(&self, z: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let n = self.n;
        let mut grad = vec![0.0; 2 * n];
        self.jet.gradient_into(z, &mut grad)?;
        for i in 0..n {
            out[i] = grad[n + i] / self.q;
            out[n + i] = -grad[i];
        }
        Ok(())
    }

    pub fn at(&self, z: &PhasePoint) -> Result<TangentVector, ExprError> {
        let mut out = vec![0.0; 2 * self.n];
        self.eval_flat(&z.to_flat(), &mut out)?;
        Ok(TangentVector::from_flat(&out))
    }

    /// `dX^q_H/dz`, assembled from the exact Hessian of `H`.
    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let n = self.n;
        let hess = self.jet.hessian(z)?;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..2 * n {
                a[(i, j)] = hess[(n + i, j)] / self.q;
                a[(n + i, j)] = -hess[(i, j)];
            }
        }
        Ok(a)
    }

    /// `dH/dt = dH(X^q_H)` evaluated by contracting the gradient with the field.
    pub fn energy_rate(&self, z: &[f64]) -> Result<f64, ExprError> {
        let grad = self.jet.gradient(z)?;
        let mut field = vec![0.0; 2 * self.n];
        self.eval_flat(z, &mut field)?;
        Ok(grad.iter().zip(&field).map(|(g, v)| g * v).sum())
    }

    /// `sum_i H_{x_i} H_{y_i}` at `z`.
    pub fn mixed_product(&self, z: &[f64]) -> Result<f64, ExprError> {
        let grad = self.jet.gradient(z)?;
        Ok((0..self.n).map(|i| grad[i] * grad[self.n + i]).sum())
    }

    fn check_point(&self, z: &PhasePoint) -> Result<(), DynamicsError> {
        if z.dim() != self.n {
            return Err(PhaseError::DimensionMismatch {
                expected: self.n,
                found: z.dim(),
            }
            .into());
        }
        Ok(())
    }
}

impl VectorField for DeformedField {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError> {
        self.eval_flat(y, dy)
    }
}

/// State `(z, D)` with `D` stored column-major after `z`.
struct VariationalField<'a>(&'a DeformedField);

impl VectorField for VariationalField<'_> {
    fn dim(&self) -> usize {
        let m = 2 * self.0.n;
        m + m * m
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError> {
        let m = 2 * self.0.n;
        self.0.eval_flat(&y[..m], &mut dy[..m])?;
        let a = self.0.jacobian(&y[..m])?;
        let d = DMatrix::from_column_slice(m, m, &y[m..]);
        let ad = a * d;
        dy[m..].copy_from_slice(ad.as_slice());
        Ok(())
    }
}

/// `X^q_H(z)`.
pub fn deformed_field(h: &Expression, q: f64, z: &PhasePoint) -> Result<TangentVector, DynamicsError> {
    let field = DeformedField::new(h, q)?;
    field.check_point(z)?;
    Ok(field.at(z)?)
}

/// Comparison of the measured `dH/dt` with `(q^{-1} - 1) sum_i H_{x_i} H_{y_i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDefect {
    pub rate: f64,
    pub predicted: f64,
    pub absolute: f64,
    /// `absolute` divided by the rounding scale `(|q^{-1}| + 1) sum_i |H_{x_i} H_{y_i}|`,
    /// or equal to `absolute` when that scale vanishes.
    pub relative: f64,
}

pub fn energy_derivative_defect(
    h: &Expression,
    q: f64,
    z: &PhasePoint,
) -> Result<EnergyDefect, DynamicsError> {
    let field = DeformedField::new(h, q)?;
    field.check_point(z)?;
    field_energy_defect(&field, &z.to_flat())
}

pub fn field_energy_defect(field: &DeformedField, z: &[f64]) -> Result<EnergyDefect, DynamicsError> {
    let n = field.n;
    let grad = field.jet.gradient(z)?;
    let rate = field.energy_rate(z)?;
    let q_inv = 1.0 / field.q;
    let mixed: f64 = (0..n).map(|i| grad[i] * grad[n + i]).sum();
    let scale: f64 = (q_inv.abs() + 1.0) * (0..n).map(|i| (grad[i] * grad[n + i]).abs()).sum::<f64>();
    let predicted = (q_inv - 1.0) * mixed;
    let absolute = (rate - predicted).abs();
    Ok(EnergyDefect {
        rate,
        predicted,
        absolute,
        relative: if scale > 0.0 { absolute / scale } else { absolute },
    })
}

/// The three behaviours of `H` along the flow, by the sign of `q^{-1} - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `q > 1` or `q < 0`: `H` decreases where `sum H_x H_y > 0`.
    Dissipative,
    /// `q = 1`: `H` is conserved.
    Conservative,
    /// `0 < q < 1`: `-H` decreases where `sum H_x H_y > 0`.
    AntiDissipative,
}

impl Regime {
    pub fn of(q: f64) -> Regime {
        let c = 1.0 / q - 1.0;
        if c < 0.0 {
            Regime::Dissipative
        } else if c > 0.0 {
            Regime::AntiDissipative
        } else {
            Regime::Conservative
        }
    }

    /// Expected sign of `dH/dt` where `sum H_x H_y > 0`.
    pub fn energy_sign(&self) -> i8 {
        match self {
            Regime::Dissipative => -1,
            Regime::Conservative => 0,
            Regime::AntiDissipative => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub hamiltonian: Expression,
    pub q: f64,
    pub space: Space,
    pub integrator: Integrator,
    pub t_final: f64,
    pub sample_stride: usize,
}

impl FlowSpec {
    /// rk4 with step `1e-3`, stride 1, planar base.
    pub fn new(hamiltonian: Expression, q: f64, t_final: f64) -> Self {
        FlowSpec {
            hamiltonian,
            q,
            space: Space::Plane,
            integrator: Integrator::default(),
            t_final,
            sample_stride: 1,
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn with_space(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.q == 0.0 {
            return Err(DynamicsError::ZeroQ);
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(DynamicsError::InvalidSpec(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        if self.sample_stride == 0 {
            return Err(DynamicsError::InvalidSpec("sample_stride must be at least 1".into()));
        }
        self.integrator.validate().map_err(DynamicsError::InvalidSpec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub z: PhasePoint,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// CSV with header `t,x1..xn,y1..yn,H`, floats in round-trip `{:.16e}` form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.z.dim());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("y{i}")));
        header.push("H".into());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![format!("{:.16e}", s.t)];
            row.extend(s.z.x().iter().chain(s.z.y()).map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", s.h));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalFlow {
    pub trajectory: Trajectory,
    /// `D phi_t` for each sample of `trajectory`.
    pub jacobians: Vec<DMatrix<f64>>,
}

fn sample(field: &DeformedField, t: f64, z: &[f64], space: Space) -> Result<Sample, DynamicsError> {
    Ok(Sample {
        t,
        z: PhasePoint::from_flat(z, space)?,
        h: field.hamiltonian(z)?,
    })
}

/// Runs the solver, recording `(t, state)` at `t = 0`, every `stride`
/// accepted steps, and at the final time.
fn run<F: VectorField>(
    f: &F,
    y0: &[f64],
    spec: &FlowSpec,
) -> Result<Vec<(f64, Vec<f64>)>, DynamicsError> {
    let mut out = vec![(0.0, y0.to_vec())];
    let mut steps = 0usize;
    let mut last = (0.0, y0.to_vec());
    ode::solve(f, y0, spec.t_final, &spec.integrator, |t, y| {
        steps += 1;
        if steps % spec.sample_stride == 0 {
            out.push((t, y.to_vec()));
        }
        last = (t, y.to_vec());
        Control::Continue
    })?;
    if out.last().map(|s| s.0) != Some(last.0) && last.0 > 0.0 {
        out.push(last);
    }
    Ok(out)
}

fn prepare(spec: &FlowSpec, z0: &PhasePoint) -> Result<DeformedField, DynamicsError> {
    spec.validate()?;
    let field = DeformedField::new(&spec.hamiltonian, spec.q)?;
    field.check_point(z0)?;
    Ok(field)
}

pub fn integrate(spec: &FlowSpec, z0: &PhasePoint) -> Result<Trajectory, DynamicsError> {
    let field = prepare(spec, z0)?;
    let states = run(&field, &z0.to_flat(), spec)?;
    let samples = states
        .iter()
        .map(|(t, y)| sample(&field, *t, y, spec.space))
        .collect::<Result<_, _>>()?;
    Ok(Trajectory { samples })
}

pub fn integrate_variational(spec: &FlowSpec, z0: &PhasePoint) -> Result<VariationalFlow, DynamicsError> {
    let field = prepare(spec, z0)?;
    let m = 2 * field.n;
    let mut y0 = z0.to_flat();
    y0.extend_from_slice(DMatrix::<f64>::identity(m, m).as_slice());
    let states = run(&VariationalField(&field), &y0, spec)?;
    let mut samples = Vec::with_capacity(states.len());
    let mut jacobians = Vec::with_capacity(states.len());
    for (t, y) in &states {
        samples.push(sample(&field, *t, &y[..m], spec.space)?);
        jacobians.push(DMatrix::from_column_slice(m, m, &y[m..]));
    }
    Ok(VariationalFlow {
        trajectory: Trajectory { samples },
        jacobians,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PullbackMode {
    /// Compare `D^T Omega D` with `Omega`.
    Symplectic,
    /// Compare `D^T Omega D` with `e^{rate t} Omega`.
    Conformal { rate: f64 },
}

/// Conformal rate `(q^{-1} - 1) / c'` for `omega = c' d_- d_+ H`.
pub fn conformal_rate(q: f64, c_prime: f64) -> f64 {
    (1.0 / q - 1.0) / c_prime
}

/// Max-norm defect of the pulled-back symplectic form at each sample.
pub fn pullback_defect(vf: &VariationalFlow, mode: PullbackMode) -> Vec<(f64, f64)> {
    vf.trajectory
        .samples
        .iter()
        .zip(&vf.jacobians)
        .map(|(s, d)| {
            let omega = omega_matrix(d.nrows() / 2);
            let scale = match mode {
                PullbackMode::Symplectic => 1.0,
                PullbackMode::Conformal { rate } => (rate * s.t).exp(),
            };
            let diff = d.transpose() * &omega * d - omega * scale;
            (s.t, diff.amax())
        })
        .collect()
}

/// Largest defect over a pullback series.
pub fn max_defect(series: &[(f64, f64)]) -> f64 {
    series.iter().map(|p| p.1).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeCheck {
    /// Samples with `sum H_x H_y > 0`.
    pub checked: usize,
    /// Checked samples whose `dH/dt` sign disagrees with the regime.
    pub violations: usize,
    /// `max_t |H(t) - H(0)|`.
    pub max_energy_drift: f64,
}

/// Checks the sign of `dH/dt` against [`Regime::of`] at every sample where
/// `sum H_x H_y > 0`. Rates within `zero_tol` of zero count as sign 0.
pub fn regime_check(
    field: &DeformedField,
    trajectory: &Trajectory,
    zero_tol: f64,
) -> Result<RegimeCheck, DynamicsError> {
    let expected = Regime::of(field.q).energy_sign();
    let h0 = trajectory.samples.first().map_or(0.0, |s| s.h);
    let mut check = RegimeCheck {
        checked: 0,
        violations: 0,
        max_energy_drift: 0.0,
    };
    for s in &trajectory.samples {
        check.max_energy_drift = check.max_energy_drift.max((s.h - h0).abs());
        let z = s.z.to_flat();
        if field.mixed_product(&z)? <= 0.0 {
            continue;
        }
        check.checked += 1;
        let rate = field.energy_rate(&z)?;
        let sign = if rate.abs() <= zero_tol {
            0
        } else if rate > 0.0 {
            1
        } else {
            -1
        };
        if sign != expected {
            check.violations += 1;
        }
    }
    Ok(check)
}
