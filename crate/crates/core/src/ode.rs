//! Explicit Runge-Kutta steppers for autonomous systems `y' = f(y)`.

use serde::{Deserialize, Serialize};

use crate::expr::ExprError;

/// An autonomous vector field on `R^d`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError>;
}

/// Stepper selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum Integrator {
    /// Classical fourth-order Runge-Kutta with a fixed step.
    Rk4 { step: f64 },
    /// Runge-Kutta-Fehlberg 4(5) with local error control.
    Rkf45 {
        rel_tol: f64,
        abs_tol: f64,
        #[serde(default)]
        max_step: Option<f64>,
    },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Rk4 { step: 1e-3 }
    }
}

impl Integrator {
    pub fn rkf45(rel_tol: f64, abs_tol: f64) -> Self {
        Integrator::Rkf45 {
            rel_tol,
            abs_tol,
            max_step: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Integrator::Rk4 { step } if !(step > 0.0 && step.is_finite()) => {
                Err(format!("step must be positive, got {step}"))
            }
            Integrator::Rkf45 {
                rel_tol, abs_tol, ..
            } if !(rel_tol > 0.0 && abs_tol > 0.0) => {
                Err("tolerances must be positive".to_string())
            }
            Integrator::Rkf45 {
                max_step: Some(h), ..
            } if !(h > 0.0) => Err("max_step must be positive".to_string()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    Eval(ExprError),
    /// The adaptive step fell below the resolvable size at time `t`.
    StepUnderflow { t: f64 },
    /// The state stopped being finite at time `t`.
    NonFinite { t: f64 },
}

impl From<ExprError> for OdeError {
    fn from(e: ExprError) -> Self {
        OdeError::Eval(e)
    }
}

/// Returned from the per-step observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Reason the solve loop ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Finish {
    /// Reached the final time.
    Completed,
    /// The observer asked to stop at time `t`.
    Stopped { t: f64 },
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// One classical RK4 step of size `h`, written into `out`.
pub fn rk4_step<F: VectorField + ?Sized>(
    f: &F,
    y: &[f64],
    h: f64,
    out: &mut [f64],
) -> Result<(), ExprError> {
    let d = y.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f.eval(y, &mut k1)?;
    axpy(&mut tmp, y, h, &[(0.5, &k1)]);
    f.eval(&tmp, &mut k2)?;
    axpy(&mut tmp, y, h, &[(0.5, &k2)]);
    f.eval(&tmp, &mut k3)?;
    axpy(&mut tmp, y, h, &[(1.0, &k3)]);
    f.eval(&tmp, &mut k4)?;
    axpy(
        out,
        y,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    );
    Ok(())
}

/// One Fehlberg 4(5) trial step. Writes the fifth-order solution into `out`
/// and returns the scaled max-norm error estimate.
fn rkf45_trial<F: VectorField + ?Sized>(
    f: &F,
    y: &[f64],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
    out: &mut [f64],
) -> Result<f64, ExprError> {
    let d = y.len();
    let mut k = vec![vec![0.0; d]; 6];
    let mut tmp = vec![0.0; d];
    f.eval(y, &mut k[0])?;
    axpy(&mut tmp, y, h, &[(0.25, &k[0])]);
    f.eval(&tmp, &mut k[1])?;
    axpy(&mut tmp, y, h, &[(3.0 / 32.0, &k[0]), (9.0 / 32.0, &k[1])]);
    f.eval(&tmp, &mut k[2])?;
    axpy(
        &mut tmp,
        y,
        h,
        &[
            (1932.0 / 2197.0, &k[0]),
            (-7200.0 / 2197.0, &k[1]),
            (7296.0 / 2197.0, &k[2]),
        ],
    );
    f.eval(&tmp, &mut k[3])?;
    axpy(
        &mut tmp,
        y,
        h,
        &[
            (439.0 / 216.0, &k[0]),
            (-8.0, &k[1]),
            (3680.0 / 513.0, &k[2]),
            (-845.0 / 4104.0, &k[3]),
        ],
    );
    f.eval(&tmp, &mut k[4])?;
    axpy(
        &mut tmp,
        y,
        h,
        &[
            (-8.0 / 27.0, &k[0]),
            (2.0, &k[1]),
            (-3544.0 / 2565.0, &k[2]),
            (1859.0 / 4104.0, &k[3]),
            (-11.0 / 40.0, &k[4]),
        ],
    );
    f.eval(&tmp, &mut k[5])?;

    const B5: [f64; 6] = [
        16.0 / 135.0,
        0.0,
        6656.0 / 12825.0,
        28561.0 / 56430.0,
        -9.0 / 50.0,
        2.0 / 55.0,
    ];
    const B4: [f64; 6] = [
        25.0 / 216.0,
        0.0,
        1408.0 / 2565.0,
        2197.0 / 4104.0,
        -1.0 / 5.0,
        0.0,
    ];
    let mut err: f64 = 0.0;
    for i in 0..d {
        let mut hi = 0.0;
        let mut diff = 0.0;
        for s in 0..6 {
            hi += B5[s] * k[s][i];
            diff += (B5[s] - B4[s]) * k[s][i];
        }
        out[i] = y[i] + h * hi;
        let scale = abs_tol + rel_tol * y[i].abs().max(out[i].abs());
        let e = (h * diff).abs() / scale;
        err = if e.is_nan() { f64::INFINITY } else { err.max(e) };
    }
    Ok(err)
}

/// Integrates from `t = 0` to `t_final`, calling `observe(t, y)` after
/// every accepted step (not at `t = 0`). The observer may stop the solve
/// early.
pub fn solve<F, O>(
    f: &F,
    y0: &[f64],
    t_final: f64,
    integrator: &Integrator,
    mut observe: O,
) -> Result<Finish, OdeError>
where
    F: VectorField + ?Sized,
    O: FnMut(f64, &[f64]) -> Control,
{
    let mut y = y0.to_vec();
    let mut next = vec![0.0; y.len()];
    match *integrator {
        Integrator::Rk4 { step } => {
            let full = (t_final / step + 1e-9).floor() as u64;
            let exact = (t_final - full as f64 * step).abs() <= 1e-12 * t_final.max(1.0);
            let mut t = 0.0;
            let mut k = 0u64;
            loop {
                let (t_next, h) = if k + 1 == full && exact {
                    (t_final, step)
                } else if k < full {
                    ((k + 1) as f64 * step, step)
                } else {
                    let rest = t_final - t;
                    if exact || rest <= 0.0 {
                        break;
                    }
                    (t_final, rest)
                };
                rk4_step(f, &y, h, &mut next)?;
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(OdeError::NonFinite { t });
                }
                std::mem::swap(&mut y, &mut next);
                t = t_next;
                k += 1;
                if observe(t, &y) == Control::Stop {
                    return Ok(Finish::Stopped { t });
                }
                if k > full {
                    break;
                }
            }
            Ok(Finish::Completed)
        }
        Integrator::Rkf45 {
            rel_tol,
            abs_tol,
            max_step,
        } => {
            let h_max = max_step.unwrap_or(f64::INFINITY).min(t_final);
            let mut h = (1e-3 * t_final).min(h_max).max(1e-10);
            let mut t = 0.0;
            while t < t_final {
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(OdeError::StepUnderflow { t });
                }
                let last = t + h >= t_final;
                let h_try = if last { t_final - t } else { h };
                let err = rkf45_trial(f, &y, h_try, rel_tol, abs_tol, &mut next)?;
                let finite = next.iter().all(|v| v.is_finite());
                if err <= 1.0 && finite {
                    std::mem::swap(&mut y, &mut next);
                    t = if last { t_final } else { t + h_try };
                    if observe(t, &y) == Control::Stop {
                        return Ok(Finish::Stopped { t });
                    }
                }
                let factor = if err == 0.0 {
                    5.0
                } else if !finite || !err.is_finite() {
                    0.1
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 5.0)
                };
                h = (h_try * factor).min(h_max);
            }
            Ok(Finish::Completed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);

    impl VectorField for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError> {
            dy[0] = -self.0 * y[0];
            Ok(())
        }
    }

    struct Blowup;

    impl VectorField for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    #[test]
    fn rk4_hits_final_time_exactly() {
        let mut times = Vec::new();
        solve(&Decay(1.0), &[1.0], 1.05, &Integrator::Rk4 { step: 0.1 }, |t, _| {
            times.push(t);
            Control::Continue
        })
        .unwrap();
        assert_eq!(times.len(), 11);
        assert_eq!(*times.last().unwrap(), 1.05);
    }

    #[test]
    fn rkf45_meets_tolerance() {
        let mut last = 0.0;
        solve(&Decay(2.0), &[1.0], 3.0, &Integrator::rkf45(1e-10, 1e-12), |_, y| {
            last = y[0];
            Control::Continue
        })
        .unwrap();
        assert!((last - (-6.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn blowup_is_reported_with_time() {
        // y' = y^2, y(0) = 1 blows up at t = 1.
        let err = solve(&Blowup, &[1.0], 2.0, &Integrator::rkf45(1e-8, 1e-8), |_, _| {
            Control::Continue
        })
        .unwrap_err();
        match err {
            OdeError::StepUnderflow { t } | OdeError::NonFinite { t } => {
                assert!((t - 1.0).abs() < 1e-2, "{t}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observer_can_stop() {
        let finish = solve(&Decay(1.0), &[1.0], 10.0, &Integrator::Rk4 { step: 0.01 }, |_, y| {
            if y[0] < 0.5 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        match finish {
            Finish::Stopped { t } => assert!((t - 2f64.ln()).abs() < 0.011),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation() {
        assert!(Integrator::Rk4 { step: 0.0 }.validate().is_err());
        assert!(Integrator::rkf45(0.0, 1e-9).validate().is_err());
        assert!(Integrator::default().validate().is_ok());
    }
}
