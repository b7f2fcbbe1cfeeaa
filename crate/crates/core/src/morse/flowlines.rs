use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use super::critical::{normalize, CriticalPoint};
use super::{build_hamiltonian, MorseError, MorseSpec, SearchBox};
use crate::expr::{ExprError, JetEvaluator};
use crate::ode::{self, Control, Integrator, OdeError, VectorField};
use crate::phase::Space;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowLineSettings {
    /// Radius of the shooting sphere around `p-`.
    pub epsilon: f64,
    /// Capture radius around `p+`.
    pub delta: f64,
    /// Shots on the unstable circle (dimension 2).
    pub mesh: usize,
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Shots passing this close to `p+` are told apart by the side on which they pass.
    pub approach_radius: f64,
    pub max_bisections: usize,
    /// Separation to which bracketing states are refined while tracking a line.
    pub track_tol: f64,
    /// Constraint magnitude at which a shot counts as having left the constraint set.
    pub departure: f64,
}

impl Default for FlowLineSettings {
    fn default() -> Self {
        FlowLineSettings {
            epsilon: 1e-4,
            delta: 1e-3,
            mesh: 64,
            t_max: 200.0,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            approach_radius: 1.5,
            max_bisections: 60,
            track_tol: 1e-8,
            departure: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowLineCount {
    pub raw: usize,
    pub mod2: u8,
    pub shots: usize,
    pub escaped: usize,
    /// Set when more than half of the mesh shots left the search box.
    pub warning: Option<String>,
    /// One sampled trajectory per counted line, from `p-` to the capture ball of `p+`.
    #[serde(skip)]
    pub lines: Vec<Vec<Vec<f64>>>,
}

/// `du/dt = (-dH/dx, -q^{-1} dH/dy)`.
pub(super) struct GradientFlow {
    pub jet: JetEvaluator,
    pub q: f64,
}

impl VectorField for GradientFlow {
    fn dim(&self) -> usize {
        2 * self.jet.dim()
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) -> Result<(), ExprError> {
        let n = self.jet.dim();
        self.jet.gradient_into(y, dy)?;
        for (i, v) in dy.iter_mut().enumerate() {
            *v = if i < n { -*v } else { -*v / self.q };
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Captured,
    Escaped,
    Converged,
    TimedOut,
    /// Left the constraint set; only reported when tracking.
    Departed,
}

/// Forward fate of one initial state.
struct Shot {
    outcome: Outcome,
    min_distance: f64,
    /// `G_q(u - p+, e_u)` at the closest approach.
    side: f64,
    /// Coordinate and direction through which the box was left.
    exit: Option<(usize, bool)>,
    /// Signs of the active constraints when the shot first leaves the
    /// constraint set.
    departure: Option<Vec<bool>>,
    end: Vec<f64>,
    /// Kept only for captured shots.
    path: Vec<Vec<f64>>,
}

/// Eigenvectors of the normalized Hessian with negative eigenvalue, mapped
/// back to `G_q`-orthonormal tangent vectors, in ascending eigenvalue order.
fn unstable_directions(hess: &DMatrix<f64>, q: f64) -> Vec<Vec<f64>> {
    let n = hess.nrows() / 2;
    let eig = SymmetricEigen::new(normalize(hess, q));
    let mut order: Vec<usize> = (0..hess.nrows()).filter(|&i| eig.eigenvalues[i] < 0.0).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .into_iter()
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            for (j, x) in v.iter_mut().enumerate() {
                *x *= sign * if j < n { 1.0 } else { q.sqrt().recip() };
            }
            v
        })
        .collect()
}

fn midpoint(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| 0.5 * (u + v)).collect()
}

struct Shooter<'a> {
    flow: &'a GradientFlow,
    space: Space,
    bbox: &'a SearchBox,
    origin: Vec<f64>,
    target: Vec<f64>,
    target_unstable: Option<Vec<f64>>,
    basis: Vec<Vec<f64>>,
    constraints: Vec<JetEvaluator>,
    s: &'a FlowLineSettings,
}

impl Shooter<'_> {
    fn start(&self, angle: f64) -> Vec<f64> {
        let coeffs: Vec<f64> = match self.basis.len() {
            1 => vec![if angle < std::f64::consts::PI { 1.0 } else { -1.0 }],
            _ => vec![angle.cos(), angle.sin()],
        };
        let mut z = self.origin.clone();
        for (c, e) in coeffs.iter().zip(&self.basis) {
            for (zi, ei) in z.iter_mut().zip(e) {
                *zi += self.s.epsilon * c * ei;
            }
        }
        z
    }

    fn side(&self, z: &[f64]) -> f64 {
        let Some(e) = &self.target_unstable else {
            return 0.0;
        };
        let n = z.len() / 2;
        (0..z.len())
            .map(|i| {
                let d = if i < n {
                    self.space.base_difference(z[i], self.target[i])
                } else {
                    z[i] - self.target[i]
                };
                d * e[i] * if i < n { 1.0 } else { self.flow.q }
            })
            .sum()
    }

    fn speed(&self, z: &[f64]) -> f64 {
        let mut v = vec![0.0; z.len()];
        match self.flow.eval(z, &mut v) {
            Ok(()) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Err(_) => f64::INFINITY,
        }
    }

    fn exit_face(&self, z: &[f64]) -> Option<(usize, bool)> {
        let n = z.len() / 2;
        (0..z.len())
            .filter(|&i| !(self.space == Space::Torus && i < n))
            .find_map(|i| {
                if z[i] < self.bbox.lo[i] {
                    Some((i, false))
                } else if z[i] > self.bbox.hi[i] {
                    Some((i, true))
                } else {
                    None
                }
            })
    }

    fn integrator(&self) -> Integrator {
        Integrator::rkf45(self.s.rel_tol, self.s.abs_tol)
    }

    fn fate(&self, z0: &[f64]) -> Result<Shot, OdeError> {
        self.run(z0, false)
    }

    /// While tracking, shots near a constraint set are classified by the
    /// side on which they leave it.
    fn quick_fate(&self, z0: &[f64]) -> Result<Shot, OdeError> {
        self.run(z0, !self.constraints.is_empty())
    }

    fn run(&self, z0: &[f64], stop_on_departure: bool) -> Result<Shot, OdeError> {
        let mut shot = Shot {
            outcome: Outcome::TimedOut,
            min_distance: self.space.distance(z0, &self.target),
            side: self.side(z0),
            exit: None,
            departure: None,
            end: z0.to_vec(),
            path: vec![z0.to_vec()],
        };
        ode::solve(self.flow, z0, self.s.t_max, &self.integrator(), |_, z| {
            shot.path.push(z.to_vec());
            if shot.departure.is_none() {
                shot.departure = self.departure(z);
                if stop_on_departure && shot.departure.is_some() {
                    shot.outcome = Outcome::Departed;
                    return Control::Stop;
                }
            }
            let d = self.space.distance(z, &self.target);
            if d < shot.min_distance {
                shot.min_distance = d;
                shot.side = self.side(z);
            }
            if d < self.s.delta {
                shot.outcome = Outcome::Captured;
                return Control::Stop;
            }
            if let Some(face) = self.exit_face(z) {
                shot.outcome = Outcome::Escaped;
                shot.exit = Some(face);
                if stop_on_departure && shot.departure.is_none() {
                    shot.outcome = Outcome::Departed;
                    shot.departure = Some(self.constraint_signs(z));
                }
                return Control::Stop;
            }
            if self.speed(z) < 1e-10 {
                shot.outcome = Outcome::Converged;
                return Control::Stop;
            }
            Control::Continue
        })?;
        shot.end = shot.path.last().cloned().unwrap_or_default();
        if shot.outcome != Outcome::Captured {
            shot.path = Vec::new();
        }
        Ok(shot)
    }

    fn constraint_values(&self, z: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|w| w.value(z).unwrap_or(f64::NAN)).collect()
    }

    fn constraint_signs(&self, z: &[f64]) -> Vec<bool> {
        self.constraint_values(z).iter().map(|&v| v > 0.0).collect()
    }

    fn departure(&self, z: &[f64]) -> Option<Vec<bool>> {
        let values = self.constraint_values(z);
        values
            .iter()
            .any(|v| !(v.abs() < self.s.departure))
            .then(|| values.iter().map(|&v| v > 0.0).collect())
    }

    fn same_track_class(&self, a: &Shot, b: &Shot) -> bool {
        if a.outcome == Outcome::Departed || b.outcome == Outcome::Departed {
            a.outcome == b.outcome && a.departure == b.departure
        } else {
            self.same_fate(a, b)
        }
    }

    fn same_fate(&self, a: &Shot, b: &Shot) -> bool {
        let near = |s: &Shot| {
            if s.min_distance < self.s.approach_radius {
                s.side > 0.0
            } else {
                true
            }
        };
        a.outcome == b.outcome
            && near(a) == near(b)
            && a.departure == b.departure
            && match a.outcome {
                Outcome::Escaped => a.exit == b.exit,
                Outcome::Converged => self.space.distance(&a.end, &b.end) < 1e-3,
                _ => true,
            }
    }

    /// Flows `z` for time `tau`, appending accepted states to `path`.
    /// Returns the final state and whether the capture ball was entered.
    fn advance(&self, z: &[f64], tau: f64, path: Option<&mut Vec<Vec<f64>>>) -> Result<(Vec<f64>, bool), OdeError> {
        let mut last = z.to_vec();
        let mut captured = false;
        let mut sink = path;
        ode::solve(self.flow, z, tau, &self.integrator(), |_, y| {
            last = y.to_vec();
            if let Some(p) = sink.as_deref_mut() {
                p.push(y.to_vec());
            }
            if self.space.distance(y, &self.target) < self.s.delta {
                captured = true;
                return Control::Stop;
            }
            if self.exit_face(y).is_some() {
                return Control::Stop;
            }
            Control::Continue
        })?;
        Ok((last, captured))
    }

    /// Follows the boundary between the fates of `a` and `b` forward in
    /// time by alternating bisection and integration. Returns the tracked
    /// path if it reaches the capture ball of `p+`.
    fn track(&self, mut a: Vec<f64>, mut b: Vec<f64>, mut fa: Shot) -> Result<Option<Vec<Vec<f64>>>, OdeError> {
        let mut path = Vec::new();
        let mut tau = 0.5;
        let mut elapsed = 0.0;
        while elapsed < self.s.t_max {
            for _ in 0..self.s.max_bisections {
                if self.space.distance(&a, &b) <= self.s.track_tol {
                    break;
                }
                let m = midpoint(&a, &b);
                let fm = self.quick_fate(&m)?;
                if fm.outcome == Outcome::Captured {
                    path.extend(fm.path);
                    return Ok(Some(path));
                }
                if self.same_track_class(&fm, &fa) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            let m = midpoint(&a, &b);
            if !self.bbox.contains(&m, self.space) || self.speed(&m) < 1e-8 {
                return Ok(None);
            }
            loop {
                let mark = path.len();
                let (a_next, captured) = self.advance(&a, tau, Some(&mut path))?;
                if captured {
                    return Ok(Some(path));
                }
                let (b_next, _) = self.advance(&b, tau, None)?;
                let fa_next = self.quick_fate(&a_next)?;
                let fb_next = self.quick_fate(&b_next)?;
                for f in [&fa_next, &fb_next] {
                    if f.outcome == Outcome::Captured {
                        path.extend(f.path.iter().cloned());
                        return Ok(Some(path));
                    }
                }
                if self.same_track_class(&fa_next, &fb_next) {
                    path.truncate(mark);
                    if tau <= MIN_TAU {
                        return Ok(None);
                    }
                    tau = (tau * 0.5).max(MIN_TAU);
                    continue;
                }
                let sep = self.space.distance(&a_next, &b_next);
                a = a_next;
                b = b_next;
                fa = fa_next;
                elapsed += tau;
                if sep < 1e2 * self.s.track_tol {
                    tau = (tau * 1.5).min(2.0);
                } else if sep > 1e4 * self.s.track_tol {
                    tau = (tau * 0.5).max(MIN_TAU);
                }
                break;
            }
        }
        Ok(None)
    }
}

const MIN_TAU: f64 = 1e-3;

fn ode_failure(q: f64, e: OdeError) -> MorseError {
    match e {
        OdeError::Eval(e) => MorseError::Expr(e),
        OdeError::StepUnderflow { t } | OdeError::NonFinite { t } => MorseError::Stiffness { q, t },
    }
}

/// Counts gradient flow lines from `p_minus` to `p_plus` by shooting from a
/// small sphere in the unstable eigenspace of `p_minus`. Neighbouring shots
/// with different fates are followed along the boundary between them until
/// it either reaches `p_plus` or leaves the box.
pub fn count_flow_lines(
    spec: &MorseSpec,
    p_minus: &CriticalPoint,
    p_plus: &CriticalPoint,
    bbox: &SearchBox,
    settings: &FlowLineSettings,
) -> Result<FlowLineCount, MorseError> {
    if p_minus.index != p_plus.index + 1 {
        return Err(MorseError::IndexGap {
            minus: p_minus.index,
            plus: p_plus.index,
        });
    }
    let m = p_minus.index;
    if m > 2 {
        return Err(MorseError::UnsupportedDimension(m));
    }
    let flow = GradientFlow {
        jet: JetEvaluator::new(&build_hamiltonian(spec)?),
        q: spec.q,
    };
    let origin = p_minus.flat();
    let target = p_plus.flat();
    let basis = unstable_directions(&flow.jet.hessian(&origin)?, spec.q);
    let target_unstable = unstable_directions(&flow.jet.hessian(&target)?, spec.q).into_iter().next();
    let shooter = Shooter {
        flow: &flow,
        space: spec.space,
        bbox,
        origin,
        target,
        target_unstable,
        basis,
        constraints: spec
            .active_constraints()
            .into_iter()
            .map(|i| JetEvaluator::new(&spec.w[i]))
            .collect(),
        s: settings,
    };
    let fail = |e| ode_failure(spec.q, e);

    let tau = std::f64::consts::TAU;
    let angles: Vec<f64> = if m == 1 {
        vec![0.0, std::f64::consts::PI]
    } else {
        (0..settings.mesh)
            .map(|j| tau * (j as f64 + 0.5) / settings.mesh as f64)
            .collect()
    };
    let shots: Vec<Shot> = angles
        .par_iter()
        .map(|&a| shooter.fate(&shooter.start(a)))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let escaped = shots.iter().filter(|s| s.outcome == Outcome::Escaped).count();

    let mut lines = Vec::new();
    let raw = if m == 1 {
        for s in &shots {
            if s.outcome == Outcome::Captured {
                lines.push(s.path.clone());
            }
        }
        lines.len()
    } else {
        let count = angles.len();
        let gaps: Vec<usize> = (0..count)
            .filter(|&j| {
                let (a, b) = (&shots[j], &shots[(j + 1) % count]);
                a.outcome != Outcome::Captured && b.outcome != Outcome::Captured && !shooter.same_fate(a, b)
            })
            .collect();
        let tracked: Vec<Option<Vec<Vec<f64>>>> = gaps
            .par_iter()
            .map(|&j| {
                let a = shooter.start(angles[j]);
                let b = shooter.start(angles[(j + 1) % count]);
                let fa = shooter.quick_fate(&a)?;
                shooter.track(a, b, fa)
            })
            .collect::<Result<_, _>>()
            .map_err(fail)?;

        // Circular sequence of (captured, path) ordered by angle.
        let mut ring: Vec<(bool, Vec<Vec<f64>>)> = Vec::new();
        let mut tracked = gaps.iter().zip(tracked).peekable();
        for (j, shot) in shots.into_iter().enumerate() {
            ring.push((shot.outcome == Outcome::Captured, shot.path));
            while let Some((_, extra)) = tracked.next_if(|(g, _)| **g == j) {
                if let Some(path) = extra {
                    ring.push((true, path));
                }
            }
        }
        circular_runs(ring, &mut lines)
    };

    let warning = (2 * escaped > angles.len()).then(|| {
        let msg = format!(
            "{escaped} of {} shots escaped the search box (possible Morse-Smale failure)",
            angles.len()
        );
        log::warn!("{msg}");
        msg
    });
    Ok(FlowLineCount {
        raw,
        mod2: (raw % 2) as u8,
        shots: angles.len(),
        escaped,
        warning,
        lines,
    })
}

/// Counts maximal circular runs of captured entries, keeping the middle path of each.
fn circular_runs(ring: Vec<(bool, Vec<Vec<f64>>)>, lines: &mut Vec<Vec<Vec<f64>>>) -> usize {
    let len = ring.len();
    if ring.iter().all(|r| r.0) {
        lines.push(ring[len / 2].1.clone());
        return 1;
    }
    let start = (0..len).find(|&i| !ring[i].0).expect("some entry is not captured");
    let mut runs = 0;
    let mut current: Vec<usize> = Vec::new();
    for step in 1..=len {
        let i = (start + step) % len;
        if ring[i].0 {
            current.push(i);
        } else if !current.is_empty() {
            runs += 1;
            lines.push(ring[current[current.len() / 2]].1.clone());
            current.clear();
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::super::tests::circle_spec;
    use super::*;
    use crate::expr::Expression;
    use crate::morse::find_critical_points;

    fn circle_count(q: f64, settings: &FlowLineSettings) -> FlowLineCount {
        let spec = circle_spec(q);
        let bbox = SearchBox::cube(2, 2.0);
        let pts = find_critical_points(&spec, &bbox, 7).unwrap();
        count_flow_lines(&spec, &pts[1], &pts[0], &bbox, settings).unwrap()
    }

    #[test]
    fn circle_has_two_lines() {
        let c = circle_count(0.5, &FlowLineSettings::default());
        assert_eq!(c.raw, 2);
        assert_eq!(c.mod2, 0);
        assert_eq!(c.lines.len(), 2);
        assert!(c.warning.is_some());
    }

    #[test]
    fn count_is_stable_under_refinement() {
        let base = FlowLineSettings::default();
        for s in [
            FlowLineSettings {
                epsilon: base.epsilon / 2.0,
                ..base
            },
            FlowLineSettings {
                mesh: 2 * base.mesh,
                ..base
            },
        ] {
            assert_eq!(circle_count(1.0, &s).raw, 2);
        }
    }

    #[test]
    fn lines_survive_small_q() {
        for q in [0.1, 0.03] {
            let c = circle_count(q, &FlowLineSettings::default());
            assert_eq!(c.raw, 2, "q = {q}");
            assert_eq!(c.mod2, 0);
        }
    }

    #[test]
    fn index_gap_is_checked() {
        let spec = circle_spec(0.5);
        let bbox = SearchBox::cube(2, 2.0);
        let pts = find_critical_points(&spec, &bbox, 7).unwrap();
        assert!(matches!(
            count_flow_lines(&spec, &pts[0], &pts[0], &bbox, &FlowLineSettings::default()),
            Err(MorseError::IndexGap { .. })
        ));
    }

    #[test]
    fn one_dimensional_unstable_manifold() {
        // f = x1^3/3 - x1 on the line: max at -1 (index 1), min at 1 (index 0).
        let p = |s: &str| Expression::parse(s, 1).unwrap();
        let spec = MorseSpec::new(p("x1^3/3 - x1"), vec![p("0")], p("y1^2/2"), 1.0).unwrap();
        let bbox = SearchBox::cube(1, 3.0);
        let pts = find_critical_points(&spec, &bbox, 7).unwrap();
        assert_eq!(pts.len(), 2);
        let c = count_flow_lines(&spec, &pts[1], &pts[0], &bbox, &FlowLineSettings::default()).unwrap();
        assert_eq!((c.raw, c.escaped), (1, 1));
    }
}
