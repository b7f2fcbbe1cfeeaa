use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use super::{build_hamiltonian, MorseError, MorseSpec, SearchBox};
use crate::expr::JetEvaluator;
use crate::phase::{PhasePoint, Space};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalSettings {
    /// Seeds per axis.
    pub grid: usize,
    pub newton_tol: f64,
    pub max_iterations: usize,
    pub dedup_distance: f64,
    /// Eigenvalues of the metric-normalized Hessian closer to zero fail the Morse condition.
    pub degeneracy_tol: f64,
    /// Largest accepted `|grad H_q|` at a reported point.
    pub residual_tol: f64,
}

impl Default for CriticalSettings {
    fn default() -> Self {
        CriticalSettings {
            grid: 7,
            newton_tol: 1e-12,
            max_iterations: 100,
            dedup_distance: 1e-6,
            degeneracy_tol: 1e-8,
            residual_tol: 1e-10,
        }
    }
}

/// Split of the index as `base + fibre + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndexCertificate {
    /// Index of `f` restricted to `w^{-1}(0)` (Lagrangian Hessian on `ker dw`).
    pub base: usize,
    /// Index of `g` on the fibre directions not paired with a constraint.
    pub fibre: usize,
    pub k: usize,
}

impl IndexCertificate {
    pub fn total(&self) -> usize {
        self.base + self.fibre + self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub index: usize,
    /// Ascending eigenvalues of `G_q^{-1/2} Hess H_q G_q^{-1/2}`.
    pub spectrum: Vec<f64>,
    /// Absent when a restricted block is numerically singular.
    pub certificate: Option<IndexCertificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub z: PhasePoint,
    pub index: usize,
    pub residual: f64,
    pub hessian_spectrum: Vec<f64>,
    pub certificate: Option<IndexCertificate>,
}

impl CriticalPoint {
    pub fn flat(&self) -> Vec<f64> {
        self.z.to_flat()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn reduce(z: &mut [f64], space: Space) {
    let n = z.len() / 2;
    for v in &mut z[..n] {
        *v = space.reduce(*v);
    }
}

/// Damped Newton on `grad H = 0` with an SVD pseudo-inverse step.
fn newton(jet: &JetEvaluator, seed: Vec<f64>, space: Space, s: &CriticalSettings) -> Option<(Vec<f64>, f64)> {
    let mut z = seed;
    let mut grad = jet.gradient(&z).ok()?;
    let mut r = norm(&grad);
    for _ in 0..s.max_iterations {
        if r <= s.newton_tol {
            break;
        }
        let hess = jet.hessian(&z).ok()?;
        let svd = hess.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let rhs = -DVector::from_column_slice(&grad);
        let step = svd.solve(&rhs, cutoff).ok()?;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let mut trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            reduce(&mut trial, space);
            if let Ok(g) = jet.gradient(&trial) {
                let rt = norm(&g);
                if rt < r {
                    z = trial;
                    grad = g;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (r <= s.residual_tol).then_some((z, r))
}

fn seeds(bbox: &SearchBox, grid: usize, space: Space) -> Vec<Vec<f64>> {
    let d = bbox.lo.len();
    let n = d / 2;
    let axis = |i: usize| -> Vec<f64> {
        if space == Space::Torus && i < n {
            (0..grid).map(|j| std::f64::consts::TAU * j as f64 / grid as f64).collect()
        } else {
            (0..grid)
                .map(|j| bbox.lo[i] + (bbox.hi[i] - bbox.lo[i]) * j as f64 / (grid - 1) as f64)
                .collect()
        }
    };
    let axes: Vec<Vec<f64>> = (0..d).map(axis).collect();
    let total = grid.pow(d as u32);
    (0..total)
        .map(|mut c| {
            (0..d)
                .map(|i| {
                    let v = axes[i][c % grid];
                    c /= grid;
                    v
                })
                .collect()
        })
        .collect()
}

/// Critical points with default tolerances.
pub fn find_critical_points(spec: &MorseSpec, bbox: &SearchBox, grid: usize) -> Result<Vec<CriticalPoint>, MorseError> {
    find_critical_points_with(
        spec,
        bbox,
        &CriticalSettings {
            grid,
            ..CriticalSettings::default()
        },
    )
}

/// Newton from every grid seed, deduplicated, indexed and sorted by
/// `(index, z)`.
pub fn find_critical_points_with(
    spec: &MorseSpec,
    bbox: &SearchBox,
    settings: &CriticalSettings,
) -> Result<Vec<CriticalPoint>, MorseError> {
    spec.validate()?;
    let n = spec.dim();
    if bbox.dim() != n {
        return Err(MorseError::InvalidBox(format!(
            "box has dimension {}, Hamiltonian has {n}",
            bbox.dim()
        )));
    }
    if settings.grid < 2 {
        return Err(MorseError::InvalidBox("grid needs at least 2 seeds per axis".into()));
    }
    let jet = JetEvaluator::new(&build_hamiltonian(spec)?);
    let found: Vec<(Vec<f64>, f64)> = seeds(bbox, settings.grid, spec.space)
        .into_par_iter()
        .filter_map(|seed| newton(&jet, seed, spec.space, settings))
        .filter(|(z, _)| bbox.contains(z, spec.space))
        .collect();

    let mut unique: Vec<(Vec<f64>, f64)> = Vec::new();
    for (z, r) in found {
        if unique
            .iter()
            .all(|(u, _)| spec.space.distance(u, &z) >= settings.dedup_distance)
        {
            unique.push((z, r));
        }
    }

    let mut points = Vec::with_capacity(unique.len());
    for (z, residual) in unique {
        check_regular(spec, &z)?;
        let report = index_at(spec, &jet, &z, settings.degeneracy_tol)?;
        points.push(CriticalPoint {
            z: PhasePoint::from_flat(&z, spec.space).expect("even length"),
            index: report.index,
            residual,
            hessian_spectrum: report.spectrum,
            certificate: report.certificate,
        });
    }
    points.sort_by(|a, b| {
        a.index.cmp(&b.index).then_with(|| {
            a.flat()
                .iter()
                .zip(b.flat())
                .map(|(u, v)| u.total_cmp(&v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(points)
}

/// Rows `grad w_i(x)` of the active constraints.
fn constraint_jacobian(spec: &MorseSpec, z: &[f64]) -> Result<DMatrix<f64>, MorseError> {
    let n = spec.dim();
    let active = spec.active_constraints();
    let mut a = DMatrix::zeros(active.len(), n);
    for (row, &i) in active.iter().enumerate() {
        for (col, d) in spec.w[i].gradient().iter().take(n).enumerate() {
            a[(row, col)] = d.evaluate(z)?;
        }
    }
    Ok(a)
}

fn check_regular(spec: &MorseSpec, z: &[f64]) -> Result<(), MorseError> {
    let a = constraint_jacobian(spec, z)?;
    let k = a.nrows();
    if k == 0 {
        return Ok(());
    }
    let rank = a.svd(false, false).rank(1e-8);
    if rank < k {
        return Err(MorseError::IrregularConstraint {
            x: z[..spec.dim()].to_vec(),
            rank,
            k,
        });
    }
    Ok(())
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Negative count, or `None` when some eigenvalue is within `tol` of zero.
fn inertia(m: DMatrix<f64>, tol: f64) -> Option<usize> {
    let ev = sorted_eigenvalues(m);
    if ev.iter().any(|l| l.abs() < tol) {
        None
    } else {
        Some(ev.iter().filter(|&&l| l < 0.0).count())
    }
}

/// `G_q^{-1/2} M G_q^{-1/2}` for `G_q = I (+) q I`.
pub(super) fn normalize(m: &DMatrix<f64>, q: f64) -> DMatrix<f64> {
    let n = m.nrows() / 2;
    let scale = |i: usize| if i < n { 1.0 } else { q.sqrt().recip() };
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * scale(i) * scale(j))
}

fn index_at(spec: &MorseSpec, jet: &JetEvaluator, z: &[f64], tol: f64) -> Result<IndexReport, MorseError> {
    let n = spec.dim();
    let hess = jet.hessian(z)?;
    let spectrum = sorted_eigenvalues(normalize(&hess, spec.q));
    if let Some(l) = spectrum.iter().copied().find(|l| l.abs() < tol) {
        return Err(MorseError::Degenerate {
            z: z.to_vec(),
            eigenvalue: l,
            tolerance: tol,
        });
    }
    let index = spectrum.iter().filter(|&&l| l < 0.0).count();

    let active = spec.active_constraints();
    let a = constraint_jacobian(spec, z)?;
    let lagrangian = hess.view((0, 0), (n, n)).into_owned();
    let tangent = if a.nrows() == 0 {
        DMatrix::identity(n, n)
    } else {
        let gram = &a * a.transpose();
        let projector = match gram.try_inverse() {
            Some(inv) => DMatrix::identity(n, n) - a.transpose() * inv * &a,
            None => DMatrix::zeros(n, n),
        };
        let eig = SymmetricEigen::new(projector);
        let cols: Vec<DVector<f64>> = (0..n)
            .filter(|&i| eig.eigenvalues[i] > 0.5)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    };
    let base = if tangent.ncols() == 0 {
        Some(0)
    } else {
        inertia(tangent.transpose() * lagrangian * &tangent, tol)
    };
    let free: Vec<usize> = (0..n).filter(|i| !active.contains(i)).collect();
    let fibre_block = DMatrix::from_fn(free.len(), free.len(), |i, j| hess[(n + free[i], n + free[j])]);
    let fibre = if free.is_empty() { Some(0) } else { inertia(fibre_block, tol) };
    let certificate = match (base, fibre) {
        (Some(base), Some(fibre)) => Some(IndexCertificate {
            base,
            fibre,
            k: active.len(),
        }),
        _ => None,
    };
    Ok(IndexReport {
        index,
        spectrum,
        certificate,
    })
}

/// Index of `p` from the normalized Hessian, with the `base + fibre + k`
/// decomposition when it is numerically separable.
pub fn critical_index(spec: &MorseSpec, p: &CriticalPoint) -> Result<IndexReport, MorseError> {
    let jet = JetEvaluator::new(&build_hamiltonian(spec)?);
    index_at(spec, &jet, &p.flat(), CriticalSettings::default().degeneracy_tol)
}

#[cfg(test)]
mod tests {
    use super::super::tests::circle_spec;
    use super::*;
    use crate::expr::Expression;

    fn box4() -> SearchBox {
        SearchBox::cube(2, 2.0)
    }

    #[test]
    fn circle_fixture_has_two_points() {
        let pts = find_critical_points(&circle_spec(0.5), &box4(), 7).unwrap();
        assert_eq!(pts.len(), 2);
        let expected = [[0.0, -1.0, 0.5, 0.0], [0.0, 1.0, -0.5, 0.0]];
        for (p, e) in pts.iter().zip(expected) {
            let d: f64 = p.flat().iter().zip(e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-8, "{:?}", p.flat());
            assert!(p.residual <= 1e-10);
        }
        assert_eq!(pts[0].index, 1);
        assert_eq!(pts[1].index, 2);
        assert_eq!(
            pts[1].certificate,
            Some(IndexCertificate {
                base: 1,
                fibre: 0,
                k: 1
            })
        );
        assert_eq!(pts[0].certificate.unwrap().total(), 1);
        let again = critical_index(&circle_spec(0.5), &pts[1]).unwrap();
        assert_eq!(again.index, 2);
    }

    #[test]
    fn negative_fibre_raises_indices() {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        let spec = MorseSpec::new(p("x2"), vec![p("x1^2 + x2^2 - 1"), p("0")], p("-y2^2/2"), 0.5).unwrap();
        let pts = find_critical_points(&spec, &box4(), 7).unwrap();
        let idx: Vec<usize> = pts.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![2, 3]);
        assert!(pts.iter().all(|p| p.certificate.unwrap().fibre == 1));
    }

    #[test]
    fn perturbation_keeps_count() {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        let spec = MorseSpec::new(p("x2 + x1/100"), vec![p("x1^2 + x2^2 - 1"), p("0")], p("y2^2/2"), 0.5).unwrap();
        let pts = find_critical_points(&spec, &box4(), 7).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts.iter().map(|p| p.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn circle_of_critical_points_is_degenerate() {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        let spec = MorseSpec::new(p("0"), vec![p("x1^2 + x2^2 - 1"), p("0")], p("y2^2/2"), 0.5).unwrap();
        assert!(matches!(
            find_critical_points(&spec, &box4(), 5),
            Err(MorseError::Degenerate { .. })
        ));
    }

    #[test]
    fn torus_height_function() {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        let spec = MorseSpec::new(p("cos(x1) + cos(x2)"), vec![p("0"), p("0")], p("(y1^2 + y2^2)/2"), 0.5)
            .unwrap()
            .with_space(Space::Torus);
        let pts = find_critical_points(&spec, &box4(), 6).unwrap();
        let idx: Vec<usize> = pts.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![0, 1, 1, 2]);
        assert!(pts.iter().all(|p| p.certificate.unwrap().total() == p.index));
    }

    #[test]
    fn two_component_constraint() {
        let p = |s: &str| Expression::parse(s, 1).unwrap();
        let spec = MorseSpec::new(p("x1"), vec![p("x1^2 - 1")], p("0"), 1.0).unwrap();
        let pts = find_critical_points(&spec, &SearchBox::cube(1, 2.0), 9).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p.index == 1));
    }
}
