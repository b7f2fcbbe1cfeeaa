//! Coordinate conventions on `T*R^n` and `T*T^n`.
//!
//! * `omega = sum_i dy_i ^ dx_i`, so `omega(u, v) = sum_i (b_u,i a_v,i - a_u,i b_v,i)`
//!   for tangent vectors split as `u = (a, b)` (horizontal, vertical).
//! * `G_q(u, v) = a_u^T G_B a_v + q b_u^T G_B^{-1} b_v` with a constant base
//!   metric `G_B`.
//! * `J_q` is the unique map with `omega(u, J_q v) = G_q(u, v)`. With
//!   `G_B = I` it is `J_q(a, b) = (q b, -a)`, which squares to `-q id`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("deformation parameter q must be nonzero")]
    ZeroQ,
    #[error("fibre volume needs q > 0, got {0}")]
    NonPositiveQ(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("base metric must be symmetric positive definite: {0}")]
    InvalidBaseMetric(String),
}

/// Whether the base is `R^n` or the torus `T^n = (R / 2 pi Z)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    #[default]
    Plane,
    Torus,
}

impl Space {
    /// Canonical representative of a base coordinate.
    pub fn reduce(&self, x: f64) -> f64 {
        match self {
            Space::Plane => x,
            Space::Torus => {
                let r = x.rem_euclid(TAU);
                // rem_euclid can round up to exactly TAU.
                if r >= TAU {
                    0.0
                } else {
                    r
                }
            }
        }
    }

    /// Difference `x1 - x2` of base coordinates, taken in `(-pi, pi]` on the torus.
    pub fn base_difference(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Space::Plane => x1 - x2,
            Space::Torus => {
                let d = (x1 - x2).rem_euclid(TAU);
                if d > std::f64::consts::PI {
                    d - TAU
                } else {
                    d
                }
            }
        }
    }

    /// Euclidean distance between flattened points, wrapping base
    /// coordinates on the torus.
    pub fn distance(&self, z1: &[f64], z2: &[f64]) -> f64 {
        let n = z1.len() / 2;
        z1.iter()
            .zip(z2)
            .enumerate()
            .map(|(i, (a, b))| {
                let d = if i < n {
                    self.base_difference(*a, *b)
                } else {
                    a - b
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// A point `z = (x, y)`; torus points store `x` reduced into `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    x: Vec<f64>,
    y: Vec<f64>,
    space: Space,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>, space: Space) -> Result<Self, PhaseError> {
        if x.len() != y.len() || x.is_empty() {
            return Err(PhaseError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        let x = x.into_iter().map(|v| space.reduce(v)).collect();
        Ok(PhasePoint { x, y, space })
    }

    pub fn plane(x: Vec<f64>, y: Vec<f64>) -> Result<Self, PhaseError> {
        Self::new(x, y, Space::Plane)
    }

    pub fn torus(x: Vec<f64>, y: Vec<f64>) -> Result<Self, PhaseError> {
        Self::new(x, y, Space::Torus)
    }

    /// Builds a point from the flattened vector `(x1..xn, y1..yn)`.
    pub fn from_flat(z: &[f64], space: Space) -> Result<Self, PhaseError> {
        if z.len() % 2 != 0 || z.is_empty() {
            return Err(PhaseError::DimensionMismatch {
                expected: z.len() + 1,
                found: z.len(),
            });
        }
        let n = z.len() / 2;
        Self::new(z[..n].to_vec(), z[n..].to_vec(), space)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend_from_slice(&self.y);
        z
    }
}

/// Tangent vector split into horizontal `a` (d/dx) and vertical `b` (d/dy) parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TangentVector {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len(), "horizontal and vertical parts differ in length");
        TangentVector { a, b }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(vec![0.0; n], vec![0.0; n])
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let n = v.len() / 2;
        Self::new(v[..n].to_vec(), v[n..].to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.b);
        v
    }

    /// `d/dx_i` (1-based).
    pub fn dx(n: usize, i: usize) -> Self {
        let mut v = Self::zero(n);
        v.a[i - 1] = 1.0;
        v
    }

    /// `d/dy_i` (1-based).
    pub fn dy(n: usize, i: usize) -> Self {
        let mut v = Self::zero(n);
        v.b[i - 1] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `omega(u, v) = sum_i (b_u,i a_v,i - a_u,i b_v,i)`.
pub fn omega(u: &TangentVector, v: &TangentVector) -> f64 {
    dot(&u.b, &v.a) - dot(&u.a, &v.b)
}

/// Matrix `Omega` with `omega(u, v) = u^T Omega v` in the flattened basis.
pub fn omega_matrix(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        m[(i, n + i)] = -1.0;
        m[(n + i, i)] = 1.0;
    }
    m
}

/// The family `G_q = G_B (+) q G_B^{-1}` for a constant base metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFamily {
    base: DMatrix<f64>,
    base_inv: DMatrix<f64>,
    q: f64,
}

impl MetricFamily {
    pub fn new(base: DMatrix<f64>, q: f64) -> Result<Self, PhaseError> {
        if !base.is_square() || base.nrows() == 0 {
            return Err(PhaseError::InvalidBaseMetric("not a square matrix".into()));
        }
        if (&base - base.transpose()).amax() > 1e-12 * base.amax().max(1.0) {
            return Err(PhaseError::InvalidBaseMetric("not symmetric".into()));
        }
        let chol = base
            .clone()
            .cholesky()
            .ok_or_else(|| PhaseError::InvalidBaseMetric("not positive definite".into()))?;
        let base_inv = chol.inverse();
        Ok(MetricFamily { base, base_inv, q })
    }

    pub fn identity(n: usize, q: f64) -> Self {
        MetricFamily {
            base: DMatrix::identity(n, n),
            base_inv: DMatrix::identity(n, n),
            q,
        }
    }

    pub fn with_q(&self, q: f64) -> Self {
        MetricFamily { q, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn base_metric(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// Fibre block `q G_B^{-1}`.
    pub fn fibre_block(&self) -> DMatrix<f64> {
        &self.base_inv * self.q
    }

    /// The `2n x 2n` matrix of `G_q`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.base);
        m.view_mut((n, n), (n, n)).copy_from(&self.fibre_block());
        m
    }

    /// Inverse of [`MetricFamily::matrix`]; requires `q != 0`.
    pub fn inverse_matrix(&self) -> Result<DMatrix<f64>, PhaseError> {
        if self.q == 0.0 {
            return Err(PhaseError::ZeroQ);
        }
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.base_inv);
        m.view_mut((n, n), (n, n)).copy_from(&(&self.base / self.q));
        Ok(m)
    }

    pub fn metric(&self, u: &TangentVector, v: &TangentVector) -> f64 {
        let a = nalgebra::DVector::from_column_slice(&v.a);
        let b = nalgebra::DVector::from_column_slice(&v.b);
        dot(&u.a, (&self.base * a).as_slice()) + self.q * dot(&u.b, (&self.base_inv * b).as_slice())
    }

    /// Counts of positive and negative eigenvalues of `G_q`.
    pub fn signature(&self) -> (usize, usize) {
        let eig = SymmetricEigen::new(self.matrix());
        let pos = eig.eigenvalues.iter().filter(|&&l| l > 0.0).count();
        let neg = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
        (pos, neg)
    }

    /// The map `J_q` with `omega(u, J_q v) = G_q(u, v)`, acting on flattened
    /// vectors: `J_q(a, b) = (q G_B^{-1} b, -G_B a)`.
    pub fn dual_endomorphism(&self) -> Result<DMatrix<f64>, PhaseError> {
        if self.q == 0.0 {
            return Err(PhaseError::ZeroQ);
        }
        let n = self.dim();
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        j.view_mut((0, n), (n, n)).copy_from(&self.fibre_block());
        j.view_mut((n, 0), (n, n)).copy_from(&(-&self.base));
        Ok(j)
    }

    /// Ratio of fibre volume elements `vol_{G_q} / vol_{G_1}`, i.e.
    /// `sqrt(det(q G_F) / det(G_F))`.
    pub fn fibre_volume_ratio(&self) -> Result<f64, PhaseError> {
        if self.q <= 0.0 {
            return Err(PhaseError::NonPositiveQ(self.q));
        }
        let deformed = self.fibre_block().determinant();
        let reference = self.base_inv.determinant();
        Ok((deformed / reference).sqrt())
    }
}

/// `G_q(u, v)`.
pub fn metric(u: &TangentVector, v: &TangentVector, fam: &MetricFamily) -> f64 {
    fam.metric(u, v)
}

/// Applies a flattened linear map to a tangent vector.
pub fn apply(map: &DMatrix<f64>, v: &TangentVector) -> TangentVector {
    let out = map * nalgebra::DVector::from_vec(v.to_flat());
    TangentVector::from_flat(out.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut impl Rng, n: usize) -> TangentVector {
        TangentVector::new(
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega(&TangentVector::dy(1, 1), &TangentVector::dx(1, 1)), 1.0);
        assert_eq!(omega(&TangentVector::dx(2, 1), &TangentVector::dx(2, 2)), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_vector(&mut rng, 3);
        assert_eq!(omega(&u, &u), 0.0);
    }

    #[test]
    fn omega_matrix_is_unimodular_and_consistent() {
        let m = omega_matrix(3);
        assert!((m.determinant() - 1.0).abs() < 1e-15);
        assert_eq!(m.transpose(), -&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (u, v) = (random_vector(&mut rng, 3), random_vector(&mut rng, 3));
        let via_matrix = (nalgebra::DVector::from_vec(u.to_flat()).transpose()
            * &m
            * nalgebra::DVector::from_vec(v.to_flat()))[0];
        assert!((via_matrix - omega(&u, &v)).abs() < 1e-14);
    }

    #[test]
    fn metric_examples() {
        let euclid = MetricFamily::identity(2, 1.0);
        assert_eq!(euclid.matrix(), DMatrix::identity(4, 4));
        let neutral = MetricFamily::identity(1, -1.0);
        let dy = TangentVector::dy(1, 1);
        assert_eq!(metric(&dy, &dy, &neutral), -1.0);
        let quarter = MetricFamily::identity(1, 0.25);
        assert_eq!(metric(&dy, &dy, &quarter), 0.25);
    }

    #[test]
    fn signature_flips_on_fibre_block() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        for q in [0.1, 1.0, 3.0] {
            assert_eq!(MetricFamily::new(g.clone(), q).unwrap().signature(), (4, 0));
        }
        for q in [-1.0, -0.2] {
            assert_eq!(MetricFamily::new(g.clone(), q).unwrap().signature(), (2, 2));
        }
    }

    #[test]
    fn dual_endomorphism_identity_case() {
        let j = MetricFamily::identity(1, 1.0).dual_endomorphism().unwrap();
        let v = TangentVector::new(vec![3.0], vec![5.0]);
        assert_eq!(apply(&j, &v), TangentVector::new(vec![5.0], vec![-3.0]));
        assert_eq!(&j * &j, -DMatrix::identity(2, 2));
        assert_eq!(
            MetricFamily::identity(1, 0.0).dual_endomorphism(),
            Err(PhaseError::ZeroQ)
        );
    }

    #[test]
    fn dual_endomorphism_squares_to_minus_q() {
        let g = DMatrix::from_row_slice(2, 2, &[1.5, -0.3, -0.3, 0.7]);
        for q in [0.2, 0.5, 2.0, -1.0] {
            let j = MetricFamily::new(g.clone(), q).unwrap().dual_endomorphism().unwrap();
            let expected = DMatrix::identity(4, 4) * -q;
            assert!((&j * &j - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn dual_endomorphism_defining_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.3, 0.0, 0.3, 1.5]);
        for _ in 0..50 {
            let q = rng.gen_range(-3.0..3.0);
            let fam = MetricFamily::new(g.clone(), q).unwrap();
            let j = fam.dual_endomorphism().unwrap();
            let (u, v) = (random_vector(&mut rng, 3), random_vector(&mut rng, 3));
            assert!((omega(&u, &apply(&j, &v)) - fam.metric(&u, &v)).abs() < 1e-12);
        }
    }

    #[test]
    fn fibre_volume_examples() {
        let r = MetricFamily::identity(1, 0.25).fibre_volume_ratio().unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(MetricFamily::identity(3, 1.0).fibre_volume_ratio().unwrap(), 1.0);
        let r = MetricFamily::identity(2, 0.25).fibre_volume_ratio().unwrap();
        assert!((r - 0.25).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for q in [1.0, 0.5, 0.1, 0.01, 1e-4] {
            let r = MetricFamily::identity(2, q).fibre_volume_ratio().unwrap();
            assert!(r < last);
            last = r;
        }
        assert!(MetricFamily::identity(1, -1.0).fibre_volume_ratio().is_err());
        assert!(MetricFamily::identity(1, 0.0).fibre_volume_ratio().is_err());
    }

    #[test]
    fn torus_points_are_reduced() {
        let p = PhasePoint::torus(vec![-0.5, 7.0], vec![10.0, -3.0]).unwrap();
        assert!((p.x()[0] - (TAU - 0.5)).abs() < 1e-15);
        assert!((p.x()[1] - (7.0 - TAU)).abs() < 1e-15);
        assert_eq!(p.y(), &[10.0, -3.0]);
        let d = Space::Torus.distance(&[0.01, 0.0], &[TAU - 0.01, 0.0]);
        assert!((d - 0.02).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_base_metric() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MetricFamily::new(g, 1.0).is_err());
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(MetricFamily::new(g, 1.0).is_err());
    }
}
