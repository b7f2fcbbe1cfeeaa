use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::critical::{find_critical_points_with, CriticalPoint, CriticalSettings};
use super::flowlines::{count_flow_lines, FlowLineSettings};
use super::{MorseError, MorseSpec, SearchBox};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MorseSettings {
    pub critical: CriticalSettings,
    pub flow: FlowLineSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowLineRecord {
    /// `(index, position within its degree)` of `p-`.
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub raw: usize,
    pub mod2: u8,
    pub escaped: usize,
    pub shots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorseComplex {
    pub generators: BTreeMap<usize, Vec<CriticalPoint>>,
    /// `boundary[m]` has one row per generator of degree `m - 1` and one
    /// column per generator of degree `m`, with entries in `{0, 1}`.
    pub boundary: BTreeMap<usize, Vec<Vec<u8>>>,
    pub flow_line_counts: Vec<FlowLineRecord>,
    pub warnings: Vec<String>,
}

impl MorseComplex {
    pub fn critical_points(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.generators.values().flatten()
    }
}

/// Rank over `Z/2` by Gaussian elimination.
pub fn gf2_rank(matrix: &[Vec<u8>]) -> usize {
    let mut rows: Vec<Vec<u8>> = matrix.iter().map(|r| r.iter().map(|v| v & 1).collect()).collect();
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&r| rows[r][c] == 1) else {
            continue;
        };
        rows.swap(rank, p);
        for r in 0..rows.len() {
            if r != rank && rows[r][c] == 1 {
                for k in c..cols {
                    rows[r][k] ^= rows[rank][k];
                }
            }
        }
        rank += 1;
    }
    rank
}

fn gf2_product(a: &[Vec<u8>], b: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).fold(0u8, |acc, k| acc ^ (row[k] & b[k][j])))
                .collect()
        })
        .collect()
}

/// Critical points, mod-2 boundary from flow-line counts, and the `d^2 = 0` check.
pub fn build_complex(spec: &MorseSpec, bbox: &SearchBox, settings: &MorseSettings) -> Result<MorseComplex, MorseError> {
    let points = find_critical_points_with(spec, bbox, &settings.critical)?;
    let mut generators: BTreeMap<usize, Vec<CriticalPoint>> = BTreeMap::new();
    for p in points {
        generators.entry(p.index).or_default().push(p);
    }
    let mut boundary = BTreeMap::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let top = generators.keys().copied().max().unwrap_or(0);
    for m in 1..=top {
        let Some(upper) = generators.get(&m) else {
            continue;
        };
        let lower = generators.get(&(m - 1)).map_or(&[][..], Vec::as_slice);
        let mut matrix = vec![vec![0u8; upper.len()]; lower.len()];
        for (j, pm) in upper.iter().enumerate() {
            for (i, pp) in lower.iter().enumerate() {
                let count = count_flow_lines(spec, pm, pp, bbox, &settings.flow)?;
                matrix[i][j] = count.mod2;
                if let Some(w) = &count.warning {
                    warnings.push(format!("({m}, {j}) -> ({}, {i}): {w}", m - 1));
                }
                records.push(FlowLineRecord {
                    from: (m, j),
                    to: (m - 1, i),
                    raw: count.raw,
                    mod2: count.mod2,
                    escaped: count.escaped,
                    shots: count.shots,
                });
            }
        }
        boundary.insert(m, matrix);
    }
    for m in 2..=top {
        if let (Some(outer), Some(inner)) = (boundary.get(&(m - 1)), boundary.get(&m)) {
            if outer.is_empty() || inner.is_empty() {
                continue;
            }
            if gf2_product(outer, inner).iter().flatten().any(|&v| v != 0) {
                return Err(MorseError::BoundarySquare { m: m - 1 });
            }
        }
    }
    Ok(MorseComplex {
        generators,
        boundary,
        flow_line_counts: records,
        warnings,
    })
}

/// Nonzero mod-2 homology ranks by degree.
pub fn homology_ranks(c: &MorseComplex) -> BTreeMap<usize, usize> {
    let rank = |m: usize| c.boundary.get(&m).map_or(0, |b| gf2_rank(b));
    c.generators
        .iter()
        .map(|(&m, gens)| (m, gens.len() - rank(m) - rank(m + 1)))
        .filter(|&(_, r)| r > 0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdiabaticPoint {
    pub q: f64,
    pub deviation: f64,
}

/// `|w(x)| + |normal part of df + sum_i y_i dw_i|`, zero exactly on the
/// constraint set `Z`.
fn distance_to_constraint_set(spec: &MorseSpec, z: &[f64]) -> Result<f64, MorseError> {
    let n = spec.dim();
    let active = spec.active_constraints();
    if active.is_empty() {
        return Ok(0.0);
    }
    let mut values = Vec::with_capacity(active.len());
    let mut a = DMatrix::zeros(active.len(), n);
    for (row, &i) in active.iter().enumerate() {
        values.push(spec.w[i].evaluate(z)?);
        for (col, d) in spec.w[i].gradient().iter().take(n).enumerate() {
            a[(row, col)] = d.evaluate(z)?;
        }
    }
    let mut v = DVector::zeros(n);
    for (col, d) in spec.f.gradient().iter().take(n).enumerate() {
        v[col] = d.evaluate(z)?;
    }
    for (row, &i) in active.iter().enumerate() {
        for col in 0..n {
            v[col] += z[n + i] * a[(row, col)];
        }
    }
    let gram = &a * a.transpose();
    let normal = match gram.try_inverse() {
        Some(inv) => (a.transpose() * inv * &a * v).norm(),
        None => v.norm(),
    };
    Ok(DVector::from_vec(values).norm() + normal)
}

fn nearest<'a>(points: &'a [CriticalPoint], index: usize, near: &[f64], spec: &MorseSpec) -> Option<&'a CriticalPoint> {
    points
        .iter()
        .filter(|p| p.index == index)
        .min_by(|a, b| {
            spec.space
                .distance(&a.flat(), near)
                .total_cmp(&spec.space.distance(&b.flat(), near))
        })
}

/// For each `q`, recomputes critical points and flow lines and reports the
/// largest distance to `Z` along the first counted line from the critical
/// point of index `minus_index` nearest `pair.0` to the one of index
/// `minus_index - 1` nearest `pair.1`.
pub fn adiabatic_deviation(
    spec: &MorseSpec,
    q_list: &[f64],
    pair: (&[f64], &[f64]),
    minus_index: usize,
    bbox: &SearchBox,
    settings: &MorseSettings,
) -> Result<Vec<AdiabaticPoint>, MorseError> {
    if minus_index == 0 {
        return Err(MorseError::IndexGap { minus: 0, plus: 0 });
    }
    if q_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(MorseError::QList("q values must be strictly decreasing".into()));
    }
    let mut out = Vec::with_capacity(q_list.len());
    for &q in q_list {
        let s = spec.with_q(q)?;
        let points = find_critical_points_with(&s, bbox, &settings.critical)?;
        let missing = |index: usize, near: &[f64]| MorseError::MissingCriticalPoint {
            q,
            index,
            near: near.to_vec(),
        };
        let pm = nearest(&points, minus_index, pair.0, &s).ok_or_else(|| missing(minus_index, pair.0))?;
        let pp = nearest(&points, minus_index - 1, pair.1, &s).ok_or_else(|| missing(minus_index - 1, pair.1))?;
        let count = count_flow_lines(&s, pm, pp, bbox, &settings.flow)?;
        let line = count.lines.first().ok_or(MorseError::NoFlowLine { q })?;
        let mut deviation: f64 = 0.0;
        for z in line {
            deviation = deviation.max(distance_to_constraint_set(&s, z)?);
        }
        out.push(AdiabaticPoint { q, deviation });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::circle_spec;
    use super::*;
    use crate::expr::Expression;
    use crate::phase::Space;

    #[test]
    fn gf2_rank_examples() {
        assert_eq!(gf2_rank(&[vec![1, 1], vec![1, 1]]), 1);
        assert_eq!(gf2_rank(&[vec![1, 0], vec![0, 1]]), 2);
        assert_eq!(gf2_rank(&[vec![0, 0]]), 0);
        assert_eq!(gf2_rank(&[]), 0);
        assert_eq!(gf2_rank(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 1]]), 2);
    }

    #[test]
    fn circle_complex() {
        let bbox = SearchBox::cube(2, 2.0);
        for q in [1.0, 0.5, 0.25] {
            let c = build_complex(&circle_spec(q), &bbox, &MorseSettings::default()).unwrap();
            assert_eq!(c.boundary[&2], vec![vec![0]]);
            assert_eq!(c.flow_line_counts[0].raw, 2);
            let ranks = homology_ranks(&c);
            assert_eq!(ranks, BTreeMap::from([(1, 1), (2, 1)]), "q = {q}");
        }
    }

    #[test]
    fn torus_complex() {
        let p = |s: &str| Expression::parse(s, 2).unwrap();
        let spec = MorseSpec::new(p("cos(x1) + cos(x2)"), vec![p("0"), p("0")], p("(y1^2 + y2^2)/2"), 0.5)
            .unwrap()
            .with_space(Space::Torus);
        let settings = MorseSettings {
            critical: CriticalSettings {
                grid: 6,
                ..CriticalSettings::default()
            },
            ..MorseSettings::default()
        };
        let c = build_complex(&spec, &SearchBox::cube(2, 2.0), &settings).unwrap();
        assert!(c.flow_line_counts.iter().all(|r| r.raw == 2));
        assert_eq!(homology_ranks(&c), BTreeMap::from([(0, 1), (1, 2), (2, 1)]));
    }

    #[test]
    fn isolated_generators() {
        let p = |s: &str| Expression::parse(s, 1).unwrap();
        let spec = MorseSpec::new(p("x1"), vec![p("x1^2 - 1")], p("0"), 1.0).unwrap();
        let c = build_complex(&spec, &SearchBox::cube(1, 2.0), &MorseSettings::default()).unwrap();
        assert_eq!(homology_ranks(&c), BTreeMap::from([(1, 2)]));
        let p = |s: &str| Expression::parse(s, 1).unwrap();
        let spec = MorseSpec::new(p("x1^2"), vec![p("0")], p("y1^2"), 1.0).unwrap();
        let c = build_complex(&spec, &SearchBox::cube(1, 2.0), &MorseSettings::default()).unwrap();
        assert_eq!(homology_ranks(&c), BTreeMap::from([(0, 1)]));
    }

    #[test]
    fn adiabatic_deviation_shrinks_with_q() {
        let q_list = [1.0, 0.3, 0.1, 0.03];
        let pts = adiabatic_deviation(
            &circle_spec(1.0),
            &q_list,
            (&[0.0, 1.0, -0.5, 0.0], &[0.0, -1.0, 0.5, 0.0]),
            2,
            &SearchBox::cube(2, 2.0),
            &MorseSettings::default(),
        )
        .unwrap();
        let d: Vec<f64> = pts.iter().map(|p| p.deviation).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
        // Measured: 0.644, 0.181, 0.0596, 0.0178.
        assert!(d[0] / d[3] > 30.0, "{d:?}");
        for (p, q) in pts.iter().zip(q_list) {
            assert!((p.deviation / q - 0.62).abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn adiabatic_q_list_must_decrease() {
        let r = adiabatic_deviation(
            &circle_spec(1.0),
            &[0.5, 1.0],
            (&[0.0, 1.0, -0.5, 0.0], &[0.0, -1.0, 0.5, 0.0]),
            2,
            &SearchBox::cube(2, 2.0),
            &MorseSettings::default(),
        );
        assert!(matches!(r, Err(MorseError::QList(_))));
    }

    #[test]
    fn constraint_distance_vanishes_on_z() {
        let spec = circle_spec(0.5);
        let t: f64 = 0.7;
        let z = [t.cos(), t.sin(), -t.sin() / 2.0, 0.3];
        assert!(distance_to_constraint_set(&spec, &z).unwrap() < 1e-15);
        assert!(distance_to_constraint_set(&spec, &[1.1, 0.0, 0.0, 0.0]).unwrap() > 0.2);
    }
}
