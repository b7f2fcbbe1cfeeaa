//! Cross-module agreement: exact symbolic results against the numeric
//! pipelines that are built independently of them.

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use defham::bracket::deformed_bracket;
use defham::dynamics::{
    conformal_rate, deformed_field, integrate, integrate_variational, max_defect, pullback_defect, FlowSpec,
    PullbackMode,
};
use defham::expr::Expression;
use defham::forms::{classify_hamiltonian, deformed_field_poly, symbolic_bracket, Poly};
use defham::morse::{build_complex, homology_ranks, MorseSettings, MorseSpec, SearchBox};
use defham::ode::Integrator;
use defham::phase::{omega, MetricFamily, PhasePoint, Space, TangentVector};
use defham::sample::{random_point, random_poly, PolyShape};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn expr(s: &str, n: usize) -> Expression {
    Expression::parse(s, n).unwrap()
}

fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(a.into(), b.into())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbolic_field_matches_numeric(seed in any::<u64>(), num in -6i64..=6, den in 1i64..=4) {
        prop_assume!(num != 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_poly(&mut rng, 2, &PolyShape::default());
        let q = ratio(num, den);
        let qf = q.to_f64().unwrap();
        let z = random_point(&mut rng, 2, 1.0);
        let (a, b) = deformed_field_poly(&h, &q).unwrap();
        let numeric = deformed_field(&h.to_expression(), qf, &PhasePoint::from_flat(&z, Space::Plane).unwrap()).unwrap();
        let flat = numeric.to_flat();
        for (i, p) in a.iter().chain(&b).enumerate() {
            let exact = p.evaluate(&z);
            prop_assert!((exact - flat[i]).abs() <= 1e-12 * (1.0 + exact.abs()), "{exact} vs {}", flat[i]);
        }
    }

    #[test]
    fn symbolic_bracket_matches_numeric(seed in any::<u64>(), num in -6i64..=6, den in 1i64..=4) {
        prop_assume!(num != 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = PolyShape::default();
        let h = random_poly(&mut rng, 2, &shape);
        let f = random_poly(&mut rng, 2, &shape);
        let q = ratio(num, den);
        let z = random_point(&mut rng, 2, 1.0);
        let exact = symbolic_bracket(&h, &f, &q).unwrap().evaluate(&z);
        let numeric = deformed_bracket(
            &h.to_expression(),
            &f.to_expression(),
            q.to_f64().unwrap(),
            &PhasePoint::from_flat(&z, Space::Plane).unwrap(),
        )
        .unwrap();
        prop_assert!((exact - numeric).abs() <= 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn field_is_omega_dual_of_dh(seed in any::<u64>(), q in prop_oneof![0.1f64..5.0, -5.0f64..-0.1]) {
        // omega(X^q_H, v) = -(d_+ H + q^-1 d_- H)(v)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_poly(&mut rng, 2, &PolyShape::default()).to_expression();
        let z = random_point(&mut rng, 2, 1.0);
        let x = deformed_field(&h, q, &PhasePoint::from_flat(&z, Space::Plane).unwrap()).unwrap();
        let grad: Vec<f64> = h.gradient().iter().map(|g| g.evaluate(&z).unwrap()).collect();
        for slot in 0..4 {
            let v = TangentVector::from_flat(&(0..4).map(|k| f64::from(u8::from(k == slot))).collect::<Vec<_>>());
            let weight = if slot < 2 { 1.0 } else { 1.0 / q };
            let expected = -weight * grad[slot];
            prop_assert!((omega(&x, &v) - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn classification_predicts_pullback() {
    let cases = [
        ("y1^2/2 + x1^4/4 - x2^2 + y2^3", None),
        ("x1*y1 + x2*y2", Some(1.0)),
        ("2*x1*y1 + 2*x2*y2 + x1^2", Some(0.5)),
    ];
    let q = 0.5;
    for (text, c_prime) in cases {
        let h = expr(text, 2);
        let class = classify_hamiltonian(&Poly::from_expression(&h).unwrap());
        assert_eq!(class.conformal_ratio.as_ref().and_then(|r| r.to_f64()), c_prime, "{text}");
        let mode = match c_prime {
            None => {
                assert!(class.simple, "{text}");
                PullbackMode::Symplectic
            }
            Some(c) => PullbackMode::Conformal {
                rate: conformal_rate(q, c),
            },
        };
        let spec = FlowSpec::new(h, q, 1.0).with_integrator(Integrator::Rk4 { step: 1e-3 });
        let z0 = PhasePoint::plane(vec![0.3, -0.2], vec![0.1, 0.4]).unwrap();
        let defect = max_defect(&pullback_defect(&integrate_variational(&spec, &z0).unwrap(), mode));
        assert!(defect < 1e-8, "{text}: {defect}");
    }
}

#[test]
fn energy_change_integrates_the_rate() {
    let h = expr("(x1^2 + y1^2)/2 + x1*y1/4", 1);
    let q = 2.0;
    let spec = FlowSpec::new(h.clone(), q, 2.0).with_integrator(Integrator::Rk4 { step: 1e-4 });
    let traj = integrate(&spec, &PhasePoint::plane(vec![1.0], vec![0.5]).unwrap()).unwrap();
    let rate = |z: &[f64]| {
        let g: Vec<f64> = h.gradient().iter().map(|e| e.evaluate(z).unwrap()).collect();
        (1.0 / q - 1.0) * g[0] * g[1]
    };
    let mut integral = 0.0;
    for w in traj.samples.windows(2) {
        let dt = w[1].t - w[0].t;
        integral += 0.5 * dt * (rate(&w[0].z.to_flat()) + rate(&w[1].z.to_flat()));
    }
    let change = traj.last().unwrap().h - traj.samples[0].h;
    assert_relative_eq!(change, integral, max_relative = 1e-6);
}

#[test]
fn dual_map_squares_to_minus_q() {
    for q in [0.25, 1.0, -1.0, 3.0] {
        let fam = MetricFamily::identity(2, q);
        let j = fam.dual_endomorphism().unwrap();
        let sq = &j * &j + nalgebra::DMatrix::<f64>::identity(4, 4) * q;
        assert!(sq.amax() < 1e-15, "q = {q}");
    }
}

#[test]
fn larger_circle_has_circle_homology() {
    // Constraint circle of radius 2; critical points at (0, +-2, -+1/4, 0).
    let p = |s: &str| expr(s, 2);
    let spec = MorseSpec::new(p("x2"), vec![p("x1^2 + x2^2 - 4"), p("0")], p("y2^2/2"), 0.5).unwrap();
    let bbox = SearchBox::new(vec![-3.0, -3.0, -1.0, -1.0], vec![3.0, 3.0, 1.0, 1.0]).unwrap();
    let c = build_complex(&spec, &bbox, &MorseSettings::default()).unwrap();
    let points: Vec<(Vec<f64>, usize)> = c.critical_points().map(|p| (p.flat(), p.index)).collect();
    assert_eq!(points.len(), 2);
    for (z, index) in &points {
        let top = z[1] > 0.0;
        assert_eq!(*index, if top { 2 } else { 1 });
        assert_relative_eq!(z[1].abs(), 2.0, epsilon = 1e-10);
        assert_relative_eq!(z[2], if top { -0.25 } else { 0.25 }, epsilon = 1e-10);
    }
    assert_eq!(c.flow_line_counts[0].raw, 2);
    assert_eq!(homology_ranks(&c), BTreeMap::from([(1, 1), (2, 1)]));
}
