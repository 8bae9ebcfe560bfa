mod common;

use common::*;
use deanchor_core::bias::{
    Agent, AgreementMode, AiOutputTable, BiasProfile, LikelihoodModel, Observation, TrialSource, WeightedObservations,
};
use deanchor_core::bias::Label;
use deanchor_core::response::{
    calibrate_beta, fitted_slope, interpolate, isotonic_non_increasing, ols_slope, AgreementCurve, BetaGrid,
    BetaSchedule, CalibrationError, EXPERIMENT1_TIMES,
};
use proptest::prelude::*;

fn agent(ai: AiOutputTable, temperature: f64) -> Agent {
    let tables = vec![
        [vec![0.6, 0.3, 0.1], vec![0.2, 0.3, 0.5]],
        [vec![0.7, 0.3], vec![0.4, 0.6]],
    ];
    Agent::new(
        BiasProfile::rational(),
        LikelihoodModel {
            prior: prior(0.6),
            features: likelihood(&tables),
            ai,
        },
        temperature,
    )
    .unwrap()
}

/// Items the agent alone tends to decide against the shown label.
fn contrarian_source() -> WeightedObservations {
    WeightedObservations::uniform(vec![
        Observation::new(vec![0, 0], Some(Label::One)),
        Observation::new(vec![0, 1], Some(Label::One)),
        Observation::new(vec![2, 1], Some(Label::Zero)),
        Observation::new(vec![1, 0], Some(Label::One)),
    ])
    .unwrap()
}

#[test]
fn default_curves_hold_the_quoted_knots() {
    let c = AgreementCurve::experiment1_default();
    assert!((1.0 - c.agree_wrong(10.0) - 0.48).abs() < 1e-12);
    assert!((1.0 - c.agree_wrong(25.0) - 0.67).abs() < 1e-12);
    assert_eq!(c.agree_wrong(0.0), c.agree_wrong(10.0));
    assert_eq!(c.agree_wrong(90.0), c.agree_wrong(25.0));
    let e = AgreementCurve::explained_default();
    assert!((c.agree_wrong(25.0) - e.agree_wrong(25.0) - 0.063).abs() < 1e-12);
}

#[test]
fn fitted_slope_of_the_default_curve() {
    let c = AgreementCurve::experiment1_default();
    let slope = fitted_slope(&c, &EXPERIMENT1_TIMES).unwrap();
    // Disagreement rises linearly from 0.48 to 0.67 over 15 s.
    assert!((slope - 0.19 / 15.0).abs() < 1e-12);
    assert!((0.001..=0.018).contains(&slope));
    assert!(ols_slope(&[1.0, 1.0], &[0.0, 1.0]).is_err());
}

#[test]
fn curve_validation() {
    assert!(AgreementCurve::new(vec![10.0, 25.0], vec![0.9, 0.9], vec![0.3, 0.5]).is_err());
    assert!(AgreementCurve::new(vec![10.0, 25.0], vec![0.8, 0.83], vec![0.5, 0.3]).is_err());
    assert!(AgreementCurve::new(vec![10.0, 25.0], vec![0.8, 0.815], vec![0.5, 0.3]).is_ok());
    assert!(AgreementCurve::new(vec![25.0, 10.0], vec![0.9, 0.9], vec![0.5, 0.3]).is_err());
    assert!(AgreementCurve::new(vec![], vec![], vec![]).is_err());
    assert!(AgreementCurve::new(vec![1.0], vec![1.2], vec![0.5]).is_err());
    let json = r#"{"times":[10,25],"agree_right":[0.9,0.9],"agree_wrong":[0.3,0.5]}"#;
    assert!(serde_json::from_str::<AgreementCurve>(json).is_err());
}

#[test]
fn calibration_hits_every_knot() {
    let a = agent(AiOutputTable::announced(), 0.5);
    let source = contrarian_source();
    let base = a.agreement(&source, AgreementMode::Exhaustive).unwrap().probability;
    let curve = AgreementCurve::new(vec![10.0, 25.0], vec![0.9, 0.9], vec![0.75, base + 0.05]).unwrap();
    let times = curve.calibration_times();
    assert_eq!(times, vec![10.0, 15.0, 20.0, 25.0]);
    let schedule = calibrate_beta(&curve, &a, &source, &BetaGrid::default(), &times, AgreementMode::Exhaustive).unwrap();
    assert!(schedule.betas().windows(2).all(|w| w[1] <= w[0]));
    assert!(schedule.residual_rmse < 1e-8, "{}", schedule.residual_rmse);
    for k in &schedule.knots {
        let got = a.with_beta(k.beta).agreement(&source, AgreementMode::Exhaustive).unwrap().probability;
        assert!((got - curve.agree_wrong(k.time)).abs() < 1e-8, "t {}: {got}", k.time);
        assert!((k.achieved - got).abs() < 1e-12);
    }
    assert!(schedule.beta_at(25.0) > 0.0);
    assert_eq!(schedule.beta_at(5.0), schedule.beta_at(10.0));
}

#[test]
fn unreachable_targets_are_reported() {
    let a = agent(AiOutputTable::announced(), 0.5);
    let curve = AgreementCurve::constant(0.9, 0.0).unwrap();
    let grid = BetaGrid {
        min: -1.0,
        max: 1.0,
        ..BetaGrid::default()
    };
    let err = calibrate_beta(&curve, &a, &contrarian_source(), &grid, &[10.0], AgreementMode::Exhaustive).unwrap_err();
    match err {
        CalibrationError::Unreachable { target, low, .. } => {
            assert_eq!(target, 0.0);
            assert!(low > 0.0);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_dominant_tables_are_rejected() {
    let a = agent(AiOutputTable::symmetric(0.4).unwrap(), 0.5);
    let curve = AgreementCurve::experiment1_default();
    let err = calibrate_beta(&curve, &a, &contrarian_source(), &BetaGrid::default(), &[10.0], AgreementMode::Exhaustive)
        .unwrap_err();
    assert!(matches!(err, CalibrationError::NotMonotone(_)), "{err}");
}

#[test]
fn bad_grids_are_rejected() {
    let a = agent(AiOutputTable::announced(), 0.5);
    let curve = AgreementCurve::experiment1_default();
    let grid = BetaGrid {
        min: 3.0,
        max: -3.0,
        ..BetaGrid::default()
    };
    let err = calibrate_beta(&curve, &a, &contrarian_source(), &grid, &[10.0], AgreementMode::Exhaustive).unwrap_err();
    assert!(matches!(err, CalibrationError::Grid(_)));
    let err = calibrate_beta(&curve, &a, &contrarian_source(), &BetaGrid::default(), &[20.0, 10.0], AgreementMode::Exhaustive)
        .unwrap_err();
    assert!(matches!(err, CalibrationError::Grid(_)));
}

#[test]
fn schedules_validate_on_load() {
    assert!(BetaSchedule::new(vec![10.0, 25.0], vec![1.0, 2.0]).is_err());
    let s = BetaSchedule::new(vec![10.0, 25.0], vec![2.0, 1.0]).unwrap();
    assert!((s.beta_at(17.5) - 1.5).abs() < 1e-15);
    let back: BetaSchedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    let raised = serde_json::to_string(&s).unwrap().replace("[2.0,1.0]", "[1.0,2.0]");
    assert!(serde_json::from_str::<BetaSchedule>(&raised).is_err());
}

#[test]
fn monte_carlo_calibration_is_close_to_exhaustive() {
    let a = agent(AiOutputTable::announced(), 0.5);
    let source = contrarian_source();
    let curve = AgreementCurve::new(vec![10.0, 25.0], vec![0.9, 0.9], vec![0.7, 0.5]).unwrap();
    let exact = calibrate_beta(&curve, &a, &source, &BetaGrid::default(), &[10.0, 25.0], AgreementMode::Exhaustive).unwrap();
    let mc = calibrate_beta(
        &curve,
        &a,
        &source,
        &BetaGrid::default(),
        &[10.0, 25.0],
        AgreementMode::MonteCarlo {
            samples: 100_000,
            seed: 1,
        },
    );
    // Monte Carlo agreement is a step function of beta; bisection still lands near the exact root.
    let mc = mc.unwrap();
    for (e, m) in exact.betas().iter().zip(mc.betas()) {
        assert!((e - m).abs() < 0.1, "{e} vs {m}");
    }
    assert!(source.enumerate().is_ok());
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn isotonic_projection_properties(values in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let fit = isotonic_non_increasing(&values);
        prop_assert_eq!(fit.len(), values.len());
        prop_assert!(fit.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((mean(&fit) - mean(&values)).abs() < 1e-9);
        let again = isotonic_non_increasing(&fit);
        for (a, b) in again.iter().zip(&fit) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // No non-increasing candidate formed by flattening is closer.
        let flat = vec![mean(&values); values.len()];
        let sse = |v: &[f64]| v.iter().zip(&values).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prop_assert!(sse(&fit) <= sse(&flat) + 1e-9);
    }

    #[test]
    fn interpolation_matches_segment_formula(
        knots in prop::collection::vec((0.1f64..5.0, 0.0f64..1.0), 1..8),
        t in -5.0f64..60.0,
    ) {
        let mut ts = Vec::new();
        let mut acc = 0.0;
        for (dt, _) in &knots {
            acc += dt;
            ts.push(acc);
        }
        let vs: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let got = interpolate(&ts, &vs, t);
        let want = if t <= ts[0] {
            vs[0]
        } else if t >= *ts.last().unwrap() {
            *vs.last().unwrap()
        } else {
            let i = ts.iter().position(|&x| x >= t).unwrap();
            let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            vs[i - 1] * (1.0 - w) + vs[i] * w
        };
        prop_assert!((got - want).abs() < 1e-12);
    }
}
