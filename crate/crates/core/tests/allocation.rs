mod common;

use deanchor_core::allocation::{
    check_assumption1, compare_policies, decompose_conditional_accuracy, expected_reward, grid_search_two_level,
    simulate_team_reward, solve_confidence_allocation, team_reward, AllocationError, AllocationPolicy, Bin, Branch,
    ConfidenceSplit, PolicyKind, RewardCurves, TimeBudget,
};
use deanchor_core::response::AgreementCurve;
use deanchor_core::seed;
use proptest::prelude::*;
use rand::Rng;

/// Piecewise-linear interpolation with flat ends, written out independently.
fn interp(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    if t <= ts[0] {
        return vs[0];
    }
    for i in 1..ts.len() {
        if t <= ts[i] {
            let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            return vs[i - 1] + w * (vs[i] - vs[i - 1]);
        }
    }
    *vs.last().unwrap()
}

struct Config {
    curves: RewardCurves,
    ts: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    budget: TimeBudget,
    split: ConfidenceSplit,
}

/// Monotone reward curves with a budget whose low-bin time stays on the grid.
fn random_config(rng: &mut impl Rng) -> Config {
    let n = rng.random_range(2..8);
    let mut ts: Vec<f64> = Vec::new();
    let mut t = rng.random_range(0.0..5.0);
    for _ in 0..n {
        ts.push(t);
        t += rng.random_range(0.5..10.0);
    }
    let mut low: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut high: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    low.sort_by(f64::total_cmp);
    high.sort_by(|a, b| b.total_cmp(a));
    let t_min = rng.random_range(0.0..20.0);
    let per = t_min + rng.random_range(0.0..20.0);
    let trials = rng.random_range(1..100u32);
    let budget = TimeBudget::new(per * trials as f64, trials, t_min.min(per), None).unwrap();
    let split = ConfidenceSplit::new(rng.random_range(0.01..=1.0)).unwrap();
    Config {
        curves: RewardCurves::new(ts.clone(), low.clone(), high.clone()).unwrap(),
        ts,
        low,
        high,
        budget,
        split,
    }
}

#[test]
fn deployed_allocation_is_exact() {
    let budget = TimeBudget::per_trial_budget(17.5, 40, 10.0).unwrap();
    let (t_low, t_high) = solve_confidence_allocation(&budget, 0.5).unwrap();
    assert_eq!((t_low, t_high), (25.0, 10.0));
    assert!((0.5 * t_low + 0.5 * t_high - budget.per_trial()).abs() <= 1e-12);
}

#[test]
fn budget_identity_holds_for_every_split() {
    let mut rng = seed::rng(5);
    for _ in 0..1000 {
        let cfg = random_config(&mut rng);
        let p = cfg.split.p_low;
        let (tl, th) = solve_confidence_allocation(&cfg.budget, p).unwrap();
        assert_eq!(th, cfg.budget.t_min);
        assert!(tl >= cfg.budget.per_trial() - 1e-9);
        assert!((p * tl + (1.0 - p) * th - cfg.budget.per_trial()).abs() <= 1e-9 * (1.0 + cfg.budget.per_trial()));
    }
}

#[test]
fn degenerate_and_capped_allocations_are_errors() {
    let budget = TimeBudget::per_trial_budget(17.5, 40, 10.0).unwrap();
    assert_eq!(solve_confidence_allocation(&budget, 0.0), Err(AllocationError::DegenerateSplit));
    let capped = TimeBudget::new(17.5 * 40.0, 40, 10.0, Some(20.0)).unwrap();
    match solve_confidence_allocation(&capped, 0.5) {
        Err(AllocationError::Cap {
            t_low,
            cap,
            feasible_t_min,
        }) => {
            assert_eq!((t_low, cap), (25.0, 20.0));
            assert_eq!(feasible_t_min, 15.0);
            let fixed = TimeBudget::new(17.5 * 40.0, 40, feasible_t_min, Some(20.0)).unwrap();
            assert_eq!(solve_confidence_allocation(&fixed, 0.5).unwrap(), (20.0, 15.0));
        }
        other => panic!("expected a cap error, got {other:?}"),
    }
}

#[test]
fn confidence_policy_dominates_on_a_thousand_configurations() {
    let mut rng = seed::rng(2024);
    let mut checked = 0;
    while checked < 1000 {
        let cfg = random_config(&mut rng);
        if !check_assumption1(&cfg.curves, 0.0).holds {
            continue;
        }
        checked += 1;
        let value = |kind| {
            let policy = AllocationPolicy::for_kind(kind, &cfg.budget, &cfg.split).unwrap();
            team_reward(&policy, &cfg.budget, &cfg.split, &cfg.curves).unwrap()
        };
        let conf = value(PolicyKind::ConfidenceBased);
        assert!(conf >= value(PolicyKind::Constant) - 1e-12);
        assert!(conf >= value(PolicyKind::Random) - 1e-12);
        let report = compare_policies(&cfg.split, &cfg.curves, &cfg.budget).unwrap();
        assert!(report.confidence_dominates);
        assert_eq!(report.ranking[0].policy, PolicyKind::ConfidenceBased);
        let grid = grid_search_two_level(&cfg.split, &cfg.curves, &cfg.budget, 0.5).unwrap();
        assert!(grid.team_reward <= conf + 1e-12, "grid {} beats {}", grid.team_reward, conf);
    }
}

#[test]
fn analytic_rewards_match_an_independent_mixture() {
    let mut rng = seed::rng(77);
    for _ in 0..300 {
        let cfg = random_config(&mut rng);
        let p = cfg.split.p_low;
        let per = cfg.budget.per_trial();
        let (tl, th) = solve_confidence_allocation(&cfg.budget, p).unwrap();
        let l = |t| interp(&cfg.ts, &cfg.low, t);
        let h = |t| interp(&cfg.ts, &cfg.high, t);
        let want = [
            (PolicyKind::Constant, p * l(per) + (1.0 - p) * h(per)),
            (PolicyKind::ConfidenceBased, p * l(tl) + (1.0 - p) * h(th)),
            (
                PolicyKind::Random,
                p * (p * l(tl) + (1.0 - p) * l(th)) + (1.0 - p) * (p * h(tl) + (1.0 - p) * h(th)),
            ),
        ];
        for (kind, expect) in want {
            let policy = AllocationPolicy::for_kind(kind, &cfg.budget, &cfg.split).unwrap();
            let got = team_reward(&policy, &cfg.budget, &cfg.split, &cfg.curves).unwrap();
            assert!((got - expect).abs() <= 1e-12, "{kind:?}: {got} vs {expect}");
        }
    }
}

#[test]
fn monte_carlo_reward_agrees_with_analytic() {
    let curve = AgreementCurve::experiment1_default();
    let curves = RewardCurves::from_agreement(&curve, 0.55, 0.92, &[10.0, 15.0, 17.5, 20.0, 25.0]).unwrap();
    let budget = TimeBudget::per_trial_budget(17.5, 40, 10.0).unwrap();
    let split = ConfidenceSplit::new(0.5).unwrap();
    for kind in [PolicyKind::Constant, PolicyKind::Random, PolicyKind::ConfidenceBased] {
        let policy = AllocationPolicy::for_kind(kind, &budget, &split).unwrap();
        let exact = team_reward(&policy, &budget, &split, &curves).unwrap();
        let sim = simulate_team_reward(&policy, &split, &curves, 400_000, 3);
        assert!((sim.mean - exact).abs() <= 4.0 * sim.std_error, "{kind:?}: {} vs {exact}", sim.mean);
    }
}

#[test]
fn off_budget_policies_are_rejected() {
    let budget = TimeBudget::per_trial_budget(17.5, 40, 10.0).unwrap();
    let split = ConfidenceSplit::new(0.5).unwrap();
    let curves = RewardCurves::new(vec![10.0, 25.0], vec![0.5, 0.6], vec![0.9, 0.8]).unwrap();
    let policy = AllocationPolicy {
        kind: PolicyKind::ConfidenceBased,
        t_low: 25.0,
        t_high: 12.0,
        p_long: 0.0,
    };
    assert!(matches!(
        team_reward(&policy, &budget, &split, &curves),
        Err(AllocationError::Budget { .. })
    ));
}

#[test]
fn assumption_violations_are_listed() {
    let curves = RewardCurves::new(vec![10.0, 20.0, 30.0], vec![0.6, 0.5, 0.7], vec![0.9, 0.95, 0.8]).unwrap();
    let report = check_assumption1(&curves, 0.0);
    assert!(!report.holds);
    let low: Vec<_> = report.violations.iter().filter(|v| v.bin == Bin::Low).collect();
    let high: Vec<_> = report.violations.iter().filter(|v| v.bin == Bin::High).collect();
    assert_eq!(low.len(), 1);
    assert_eq!((low[0].t1, low[0].t2), (10.0, 20.0));
    assert_eq!(high.len(), 1);
    assert_eq!((high[0].t1, high[0].t2), (10.0, 20.0));
    assert!(check_assumption1(&curves, 0.2).holds);
}

#[test]
fn conditional_accuracy_decomposition() {
    let right = Branch {
        response: 0.9,
        weight: 0.7,
    };
    let wrong = Branch {
        response: 0.4,
        weight: 0.3,
    };
    let got = decompose_conditional_accuracy(right, wrong).unwrap();
    assert!((got - (0.63 + 0.12)).abs() <= 1e-15);
    assert_eq!(got, expected_reward(0.7, 0.9, 0.6).unwrap());
    assert!(decompose_conditional_accuracy(right, Branch { weight: 0.4, ..wrong }).is_err());
}

proptest! {
    #![proptest_config(common::config(256))]

    #[test]
    fn grid_never_beats_the_closed_form(seed_value in any::<u64>()) {
        let cfg = random_config(&mut seed::rng(seed_value));
        prop_assume!(check_assumption1(&cfg.curves, 0.0).holds);
        let conf = AllocationPolicy::confidence_based(&cfg.budget, &cfg.split, false).unwrap();
        let value = team_reward(&conf, &cfg.budget, &cfg.split, &cfg.curves).unwrap();
        let grid = grid_search_two_level(&cfg.split, &cfg.curves, &cfg.budget, 0.5).unwrap();
        prop_assert!(grid.team_reward <= value + 1e-12);
        prop_assert!(grid.evaluated >= 1);
    }

    #[test]
    fn reward_stays_within_bin_extremes(seed_value in any::<u64>()) {
        let cfg = random_config(&mut seed::rng(seed_value));
        for kind in PolicyKind::ALL {
            let policy = AllocationPolicy::for_kind(kind, &cfg.budget, &cfg.split).unwrap();
            let r = team_reward(&policy, &cfg.budget, &cfg.split, &cfg.curves).unwrap();
            let lo = cfg.low.iter().chain(&cfg.high).cloned().fold(f64::INFINITY, f64::min);
            let hi = cfg.low.iter().chain(&cfg.high).cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12);
        }
    }
}
