//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::ffi::OsStr;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use deanchor_cli::Cli;
use deanchor_core::allocation::{
    check_assumption1, compare_policies, grid_search_two_level, solve_confidence_allocation, team_reward,
    AllocationPolicy, ConfidenceSplit, PolicyKind, RewardCurves, TimeBudget,
};
use deanchor_core::bias::{
    agreement_probability, posterior_log_ratio, sigmoid, Agent, AgreementMode, AiOutputTable, BiasProfile,
    FeatureLikelihood, FeatureLikelihoodTable, GenerativeSource, Label, LabelPrior, LikelihoodModel, Observation,
    TieRule, TrialSource,
};
use deanchor_core::config::{DataSection, RunConfig};
use deanchor_core::data::{self, SubjectFilter};
use deanchor_core::harness::{CellKey, Group, GroupMetrics, Stratum};
use deanchor_core::pipeline;
use deanchor_core::response::{ols_slope, EXPERIMENT1_TIMES};
use deanchor_core::seed;
use rand::Rng;

type Check = fn() -> Result<String, String>;

fn root() -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    dir.canonicalize().unwrap_or(dir)
}

fn config(name: &str) -> RunConfig {
    let path = root().join("configs").join(name);
    RunConfig::parse(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn dataset() -> Result<String, String> {
    let start = Instant::now();
    let dir = std::env::var_os("DEANCHOR_UCI_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| root().join("data/uci"));
    let present = SubjectFilter::Both.subjects().iter().all(|s| dir.join(s.file_name()).is_file());
    if !present {
        let cfg = RunConfig::new(20240611);
        let records = pipeline::load_records(&cfg).map_err(|e| e.to_string())?;
        let t = pipeline::train_model(&records, &cfg, &cfg.model.features).map_err(|e| e.to_string())?;
        return Err(format!(
            "UCI student-mat.csv/student-por.csv not found in {} (set DEANCHOR_UCI_DIR); \
             the synthetic stand-in gives {} records, test {:.3}, train {:.3}, which does not count",
            dir.display(),
            records.len(),
            t.model.training.test_accuracy,
            t.model.training.train_accuracy
        ));
    }
    let records = data::ingest_dir(&dir, SubjectFilter::Both).map_err(|e| e.to_string())?;
    ensure(records.len() == 1044, format!("{} records, expected 1044", records.len()))?;
    let mut cfg = RunConfig::new(20240611);
    cfg.data = DataSection::Uci {
        dir: dir.clone(),
        subjects: SubjectFilter::Both,
    };
    let t = pipeline::train_model(&records, &cfg, &cfg.model.features).map_err(|e| e.to_string())?;
    let (test, train) = (t.model.training.test_accuracy, t.model.training.train_accuracy);
    let elapsed = start.elapsed();
    let detail = format!("1044 records, test {test:.4}, train {train:.4}, {elapsed:.2?}");
    ensure(within(test, 0.665, 0.03), format!("test accuracy outside 0.665 +/- 0.03: {detail}"))?;
    ensure(within(train, 0.708, 0.03), format!("train accuracy outside 0.708 +/- 0.03: {detail}"))?;
    ensure(elapsed < Duration::from_secs(60), format!("too slow: {detail}"))?;
    Ok(detail)
}

fn allocation_solve() -> Result<String, String> {
    let budget = TimeBudget::per_trial_budget(17.5, 40, 10.0).map_err(|e| e.to_string())?;
    let (tl, th) = solve_confidence_allocation(&budget, 0.5).map_err(|e| e.to_string())?;
    let gap = (0.5 * tl + 0.5 * th - 17.5).abs();
    ensure((tl, th) == (25.0, 10.0), format!("got ({tl}, {th})"))?;
    ensure(gap <= 1e-12, format!("budget identity off by {gap:e}"))?;
    Ok(format!("(t_L, t_H) = ({tl}, {th}), identity gap {gap:e}"))
}

fn random_allocation(rng: &mut impl Rng) -> (RewardCurves, TimeBudget, ConfidenceSplit) {
    let n = rng.random_range(2..8);
    let mut ts = Vec::new();
    let mut t = rng.random_range(0.0..5.0);
    for _ in 0..n {
        ts.push(t);
        t += rng.random_range(0.5..10.0);
    }
    let mut low: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut high: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    // Unsorted draws leave some configurations outside the assumption.
    if rng.random_bool(0.8) {
        low.sort_by(f64::total_cmp);
        high.sort_by(|a, b| b.total_cmp(a));
    }
    let t_min = rng.random_range(0.0..20.0);
    let per = t_min + rng.random_range(0.0..20.0);
    let trials = rng.random_range(1..100u32);
    let budget = TimeBudget::new(per * trials as f64, trials, t_min, None).unwrap();
    let split = ConfidenceSplit::new(rng.random_range(0.01..=1.0)).unwrap();
    (RewardCurves::new(ts, low, high).unwrap(), budget, split)
}

fn dominance() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = seed::rng(20240611);
    let (mut checked, mut skipped, mut violations, mut grid_violations) = (0, 0, 0, 0);
    let mut worst = f64::INFINITY;
    while checked < 1000 {
        let (curves, budget, split) = random_allocation(&mut rng);
        if !check_assumption1(&curves, 0.0).holds {
            skipped += 1;
            continue;
        }
        checked += 1;
        let value = |kind| {
            let p = AllocationPolicy::for_kind(kind, &budget, &split).unwrap();
            team_reward(&p, &budget, &split, &curves).unwrap()
        };
        let conf = value(PolicyKind::ConfidenceBased);
        for other in [PolicyKind::Constant, PolicyKind::Random] {
            let margin = conf - value(other);
            worst = worst.min(margin);
            if margin < -1e-12 {
                violations += 1;
            }
        }
        let report = compare_policies(&split, &curves, &budget).map_err(|e| e.to_string())?;
        if !report.confidence_dominates || report.ranking[0].policy != PolicyKind::ConfidenceBased {
            violations += 1;
        }
        let grid = grid_search_two_level(&split, &curves, &budget, 0.5).map_err(|e| e.to_string())?;
        if grid.team_reward > conf + 1e-12 {
            grid_violations += 1;
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "1000 configurations ({skipped} rejected by the assumption check), {violations} dominance and \
         {grid_violations} grid violations, smallest margin {worst:.3e}, {elapsed:.2?}"
    );
    ensure(violations == 0 && grid_violations == 0, detail.clone())?;
    ensure(elapsed < Duration::from_secs(60), format!("too slow: {detail}"))?;
    Ok(detail)
}

fn experiment1() -> Result<String, String> {
    let start = Instant::now();
    let cfg = config("experiment1.json");
    let sessions = cfg.experiment.sessions;
    let sim = pipeline::simulate(&cfg, false).map_err(|e| e.to_string())?;
    let g = sim
        .output
        .metrics
        .group(Group::TimeBlocks)
        .ok_or("no time_blocks group")?;
    let disagreement = |t: f64| -> Result<f64, String> {
        let c = g.cell(CellKey::time(t, true)).ok_or(format!("no probe cell at {t} s"))?;
        Ok(1.0 - c.agreement.flatten().ok_or(format!("empty probe cell at {t} s"))?)
    };
    let ys: Vec<f64> = EXPERIMENT1_TIMES.iter().map(|&t| disagreement(t)).collect::<Result<_, _>>()?;
    let slope = ols_slope(&EXPERIMENT1_TIMES, &ys).map_err(|e| e.to_string())?;
    let (d10, d25) = (disagreement(10.0)?, disagreement(25.0)?);
    let elapsed = start.elapsed();
    let detail = format!(
        "{sessions} agents, disagreement {d10:.4} at 10 s and {d25:.4} at 25 s, slope {slope:.5}/s, {elapsed:.2?}"
    );
    ensure(sessions >= 10_000, format!("only {sessions} agents"))?;
    ensure(within(d10, 0.48, 0.03), format!("10 s outside 0.48 +/- 0.03: {detail}"))?;
    ensure(within(d25, 0.67, 0.03), format!("25 s outside 0.67 +/- 0.03: {detail}"))?;
    ensure((0.001..=0.018).contains(&slope), format!("slope outside [0.001, 0.018]: {detail}"))?;
    ensure(elapsed < Duration::from_secs(120), format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Per-class value distributions for `k` binary features.
fn binary_tables(rng: &mut impl Rng, k: usize) -> Vec<[Vec<f64>; 2]> {
    (0..k)
        .map(|_| {
            let mut side = || {
                let p = rng.random_range(0.05..0.95);
                vec![1.0 - p, p]
            };
            [side(), side()]
        })
        .collect()
}

fn likelihood(tables: &[[Vec<f64>; 2]]) -> FeatureLikelihoodTable {
    let features = tables
        .iter()
        .enumerate()
        .map(|(j, t)| FeatureLikelihood {
            name: format!("f{j}"),
            probs: t.clone(),
        })
        .collect();
    FeatureLikelihoodTable::from_probabilities(features, 0.0).unwrap()
}

fn ai_table(rng: &mut impl Rng, dominant: bool) -> AiOutputTable {
    let lo = if dominant { 0.52 } else { 0.02 };
    AiOutputTable::from_class_accuracies(rng.random_range(lo..0.98), rng.random_range(lo..0.98)).unwrap()
}

/// `P(y) P(x|y) P(yhat|y)` raised to the bias exponents, by direct products.
fn weight(y: usize, p1: f64, tables: &[[Vec<f64>; 2]], ai: &AiOutputTable, obs: &Observation, w: (f64, f64, f64)) -> f64 {
    let mut v = (if y == 1 { p1 } else { 1.0 - p1 }).powf(w.2);
    for (j, &x) in obs.features.iter().enumerate() {
        v *= tables[j][y][x as usize].powf(w.0);
    }
    if let Some(shown) = obs.ai_prediction {
        v *= ai.q()[shown.index()][y].powf(w.1);
    }
    v
}

fn brute_force() -> Result<String, String> {
    let mut rng = seed::rng(7);
    let (mut worst_agree, mut worst_lr) = (0.0f64, 0.0f64);
    let configs = 2000;
    for _ in 0..configs {
        let k = rng.random_range(1..=4);
        let belief = binary_tables(&mut rng, k);
        let truth = binary_tables(&mut rng, k);
        let (bp1, tp1) = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
        let (bai, tai) = (ai_table(&mut rng, false), ai_table(&mut rng, false));
        let w = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let profile = BiasProfile::new(w.0, w.1, w.2, TieRule::FavorAi).unwrap();
        let prior = LabelPrior::new(bp1).unwrap();
        let lik = likelihood(&belief);
        let source = GenerativeSource {
            label_p1: tp1,
            features: truth.clone(),
            ai: tai,
        };
        let got = agreement_probability(&profile, &prior, &lik, &bai, &source, AgreementMode::Exhaustive)
            .map_err(|e| e.to_string())?
            .probability;
        let mut want = 0.0;
        for y in 0..2usize {
            let py = if y == 1 { tp1 } else { 1.0 - tp1 };
            for bits in 0..(1u32 << k) {
                let x: Vec<u32> = (0..k).map(|j| (bits >> j) & 1).collect();
                let px: f64 = x.iter().enumerate().map(|(j, &v)| truth[j][y][v as usize]).product();
                for shown in [Label::Zero, Label::One] {
                    let obs = Observation::new(x.clone(), Some(shown));
                    let (w1, w0) = (weight(1, bp1, &belief, &bai, &obs, w), weight(0, bp1, &belief, &bai, &obs, w));
                    let decision = if w1 == w0 { shown } else { Label::from_bool(w1 > w0) };
                    if decision == shown {
                        want += py * px * tai.q()[shown.index()][y];
                    }
                    let lr = posterior_log_ratio(&profile, &prior, &lik, &bai, &obs).map_err(|e| e.to_string())?;
                    worst_lr = worst_lr.max((lr - (w1 / w0).ln()).abs());
                }
            }
        }
        worst_agree = worst_agree.max((got - want).abs());
    }
    let detail = format!(
        "{configs} configurations with 1-4 binary features, max error {worst_agree:.2e} (agreement), {worst_lr:.2e} (log ratio)"
    );
    ensure(worst_agree <= 1e-12 && worst_lr <= 1e-12, detail.clone())?;
    Ok(detail)
}

fn limits() -> Result<String, String> {
    let mut rng = seed::rng(11);
    let mut min_agree = 1.0f64;
    let mut worst_post = 0.0f64;
    let configs = 500;
    for i in 0..configs {
        let k = rng.random_range(1..=4);
        let tables = binary_tables(&mut rng, k);
        let p1 = rng.random_range(0.05..0.95);
        let ai = ai_table(&mut rng, true);
        let temperature = if i % 2 == 0 { 0.0 } else { rng.random_range(0.05..2.0) };
        let model = LikelihoodModel {
            prior: LabelPrior::new(p1).unwrap(),
            features: likelihood(&tables),
            ai,
        };
        let agent = Agent::new(BiasProfile::rational().with_beta(1e6), model.clone(), temperature).unwrap();
        let source = GenerativeSource {
            label_p1: rng.random_range(0.05..0.95),
            features: tables.clone(),
            ai: ai_table(&mut rng, false),
        };
        let a = agent.agreement(&source, AgreementMode::Exhaustive).map_err(|e| e.to_string())?.probability;
        min_agree = min_agree.min(a);
        for (obs, _) in source.enumerate().map_err(|e| e.to_string())? {
            let lr = posterior_log_ratio(&BiasProfile::rational(), &model.prior, &model.features, &model.ai, &obs)
                .map_err(|e| e.to_string())?;
            let (w1, w0) = (weight(1, p1, &tables, &ai, &obs, (1.0, 1.0, 1.0)), weight(0, p1, &tables, &ai, &obs, (1.0, 1.0, 1.0)));
            worst_post = worst_post.max((sigmoid(lr) - w1 / (w0 + w1)).abs());
        }
    }
    let detail = format!(
        "{configs} configurations: minimum agreement at beta = 1e6 is {min_agree}, max posterior error at unit exponents {worst_post:.2e}"
    );
    ensure(min_agree == 1.0 && worst_post <= 1e-12, detail.clone())?;
    Ok(detail)
}

/// Accuracy and standard error pooled over the two AI-wrong strata.
fn ai_wrong(g: &GroupMetrics) -> (f64, f64) {
    let a = g.stratum(Stratum::LowWrong);
    let b = g.stratum(Stratum::HighWrong);
    let (na, nb) = (a.trials as f64, b.trials as f64);
    let n = na + nb;
    let acc = (a.correct + b.correct) as f64 / n;
    let se = ((na * a.accuracy_se.unwrap()).powi(2) + (nb * b.accuracy_se.unwrap()).powi(2)).sqrt() / n;
    (acc, se)
}

fn experiment2() -> Result<String, String> {
    let cfg = config("experiment2.json");
    let sessions = cfg.experiment.sessions;
    ensure(sessions >= 10_000, format!("only {sessions} sessions per group"))?;
    let sim = pipeline::simulate(&cfg, false).map_err(|e| e.to_string())?;
    let m = &sim.output.metrics;
    let group = |g| m.group(g).ok_or(format!("missing group {g:?}"));
    let low_wrong = |g| -> Result<(f64, f64), String> {
        let c = group(g)?.stratum(Stratum::LowWrong);
        Ok((c.accuracy.unwrap(), c.accuracy_se.unwrap()))
    };
    let margin = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0) / (a.1.powi(2) + b.1.powi(2)).sqrt();
    let explained = low_wrong(Group::ConfidenceExplained)?;
    let mut lines = vec![format!("C_L x AI-wrong: explained {:.4}", explained.0)];
    let mut ok = true;
    for g in [Group::Constant, Group::Random, Group::Confidence] {
        let other = low_wrong(g)?;
        let z = margin(explained, other);
        ok &= z >= 3.0;
        lines.push(format!("{g:?} {:.4} ({z:.1} SE)", other.0));
    }
    let human = ai_wrong(group(Group::HumanOnly)?);
    lines.push(format!("AI-wrong: human_only {:.4}", human.0));
    for g in [Group::Constant, Group::Random, Group::Confidence, Group::ConfidenceExplained] {
        let other = ai_wrong(group(g)?);
        let z = margin(human, other);
        ok &= z >= 3.0;
        lines.push(format!("{g:?} {:.4} ({z:.1} SE)", other.0));
    }
    let detail = format!("{sessions} sessions per group; {}", lines.join(", "));
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for cfg in ["experiment1.json", "experiment2.json"] {
        let cfg_path = root().join("configs").join(cfg);
        for format in ["json", "csv", "text"] {
            let mut bytes = Vec::new();
            for run in 0..2 {
                let out = dir.path().join(format!("{cfg}-{format}-{run}"));
                let cli = Cli::try_parse_from([
                    OsStr::new("deanchor"),
                    OsStr::new("--config"),
                    cfg_path.as_os_str(),
                    OsStr::new("--format"),
                    OsStr::new(format),
                    OsStr::new("--out"),
                    out.as_os_str(),
                    OsStr::new("simulate"),
                ])
                .map_err(|e| e.to_string())?;
                let written = deanchor_cli::run(cli).map_err(|e| e.to_string())?;
                bytes.push(std::fs::read(&written[0]).map_err(|e| e.to_string())?);
            }
            ensure(bytes[0] == bytes[1], format!("{cfg} {format} outputs differ"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} pairs of simulate outputs byte-identical"))
}

fn main() {
    let checks: [(&str, Check); 8] = [
        ("dataset-and-model", dataset),
        ("allocation-solve", allocation_solve),
        ("policy-dominance", dominance),
        ("experiment1-closed-loop", experiment1),
        ("brute-force-oracle", brute_force),
        ("limit-behavior", limits),
        ("experiment2-ordering", experiment2),
        ("cli-determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed > 0 {
        std::process::exit(1);
    }
}
