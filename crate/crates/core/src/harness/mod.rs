//! Seeded Monte Carlo replications of both experiments.

mod metrics;
mod plan;
pub mod report;

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::AllocationError;
use crate::bias::{sample_decision, Agent, BiasError};
use crate::response::BetaSchedule;
use crate::seed;

pub use metrics::*;
pub use plan::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("not enough pool items for {interval}: need {needed}, have {available}")]
    Pool {
        interval: String,
        needed: usize,
        available: usize,
    },
    #[error("no calibrated beta schedule for group {0}")]
    MissingCalibration(Group),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] BiasError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Anchoring schedule per AI-showing group.
pub type Schedules = BTreeMap<Group, BetaSchedule>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub groups: Vec<Group>,
    pub sessions: usize,
    pub seed: u64,
    pub keep_records: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: StratifiedMetrics,
    /// Present when requested; sessions in order, trials in presentation order.
    pub records: Option<Vec<TrialRecord>>,
}

fn group_index(g: Group) -> u64 {
    match g {
        Group::TimeBlocks => 0,
        Group::HumanOnly => 1,
        Group::Constant => 2,
        Group::Random => 3,
        Group::Confidence => 4,
        Group::ConfidenceExplained => 5,
    }
}

pub fn session_id(group: Group, participant: u64) -> String {
    format!("{}-{participant:06}", group.name())
}

/// Self-reported confidence from the tercile of `|log ratio|` within the session.
fn assign_self_confidence(records: &mut [TrialRecord], strength: &[f64]) {
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| strength[a].total_cmp(&strength[b]).then(a.cmp(&b)));
    for (rank, &i) in order.iter().enumerate() {
        records[i].self_confidence = if rank * 3 < n {
            SelfConfidence::Low
        } else if rank * 3 < 2 * n {
            SelfConfidence::Medium
        } else {
            SelfConfidence::High
        };
    }
}

/// Simulates one participant of `group`.
pub fn simulate_session(
    design: &Design,
    agent: &Agent,
    schedule: Option<&BetaSchedule>,
    group: Group,
    participant: u64,
    root_seed: u64,
) -> Result<Vec<TrialRecord>, HarnessError> {
    let plan = design.plan(group, participant)?;
    let schedule = match (group.shows_ai(), schedule) {
        (true, None) => return Err(HarnessError::MissingCalibration(group)),
        (_, s) => s,
    };
    let mut rng = seed::rng(seed::derive_path(root_seed, &[group_index(group), participant]));
    let session = session_id(group, participant);
    let mut records = Vec::with_capacity(plan.len());
    let mut strength = Vec::with_capacity(plan.len());
    for (id, seconds) in plan.sequence() {
        let trial = design.trial(id);
        let obs = trial.observation(group.shows_ai());
        let profile = match schedule {
            Some(s) => agent.profile.with_beta(s.beta_at(seconds)),
            None => agent.profile,
        };
        let lr = agent.model.log_ratio(&profile, &obs)?;
        let d = sample_decision(lr, agent.temperature, &profile.tie_rule, obs.ai_prediction, &mut rng);
        strength.push(lr.abs());
        records.push(TrialRecord {
            session: session.clone(),
            group,
            trial_id: id,
            allocated_seconds: seconds,
            decision: d.label,
            true_label: trial.true_label,
            shown: obs.ai_prediction,
            ai_prediction: trial.advice.shown,
            bin: trial.bin(),
            probe: trial.probe,
            correct: d.label == trial.true_label,
            agree: obs.ai_prediction.map(|s| s == d.label),
            elapsed_seconds: seconds,
            client_elapsed_ms: None,
            self_confidence: SelfConfidence::None,
        });
    }
    assign_self_confidence(&mut records, &strength);
    Ok(records)
}

/// Runs `spec.sessions` simulated participants per group.
///
/// Sessions run in parallel with seeds derived from `(seed, group, index)`;
/// their summaries are folded in session order.
pub fn run(design: &Design, agent: &Agent, schedules: &Schedules, spec: &RunSpec) -> Result<RunOutput, HarnessError> {
    let mut groups = Vec::new();
    let mut all_records = spec.keep_records.then(Vec::new);
    for &g in &spec.groups {
        let schedule = schedules.get(&g);
        if g.shows_ai() && schedule.is_none() {
            return Err(HarnessError::MissingCalibration(g));
        }
        let per_session: Vec<Result<(SessionSummary, Option<Vec<TrialRecord>>), HarnessError>> = (0
            ..spec.sessions as u64)
            .into_par_iter()
            .map(|p| {
                let recs = simulate_session(design, agent, schedule, g, p, spec.seed)?;
                let summary = summarize_session(&recs);
                Ok((summary, spec.keep_records.then_some(recs)))
            })
            .collect();
        let mut acc = GroupAccumulator::new(g);
        for r in per_session {
            let (summary, recs) = r?;
            acc.add(&summary);
            if let (Some(all), Some(recs)) = (all_records.as_mut(), recs) {
                all.extend(recs);
            }
        }
        groups.push(acc.finish());
    }
    Ok(RunOutput {
        metrics: StratifiedMetrics { groups },
        records: all_records,
    })
}
