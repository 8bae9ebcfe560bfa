//! End-to-end run: records, classifiers, simulated participants, metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocationError, TimeBudget};
use crate::bias::{
    Agent, AgreementMode, AiOutputTable, BiasError, BiasProfile, FeatureLikelihoodTable, Label, LabelPrior, LikelihoodModel,
    TrialSource, WeightedObservations,
};
use crate::config::{DataSection, ExperimentKind, RunConfig};
use crate::data::{self, human_view, DataError, LabelRule, LinearClassifier, PrepareConfig, PreparedDataset, RawStudentRecord};
use crate::harness::{self, probe_style_source, Design, Group, HarnessError, PoolItem, RunOutput, RunSpec, Schedules};
use crate::response::{calibrate_beta, BetaSchedule, CalibrationError};
use crate::seed;
use crate::session::{LiveStudy, SessionError};
use crate::synth;

/// Number of trials in an Experiment 2 session.
pub const EXPERIMENT2_TRIALS: u32 = 40;

const STREAM_SPLIT: u64 = 11;
const STREAM_TRAIN: u64 = 12;
const STREAM_DESIGN: u64 = 20;
const STREAM_RUN: u64 = 30;
const STREAM_PRACTICE: u64 = 40;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Budget(#[from] AllocationError),
    #[error(transparent)]
    Model(#[from] BiasError),
    #[error(transparent)]
    Harness(HarnessError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl From<HarnessError> for PipelineError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Allocation(a) => PipelineError::Budget(a),
            HarnessError::Model(m) => PipelineError::Model(m),
            HarnessError::Config(c) => PipelineError::Config(c),
            other => PipelineError::Harness(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn load_records(cfg: &RunConfig) -> Result<Vec<RawStudentRecord>> {
    match &cfg.data {
        DataSection::Synthetic { .. } => {
            let sc = cfg.synth_config().expect("synthetic section");
            Ok(synth::generate(&sc))
        }
        DataSection::Uci { dir, subjects } => Ok(data::ingest_dir(dir, *subjects)?),
    }
}

pub fn prepare_config(cfg: &RunConfig, features: &[String]) -> PrepareConfig {
    PrepareConfig {
        label_rule: LabelRule {
            pass_threshold: cfg.prepare.pass_threshold,
        },
        split_seed: seed::derive(cfg.seed, STREAM_SPLIT),
        train_fraction: cfg.prepare.train_fraction,
        features: features.to_vec(),
    }
}

/// A classifier with the split it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub data: PreparedDataset,
    pub model: LinearClassifier,
}

pub fn train_model(records: &[RawStudentRecord], cfg: &RunConfig, features: &[String]) -> Result<TrainedModel> {
    let data = data::prepare(records, &prepare_config(cfg, features))?;
    let model = data::train(&data, &cfg.model.train, seed::derive(cfg.seed, STREAM_TRAIN))?;
    Ok(TrainedModel { data, model })
}

/// Test rows of `trained` as candidate trials.
pub fn build_pool(records: &[RawStudentRecord], trained: &TrainedModel) -> Vec<PoolItem> {
    trained
        .data
        .test_rows
        .iter()
        .map(|&i| {
            let r = &records[i];
            PoolItem {
                index: i,
                features: human_view::encode(r),
                label: trained.data.label_rule.label(r),
                probability: trained.model.probability(r),
            }
        })
        .collect()
}

/// Naive Bayes participant fitted on the training rows.
pub fn fit_agent(records: &[RawStudentRecord], train_rows: &[usize], cfg: &RunConfig) -> Result<Agent> {
    let rule = LabelRule {
        pass_threshold: cfg.prepare.pass_threshold,
    };
    let rows: Vec<Vec<u32>> = train_rows.iter().map(|&i| human_view::encode(&records[i])).collect();
    let labels: Vec<_> = train_rows.iter().map(|&i| rule.label(&records[i])).collect();
    let ones = labels.iter().filter(|l| l.is_one()).count();
    if ones == 0 || ones == labels.len() {
        let only = if ones == 0 { Label::Zero } else { Label::One };
        return Err(DataError::SingleClass(only).into());
    }
    let features = FeatureLikelihoodTable::fit(
        &human_view::names(),
        &human_view::cardinalities(),
        &rows,
        &labels,
        cfg.agent.pseudocount,
    )?;
    let model = LikelihoodModel {
        prior: LabelPrior::new(ones as f64 / labels.len() as f64)?,
        features,
        ai: AiOutputTable::symmetric(cfg.agent.ai_accuracy_belief)?,
    };
    let profile = BiasProfile::new(cfg.agent.alpha, 0.0, cfg.agent.gamma, cfg.agent.tie_rule)?;
    Ok(Agent::new(profile, model, cfg.agent.temperature)?)
}

/// Records, the classifier driving the configured experiment, its pool and the agent.
#[derive(Debug, Clone)]
pub struct Study {
    pub records: Vec<RawStudentRecord>,
    pub trained: TrainedModel,
    pub pool: Vec<PoolItem>,
    pub agent: Agent,
}

pub fn experiment_features(cfg: &RunConfig) -> &[String] {
    match cfg.experiment.kind {
        ExperimentKind::Experiment1 => &cfg.model.features,
        ExperimentKind::Experiment2 => &cfg.model.reduced_features,
    }
}

pub fn study(cfg: &RunConfig) -> Result<Study> {
    let records = load_records(cfg)?;
    let trained = train_model(&records, cfg, experiment_features(cfg))?;
    let pool = build_pool(&records, &trained);
    let agent = fit_agent(&records, &trained.data.train_rows, cfg)?;
    Ok(Study {
        records,
        trained,
        pool,
        agent,
    })
}

pub fn experiment2_budget(cfg: &RunConfig) -> Result<TimeBudget> {
    Ok(TimeBudget::per_trial_budget(
        cfg.experiment.per_trial_seconds,
        EXPERIMENT2_TRIALS,
        cfg.experiment.t_min,
    )?)
}

pub fn build_design(cfg: &RunConfig, pool: &[PoolItem]) -> Result<Design> {
    let thr = cfg.model.confidence_threshold;
    let seed = seed::derive(cfg.seed, STREAM_DESIGN);
    Ok(match cfg.experiment.kind {
        ExperimentKind::Experiment1 => Design::experiment1(pool, thr, seed)?,
        ExperimentKind::Experiment2 => {
            Design::experiment2(pool, thr, &experiment2_budget(cfg)?, cfg.experiment.human_only_seconds, seed)?
        }
    })
}

/// Observations whose agreement rate the anchoring schedule is fitted to.
pub fn calibration_source(cfg: &RunConfig, design: &Design, pool: &[PoolItem]) -> Result<WeightedObservations> {
    let src = match cfg.experiment.kind {
        ExperimentKind::Experiment1 => design.probe_source(),
        ExperimentKind::Experiment2 => probe_style_source(pool, cfg.model.confidence_threshold),
    };
    src.ok_or_else(|| PipelineError::Config("no probe-style trials available for calibration".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Agreement of the unanchored agent (beta = 0) on the calibration trials.
    pub baseline_agreement: f64,
    pub default: BetaSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explained: Option<BetaSchedule>,
}

impl Calibration {
    pub fn schedules(&self, groups: &[Group]) -> Schedules {
        groups
            .iter()
            .filter(|g| g.shows_ai())
            .map(|&g| {
                let s = match (g, &self.explained) {
                    (Group::ConfidenceExplained, Some(e)) => e.clone(),
                    _ => self.default.clone(),
                };
                (g, s)
            })
            .collect()
    }
}

pub fn calibrate(cfg: &RunConfig, agent: &Agent, source: &dyn TrialSource) -> Result<Calibration> {
    let mode = cfg.calibration.mode;
    let baseline = agent.with_beta(0.0).agreement(source, mode)?.probability;
    let fit = |curve: &crate::response::AgreementCurve| {
        calibrate_beta(curve, agent, source, &cfg.calibration.grid, &curve.calibration_times(), mode)
    };
    let default = fit(&cfg.curves.default)?;
    let explained = match cfg.experiment.kind {
        ExperimentKind::Experiment1 => None,
        ExperimentKind::Experiment2 => Some(fit(&cfg.curves.explained)?),
    };
    Ok(Calibration {
        baseline_agreement: baseline,
        default,
        explained,
    })
}

/// Everything a simulation run produced.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub study: Study,
    pub design: Design,
    pub calibration: Calibration,
    pub output: RunOutput,
}

/// Study, design, calibration and `sessions` replications per group.
pub fn simulate(cfg: &RunConfig, keep_records: bool) -> Result<Simulation> {
    let study = study(cfg)?;
    let design = build_design(cfg, &study.pool)?;
    let source = calibration_source(cfg, &design, &study.pool)?;
    let calibration = calibrate(cfg, &study.agent, &source)?;
    let groups = design.groups();
    let spec = RunSpec {
        groups: groups.clone(),
        sessions: cfg.experiment.sessions,
        seed: seed::derive(cfg.seed, STREAM_RUN),
        keep_records,
    };
    let output = harness::run(&design, &study.agent, &calibration.schedules(&groups), &spec)?;
    Ok(Simulation {
        study,
        design,
        calibration,
        output,
    })
}

/// Agreement rate of `agent` anchored by `schedule` at `t` seconds.
pub fn agreement_at(
    agent: &Agent,
    schedule: &BetaSchedule,
    source: &dyn TrialSource,
    t: f64,
    mode: AgreementMode,
) -> Result<f64> {
    Ok(agent.with_beta(schedule.beta_at(t)).agreement(source, mode)?.probability)
}

/// Study served to live participants under the configured experiment.
pub fn live_study(cfg: &RunConfig) -> Result<LiveStudy> {
    let s = study(cfg)?;
    let design = build_design(cfg, &s.pool)?;
    Ok(LiveStudy::new(
        design,
        &s.pool,
        &s.records,
        cfg.session.training_trials,
        cfg.session.training_seconds,
        cfg.session.expiry_minutes,
        seed::derive(cfg.seed, STREAM_PRACTICE),
    )?)
}
