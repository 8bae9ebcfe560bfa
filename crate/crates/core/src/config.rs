//! Run configuration shared by the CLI and the session service.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::allocation::{ConfidenceSplit, RewardCurves, TimeBudget};
use crate::bias::{AgreementMode, TieRule};
use crate::data::{self, SubjectFilter, TrainConfig, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::response::{AgreementCurve, BetaGrid};
use crate::schema::{self, SchemaError};
use crate::synth::SynthConfig;

pub const CONFIG_KIND: &str = "run_config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stochastic step derives from it.
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub prepare: PrepareSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub curves: CurvesSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub session: SessionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Generated records; `seed` defaults to the run seed.
    Synthetic {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "d_math")]
        math_rows: usize,
        #[serde(default = "d_por")]
        portuguese_rows: usize,
        #[serde(default = "d_scale")]
        effect_scale: f64,
    },
    /// Semicolon-delimited files `student-mat.csv` / `student-por.csv`.
    Uci {
        dir: PathBuf,
        #[serde(default)]
        subjects: SubjectFilter,
    },
}

fn d_math() -> usize {
    395
}
fn d_por() -> usize {
    649
}
fn d_scale() -> f64 {
    SynthConfig::new(0).effect_scale
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic {
            seed: None,
            math_rows: d_math(),
            portuguese_rows: d_por(),
            effect_scale: d_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareSection {
    #[serde(default = "d_pass")]
    pub pass_threshold: i32,
    #[serde(default = "d_frac")]
    pub train_fraction: f64,
}

fn d_pass() -> i32 {
    10
}
fn d_frac() -> f64 {
    0.7
}

impl Default for PrepareSection {
    fn default() -> Self {
        Self {
            pass_threshold: d_pass(),
            train_fraction: d_frac(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_features")]
    pub features: Vec<String>,
    #[serde(default = "data::reduced_features")]
    pub reduced_features: Vec<String>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_threshold")]
    pub confidence_threshold: f64,
    /// Number of top-ranked features reported by `train`.
    #[serde(default = "d_top_k")]
    pub top_k: usize,
}

fn d_features() -> Vec<String> {
    data::STUDY_FEATURES.iter().map(|s| s.to_string()).collect()
}
fn d_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}
fn d_top_k() -> usize {
    10
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            features: d_features(),
            reduced_features: data::reduced_features(),
            train: TrainConfig::default(),
            confidence_threshold: d_threshold(),
            top_k: d_top_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    #[serde(default = "d_one")]
    pub alpha: f64,
    #[serde(default = "d_one")]
    pub gamma: f64,
    #[serde(default = "d_tau")]
    pub temperature: f64,
    #[serde(default = "d_one")]
    pub pseudocount: f64,
    /// Believed accuracy of the AI, used for both classes.
    #[serde(default = "d_belief")]
    pub ai_accuracy_belief: f64,
    #[serde(default)]
    pub tie_rule: TieRule,
}

fn d_one() -> f64 {
    1.0
}
fn d_tau() -> f64 {
    0.5
}
fn d_belief() -> f64 {
    crate::bias::ANNOUNCED_AI_ACCURACY
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 1.0,
            temperature: d_tau(),
            pseudocount: 1.0,
            ai_accuracy_belief: d_belief(),
            tie_rule: TieRule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Experiment1,
    Experiment2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub kind: ExperimentKind,
    #[serde(default = "d_sessions")]
    pub sessions: usize,
    #[serde(default = "d_per_trial")]
    pub per_trial_seconds: f64,
    #[serde(default = "d_tmin")]
    pub t_min: f64,
    #[serde(default = "d_human")]
    pub human_only_seconds: f64,
}

fn d_sessions() -> usize {
    1000
}
fn d_per_trial() -> f64 {
    17.5
}
fn d_tmin() -> f64 {
    10.0
}
fn d_human() -> f64 {
    25.0
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            sessions: d_sessions(),
            per_trial_seconds: d_per_trial(),
            t_min: d_tmin(),
            human_only_seconds: d_human(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSection {
    #[serde(default = "AgreementCurve::experiment1_default")]
    pub default: AgreementCurve,
    #[serde(default = "AgreementCurve::explained_default")]
    pub explained: AgreementCurve,
}

impl Default for CurvesSection {
    fn default() -> Self {
        Self {
            default: AgreementCurve::experiment1_default(),
            explained: AgreementCurve::explained_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default)]
    pub grid: BetaGrid,
    #[serde(default = "d_mode")]
    pub mode: AgreementMode,
}

fn d_mode() -> AgreementMode {
    AgreementMode::Exhaustive
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            grid: BetaGrid::default(),
            mode: d_mode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSource {
    Explicit {
        times: Vec<f64>,
        low: Vec<f64>,
        high: Vec<f64>,
    },
    /// Rewards implied by an agreement curve and per-bin AI accuracy.
    Agreement {
        curve: AgreementCurve,
        accuracy_low: f64,
        accuracy_high: f64,
        times: Vec<f64>,
    },
}

impl RewardSource {
    pub fn curves(&self) -> Result<RewardCurves, crate::allocation::AllocationError> {
        match self {
            RewardSource::Explicit { times, low, high } => RewardCurves::new(times.clone(), low.clone(), high.clone()),
            RewardSource::Agreement {
                curve,
                accuracy_low,
                accuracy_high,
                times,
            } => RewardCurves::from_agreement(curve, *accuracy_low, *accuracy_high, times),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    pub budget: TimeBudget,
    pub split: ConfidenceSplit,
    pub rewards: RewardSource,
    #[serde(default = "d_resolution")]
    pub grid_resolution: f64,
}

fn d_resolution() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Also write every simulated trial as line-delimited JSON.
    #[serde(default)]
    pub trial_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    /// Untimed practice trials shown before testing, with feedback.
    #[serde(default = "d_training")]
    pub training_trials: usize,
    #[serde(default)]
    pub training_seconds: f64,
    #[serde(default = "d_expiry")]
    pub expiry_minutes: u64,
    /// Sessions are snapshotted after this many logged events.
    #[serde(default = "d_snapshot")]
    pub snapshot_every: usize,
}

fn d_training() -> usize {
    5
}
fn d_expiry() -> u64 {
    120
}
fn d_snapshot() -> usize {
    200
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            training_trials: d_training(),
            training_seconds: 0.0,
            expiry_minutes: d_expiry(),
            snapshot_every: d_snapshot(),
        }
    }
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            data: DataSection::default(),
            prepare: PrepareSection::default(),
            model: ModelSection::default(),
            agent: AgentSection::default(),
            experiment: ExperimentSection::default(),
            curves: CurvesSection::default(),
            calibration: CalibrationSection::default(),
            allocation: None,
            output: OutputSection::default(),
            session: SessionSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        schema::from_document(CONFIG_KIND, text)
    }

    pub fn to_document(&self) -> String {
        schema::to_document(CONFIG_KIND, self).expect("config serializes")
    }

    pub fn synth_config(&self) -> Option<SynthConfig> {
        match &self.data {
            DataSection::Synthetic {
                seed,
                math_rows,
                portuguese_rows,
                effect_scale,
            } => Some(SynthConfig {
                seed: seed.unwrap_or(self.seed),
                math_rows: *math_rows,
                portuguese_rows: *portuguese_rows,
                effect_scale: *effect_scale,
            }),
            DataSection::Uci { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory_and_unknown_fields_rejected() {
        let missing = "{\"schema_version\": 1, \"kind\": \"run_config\"}";
        assert!(RunConfig::parse(missing).is_err());
        let unknown = "{\"schema_version\": 1, \"kind\": \"run_config\", \"seed\": 1, \"sede\": 2}";
        assert!(RunConfig::parse(unknown).is_err());
        let ok = "{\"schema_version\": 1, \"kind\": \"run_config\", \"seed\": 1}";
        assert_eq!(RunConfig::parse(ok).unwrap(), RunConfig::new(1));
    }

    #[test]
    fn document_round_trip() {
        let c = RunConfig::new(42);
        assert_eq!(RunConfig::parse(&c.to_document()).unwrap(), c);
    }
}
