//! Live participant sessions: a forward-only state machine with server-side timing.
//!
//! Every operation takes the current time in milliseconds, so the caller owns
//! the clock, and appends the events it produced to a sink. Testing answers are
//! logged as [`TrialRecord`] lines that the harness aggregator reads directly.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::Label;
use crate::data::{human_view, ConfidenceBin, RawStudentRecord};
use crate::harness::{
    aggregate_records, Design, Group, HarnessError, PoolItem, SelfConfidence, SessionPlan, StratifiedMetrics,
    TrialRecord, TrialSpec,
};
use crate::seed;

pub const MS_PER_SECOND: f64 = 1000.0;

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Hand-driven clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("session `{0}` has expired")]
    Gone(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("advance blocked: {remaining_seconds} s remaining")]
    Blocked { remaining_seconds: f64 },
    #[error("configuration error: {0}")]
    Config(String),
}

impl From<HarnessError> for SessionError {
    fn from(e: HarnessError) -> Self {
        SessionError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Testing,
    Survey,
    Done,
}

/// Wire form of a binary outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl From<Label> for Verdict {
    fn from(l: Label) -> Self {
        if l.is_one() {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl From<Verdict> for Label {
    fn from(v: Verdict) -> Self {
        Label::from_bool(v == Verdict::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveTrial {
    pub spec: TrialSpec,
    pub display: BTreeMap<String, String>,
}

/// Trials served to live participants: practice items plus the fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveStudy {
    pub design: Design,
    pub groups: Vec<Group>,
    /// Display table per testing trial id.
    pub displays: Vec<BTreeMap<String, String>>,
    pub training: Vec<LiveTrial>,
    pub training_seconds: f64,
    pub expiry_ms: u64,
}

impl LiveStudy {
    /// Practice items are pool entries outside the design, drawn with `seed`.
    pub fn new(
        design: Design,
        pool: &[PoolItem],
        records: &[RawStudentRecord],
        training_trials: usize,
        training_seconds: f64,
        expiry_minutes: u64,
        seed: u64,
    ) -> Result<Self> {
        let display_of = |index: usize| -> Result<BTreeMap<String, String>> {
            records
                .get(index)
                .map(human_view::describe)
                .ok_or_else(|| SessionError::Config(format!("trial refers to missing record {index}")))
        };
        let displays = design
            .trials
            .iter()
            .map(|t| display_of(t.pool_index))
            .collect::<Result<Vec<_>>>()?;
        let used: std::collections::BTreeSet<usize> = design.trials.iter().map(|t| t.pool_index).collect();
        let mut spare: Vec<&PoolItem> = pool.iter().filter(|p| !used.contains(&p.index)).collect();
        if spare.len() < training_trials {
            return Err(SessionError::Config(format!(
                "{training_trials} practice trials requested, {} pool items left",
                spare.len()
            )));
        }
        rand::seq::SliceRandom::shuffle(spare.as_mut_slice(), &mut seed::rng(seed));
        let training = spare[..training_trials]
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(LiveTrial {
                    spec: TrialSpec {
                        id: i as u32,
                        pool_index: p.index,
                        features: p.features.clone(),
                        true_label: p.label,
                        advice: p.advice(design.confidence_threshold, false),
                        probe: false,
                        stratum: "training".into(),
                    },
                    display: display_of(p.index)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !(training_seconds >= 0.0) || !training_seconds.is_finite() {
            return Err(SessionError::Config(format!("training seconds must be nonnegative, got {training_seconds}")));
        }
        Ok(Self {
            groups: design.groups(),
            design,
            displays,
            training,
            training_seconds,
            expiry_ms: expiry_minutes * 60_000,
        })
    }

    fn testing_sequence(&self, plan: &SessionPlan) -> Vec<(u32, f64)> {
        plan.sequence().collect()
    }
}

/// Uniform seeded draw over `groups`.
pub fn assign_group(groups: &[Group], seed: u64) -> Group {
    groups[seed::rng(seed).random_range(0..groups.len())]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnswer {
    pub decision: Verdict,
    pub self_confidence: SelfConfidence,
    #[serde(default)]
    pub client_elapsed_ms: Option<u64>,
    pub server_elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveTrial {
    pub trial_id: u32,
    pub allocated_seconds: f64,
    pub dispatched_ms: u64,
    #[serde(default)]
    pub answer: Option<StoredAnswer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUsage {
    Never,
    Rarely,
    Sometimes,
    Often,
    Always,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyResponse {
    /// How often the participant used the entire allocated time.
    pub used_full_time: TimeUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSubmission {
    pub trial_id: u32,
    pub decision: Verdict,
    #[serde(default)]
    pub self_confidence: Option<SelfConfidence>,
    #[serde(default)]
    pub client_elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiView {
    pub prediction: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct_answer: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai_prediction: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub session: String,
    pub phase: Phase,
    pub index: usize,
    pub count: usize,
    pub trial_id: u32,
    pub features: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai: Option<AiView>,
    pub allocated_seconds: f64,
    pub elapsed_seconds: f64,
    pub remaining_seconds: f64,
    pub answered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub session: String,
    pub trial_id: u32,
    pub server_elapsed_seconds: f64,
    pub remaining_seconds: f64,
    pub can_advance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceAck {
    pub session: String,
    pub phase: Phase,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session: String,
    pub group: Group,
    pub phase: Phase,
    pub cursor: usize,
    pub training_trials: usize,
    pub testing_trials: usize,
    pub created_ms: u64,
    pub updated_ms: u64,
}

/// One line of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Created {
        session: String,
        group: Group,
        participant: u64,
        at_ms: u64,
    },
    Dispatched {
        session: String,
        phase: Phase,
        trial_id: u32,
        allocated_seconds: f64,
        at_ms: u64,
    },
    Answered {
        session: String,
        phase: Phase,
        trial_id: u32,
        decision: Verdict,
        self_confidence: SelfConfidence,
        server_elapsed_ms: u64,
        #[serde(default)]
        client_elapsed_ms: Option<u64>,
        at_ms: u64,
    },
    Trial {
        record: TrialRecord,
    },
    Advanced {
        session: String,
        phase: Phase,
        trial_id: u32,
        at_ms: u64,
    },
    Phase {
        session: String,
        phase: Phase,
        at_ms: u64,
    },
    Survey {
        session: String,
        response: SurveyResponse,
        at_ms: u64,
    },
    Expired {
        session: String,
        at_ms: u64,
    },
}

impl LogEvent {
    pub fn session(&self) -> &str {
        match self {
            LogEvent::Created { session, .. }
            | LogEvent::Dispatched { session, .. }
            | LogEvent::Answered { session, .. }
            | LogEvent::Advanced { session, .. }
            | LogEvent::Phase { session, .. }
            | LogEvent::Survey { session, .. }
            | LogEvent::Expired { session, .. } => session,
            LogEvent::Trial { record } => &record.session,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log event serializes");
        s.push('\n');
        s
    }
}

/// Testing-phase records in a log, optionally restricted to one session.
pub fn records_from_log(text: &str, session: Option<&str>) -> std::result::Result<Vec<TrialRecord>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: LogEvent = serde_json::from_str(line).map_err(|e| format!("log line {}: {e}", n + 1))?;
        if let LogEvent::Trial { record } = ev {
            if session.is_none_or(|s| s == record.session) {
                out.push(record);
            }
        }
    }
    Ok(out)
}

/// Metrics recomputed offline from log lines.
pub fn replay_metrics(text: &str, session: Option<&str>) -> std::result::Result<StratifiedMetrics, String> {
    Ok(aggregate_records(&records_from_log(text, session)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub group: Group,
    pub participant: u64,
    pub plan: SessionPlan,
    pub phase: Phase,
    /// Next trial index within the current phase.
    pub cursor: usize,
    #[serde(default)]
    pub active: Option<ActiveTrial>,
    #[serde(default)]
    pub records: Vec<TrialRecord>,
    #[serde(default)]
    pub survey: Option<SurveyResponse>,
    pub created_ms: u64,
    pub updated_ms: u64,
    #[serde(default)]
    pub expired: bool,
}

fn secs(ms: u64) -> f64 {
    ms as f64 / MS_PER_SECOND
}

fn allocated_ms(seconds: f64) -> u64 {
    (seconds * MS_PER_SECOND).ceil() as u64
}

impl Session {
    /// New session for `participant`; the group is forced or drawn from `assignment_seed`.
    pub fn create(
        study: &LiveStudy,
        id: String,
        participant: u64,
        assignment_seed: u64,
        forced: Option<Group>,
        now_ms: u64,
        log: &mut Vec<LogEvent>,
    ) -> Result<Self> {
        if study.groups.is_empty() {
            return Err(SessionError::Config("the study has no groups".into()));
        }
        let group = match forced {
            Some(g) if !study.groups.contains(&g) => {
                return Err(SessionError::Validation(format!("group {g} is not part of this study")))
            }
            Some(g) => g,
            None => assign_group(&study.groups, assignment_seed),
        };
        let plan = study.design.plan(group, participant)?;
        let phase = if study.training.is_empty() {
            Phase::Testing
        } else {
            Phase::Training
        };
        log.push(LogEvent::Created {
            session: id.clone(),
            group,
            participant,
            at_ms: now_ms,
        });
        if phase == Phase::Testing {
            log.push(LogEvent::Phase {
                session: id.clone(),
                phase,
                at_ms: now_ms,
            });
        }
        Ok(Self {
            id,
            group,
            participant,
            plan,
            phase,
            cursor: 0,
            active: None,
            records: Vec::new(),
            survey: None,
            created_ms: now_ms,
            updated_ms: now_ms,
            expired: false,
        })
    }

    pub fn status(&self, study: &LiveStudy) -> SessionStatus {
        SessionStatus {
            session: self.id.clone(),
            group: self.group,
            phase: self.phase,
            cursor: self.cursor,
            training_trials: study.training.len(),
            testing_trials: self.plan.len(),
            created_ms: self.created_ms,
            updated_ms: self.updated_ms,
        }
    }

    fn check_live(&mut self, study: &LiveStudy, now_ms: u64, log: &mut Vec<LogEvent>) -> Result<()> {
        if self.expired {
            return Err(SessionError::Gone(self.id.clone()));
        }
        if self.phase != Phase::Done && now_ms.saturating_sub(self.updated_ms) > study.expiry_ms {
            self.expired = true;
            log.push(LogEvent::Expired {
                session: self.id.clone(),
                at_ms: now_ms,
            });
            return Err(SessionError::Gone(self.id.clone()));
        }
        Ok(())
    }

    fn phase_len(&self, study: &LiveStudy) -> usize {
        match self.phase {
            Phase::Training => study.training.len(),
            Phase::Testing => self.plan.len(),
            _ => 0,
        }
    }

    fn spec<'a>(&self, study: &'a LiveStudy, trial_id: u32) -> &'a TrialSpec {
        match self.phase {
            Phase::Training => &study.training[trial_id as usize].spec,
            _ => study.design.trial(trial_id),
        }
    }

    fn feedback(&self, spec: &TrialSpec) -> Option<Feedback> {
        (self.phase == Phase::Training).then(|| Feedback {
            correct_answer: spec.true_label.into(),
            ai_prediction: self.group.shows_ai().then(|| spec.shown().into()),
        })
    }

    fn payload(&self, study: &LiveStudy, active: &ActiveTrial, now_ms: u64) -> TrialPayload {
        let spec = self.spec(study, active.trial_id);
        let features = match self.phase {
            Phase::Training => study.training[active.trial_id as usize].display.clone(),
            _ => study.displays[active.trial_id as usize].clone(),
        };
        let elapsed = now_ms.saturating_sub(active.dispatched_ms);
        let remaining = allocated_ms(active.allocated_seconds).saturating_sub(elapsed);
        TrialPayload {
            session: self.id.clone(),
            phase: self.phase,
            index: self.cursor,
            count: self.phase_len(study),
            trial_id: active.trial_id,
            features,
            ai: self.group.shows_ai().then(|| AiView {
                prediction: spec.shown().into(),
                confidence: self
                    .group
                    .shows_confidence()
                    .then(|| ConfidenceBin::label(spec.bin()).to_string()),
            }),
            allocated_seconds: active.allocated_seconds,
            elapsed_seconds: secs(elapsed),
            remaining_seconds: secs(remaining),
            answered: active.answer.is_some(),
            feedback: active.answer.as_ref().and_then(|_| self.feedback(spec)),
        }
    }

    /// Current trial, dispatching the next one if none is active.
    pub fn next_trial(&mut self, study: &LiveStudy, now_ms: u64, log: &mut Vec<LogEvent>) -> Result<TrialPayload> {
        self.check_live(study, now_ms, log)?;
        if !matches!(self.phase, Phase::Training | Phase::Testing) {
            return Err(SessionError::State(format!("no trials in the {:?} phase", self.phase)));
        }
        if self.active.is_none() {
            let (trial_id, allocated_seconds) = match self.phase {
                Phase::Training => (self.cursor as u32, study.training_seconds),
                _ => study.testing_sequence(&self.plan)[self.cursor],
            };
            log.push(LogEvent::Dispatched {
                session: self.id.clone(),
                phase: self.phase,
                trial_id,
                allocated_seconds,
                at_ms: now_ms,
            });
            self.active = Some(ActiveTrial {
                trial_id,
                allocated_seconds,
                dispatched_ms: now_ms,
                answer: None,
            });
            self.updated_ms = now_ms;
        }
        let active = self.active.as_ref().expect("dispatched");
        Ok(self.payload(study, active, now_ms))
    }

    /// Records an answer once; later submissions for the same trial conflict.
    pub fn submit_answer(
        &mut self,
        study: &LiveStudy,
        sub: &AnswerSubmission,
        now_ms: u64,
        log: &mut Vec<LogEvent>,
    ) -> Result<AnswerAck> {
        self.check_live(study, now_ms, log)?;
        let phase = self.phase;
        let active = match &self.active {
            Some(a) if matches!(phase, Phase::Training | Phase::Testing) => a.clone(),
            _ => return Err(SessionError::State("no trial has been dispatched".into())),
        };
        if active.trial_id != sub.trial_id {
            return Err(SessionError::State(format!(
                "answer for trial {} but trial {} is active",
                sub.trial_id, active.trial_id
            )));
        }
        if active.answer.is_some() {
            return Err(SessionError::Conflict(format!("trial {} was already answered", sub.trial_id)));
        }
        let self_confidence = match (phase, sub.self_confidence) {
            (Phase::Testing, None | Some(SelfConfidence::None)) => {
                return Err(SessionError::Validation("testing answers need a self-confidence level".into()))
            }
            (_, c) => c.unwrap_or(SelfConfidence::None),
        };
        let server_elapsed_ms = now_ms.saturating_sub(active.dispatched_ms);
        log.push(LogEvent::Answered {
            session: self.id.clone(),
            phase,
            trial_id: sub.trial_id,
            decision: sub.decision,
            self_confidence,
            server_elapsed_ms,
            client_elapsed_ms: sub.client_elapsed_ms,
            at_ms: now_ms,
        });
        let spec = self.spec(study, sub.trial_id);
        if phase == Phase::Testing {
            let shown = self.group.shows_ai().then(|| spec.shown());
            let decision = Label::from(sub.decision);
            let record = TrialRecord {
                session: self.id.clone(),
                group: self.group,
                trial_id: sub.trial_id,
                allocated_seconds: active.allocated_seconds,
                decision,
                true_label: spec.true_label,
                shown,
                ai_prediction: spec.shown(),
                bin: spec.bin(),
                probe: spec.probe,
                correct: decision == spec.true_label,
                agree: shown.map(|s| s == decision),
                elapsed_seconds: secs(server_elapsed_ms),
                client_elapsed_ms: sub.client_elapsed_ms,
                self_confidence,
            };
            log.push(LogEvent::Trial { record: record.clone() });
            self.records.push(record);
        }
        let feedback = self.feedback(spec);
        let remaining = allocated_ms(active.allocated_seconds).saturating_sub(server_elapsed_ms);
        self.active.as_mut().expect("active").answer = Some(StoredAnswer {
            decision: sub.decision,
            self_confidence,
            client_elapsed_ms: sub.client_elapsed_ms,
            server_elapsed_ms,
        });
        self.updated_ms = now_ms;
        Ok(AnswerAck {
            session: self.id.clone(),
            trial_id: sub.trial_id,
            server_elapsed_seconds: secs(server_elapsed_ms),
            remaining_seconds: secs(remaining),
            can_advance: remaining == 0,
            feedback,
        })
    }

    /// Moves past an answered trial once its allocated time has elapsed.
    pub fn advance(&mut self, study: &LiveStudy, now_ms: u64, log: &mut Vec<LogEvent>) -> Result<AdvanceAck> {
        self.check_live(study, now_ms, log)?;
        let active = match &self.active {
            Some(a) => a,
            None => return Err(SessionError::State("no trial is active".into())),
        };
        if active.answer.is_none() {
            return Err(SessionError::State(format!("trial {} has not been answered", active.trial_id)));
        }
        let elapsed = now_ms.saturating_sub(active.dispatched_ms);
        let needed = allocated_ms(active.allocated_seconds);
        if elapsed < needed {
            return Err(SessionError::Blocked {
                remaining_seconds: secs(needed - elapsed),
            });
        }
        log.push(LogEvent::Advanced {
            session: self.id.clone(),
            phase: self.phase,
            trial_id: active.trial_id,
            at_ms: now_ms,
        });
        self.active = None;
        self.cursor += 1;
        if self.cursor >= self.phase_len(study) {
            self.phase = match self.phase {
                Phase::Training => Phase::Testing,
                _ => Phase::Survey,
            };
            self.cursor = 0;
            log.push(LogEvent::Phase {
                session: self.id.clone(),
                phase: self.phase,
                at_ms: now_ms,
            });
        }
        self.updated_ms = now_ms;
        Ok(AdvanceAck {
            session: self.id.clone(),
            phase: self.phase,
            cursor: self.cursor,
        })
    }

    pub fn submit_survey(
        &mut self,
        study: &LiveStudy,
        response: SurveyResponse,
        now_ms: u64,
        log: &mut Vec<LogEvent>,
    ) -> Result<SessionStatus> {
        self.check_live(study, now_ms, log)?;
        if self.phase != Phase::Survey {
            return Err(SessionError::State(format!("survey not open in the {:?} phase", self.phase)));
        }
        log.push(LogEvent::Survey {
            session: self.id.clone(),
            response: response.clone(),
            at_ms: now_ms,
        });
        log.push(LogEvent::Phase {
            session: self.id.clone(),
            phase: Phase::Done,
            at_ms: now_ms,
        });
        self.survey = Some(response);
        self.phase = Phase::Done;
        self.updated_ms = now_ms;
        Ok(self.status(study))
    }

    /// Metrics for a completed session.
    pub fn summary(&self) -> Result<StratifiedMetrics> {
        if self.phase != Phase::Done {
            return Err(SessionError::State(format!("session is in the {:?} phase", self.phase)));
        }
        Ok(aggregate_records(&self.records))
    }
}

/// Re-applies one logged event to the session table.
///
/// Events that only echo state (`trial`, `phase`) are ignored; the rest replay
/// the original operation at its logged time, so the result matches the live
/// state exactly.
pub fn apply_event(study: &LiveStudy, sessions: &mut BTreeMap<String, Session>, event: &LogEvent) -> Result<()> {
    let mut sink = Vec::new();
    let id = event.session().to_string();
    if let LogEvent::Created {
        group,
        participant,
        at_ms,
        ..
    } = event
    {
        let s = Session::create(study, id.clone(), *participant, 0, Some(*group), *at_ms, &mut sink)?;
        sessions.insert(id, s);
        return Ok(());
    }
    let s = sessions.get_mut(&id).ok_or_else(|| SessionError::NotFound(id.clone()))?;
    match event {
        LogEvent::Dispatched { at_ms, .. } => {
            s.next_trial(study, *at_ms, &mut sink)?;
        }
        LogEvent::Answered {
            trial_id,
            decision,
            self_confidence,
            client_elapsed_ms,
            at_ms,
            ..
        } => {
            let sub = AnswerSubmission {
                trial_id: *trial_id,
                decision: *decision,
                self_confidence: Some(*self_confidence),
                client_elapsed_ms: *client_elapsed_ms,
            };
            s.submit_answer(study, &sub, *at_ms, &mut sink)?;
        }
        LogEvent::Advanced { at_ms, .. } => {
            s.advance(study, *at_ms, &mut sink)?;
        }
        LogEvent::Survey { response, at_ms, .. } => {
            s.submit_survey(study, response.clone(), *at_ms, &mut sink)?;
        }
        LogEvent::Expired { .. } => s.expired = true,
        LogEvent::Created { .. } | LogEvent::Trial { .. } | LogEvent::Phase { .. } => {}
    }
    Ok(())
}

pub const CREATE_KIND: &str = "create_session";
pub const STATUS_KIND: &str = "session_status";
pub const TRIAL_KIND: &str = "trial";
pub const ANSWER_KIND: &str = "answer";
pub const ANSWER_ACK_KIND: &str = "answer_ack";
pub const ADVANCE_KIND: &str = "advance";
pub const ADVANCE_ACK_KIND: &str = "advance_ack";
pub const SURVEY_KIND: &str = "survey";
pub const HEALTH_KIND: &str = "health";
pub const ERROR_KIND: &str = "error";

/// Body of `POST /sessions`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Participant number; defaults to a server counter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<u64>,
    /// Assignment seed; defaults to one derived from the run seed and participant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Administrative override of the random assignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
}

/// Body of `POST /sessions/{id}/advance`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
    pub groups: Vec<Group>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable code: `not_found`, `state`, `conflict`, `gone`, `validation`, `blocked` or `config`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_seconds: Option<f64>,
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NotFound(_) => "not_found",
            SessionError::State(_) => "state",
            SessionError::Conflict(_) => "conflict",
            SessionError::Gone(_) => "gone",
            SessionError::Validation(_) => "validation",
            SessionError::Blocked { .. } => "blocked",
            SessionError::Config(_) => "config",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
            remaining_seconds: match self {
                SessionError::Blocked { remaining_seconds } => Some(*remaining_seconds),
                _ => None,
            },
        }
    }
}
