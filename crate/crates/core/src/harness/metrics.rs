//! Trial records and stratified accuracy / agreement metrics.
//!
//! Sessions are summarized into integer counts per cell; the group
//! aggregate only sums those counts (and their squares and cross products),
//! so folding is exact and independent of order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::bias::Label;
use crate::data::ConfidenceBin;

use super::plan::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfConfidence {
    Low,
    Medium,
    High,
    None,
}

/// One decision event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session: String,
    pub group: Group,
    pub trial_id: u32,
    pub allocated_seconds: f64,
    pub decision: Label,
    pub true_label: Label,
    /// Prediction shown, absent when the group sees no AI.
    pub shown: Option<Label>,
    /// Prediction the AI made for the trial, shown or not.
    pub ai_prediction: Label,
    pub bin: ConfidenceBin,
    pub probe: bool,
    pub correct: bool,
    /// `decision == shown`; absent when nothing was shown.
    pub agree: Option<bool>,
    pub elapsed_seconds: f64,
    #[serde(default)]
    pub client_elapsed_ms: Option<u64>,
    pub self_confidence: SelfConfidence,
}

impl TrialRecord {
    pub fn ai_correct(&self) -> bool {
        self.ai_prediction == self.true_label
    }
}

/// Confidence bin crossed with AI correctness, in plotting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stratum {
    LowWrong,
    HighWrong,
    HighCorrect,
    LowCorrect,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [
        Stratum::LowWrong,
        Stratum::HighWrong,
        Stratum::HighCorrect,
        Stratum::LowCorrect,
    ];

    pub fn of(bin: ConfidenceBin, ai_correct: bool) -> Self {
        match (bin, ai_correct) {
            (ConfidenceBin::Low, false) => Stratum::LowWrong,
            (ConfidenceBin::High, false) => Stratum::HighWrong,
            (ConfidenceBin::High, true) => Stratum::HighCorrect,
            (ConfidenceBin::Low, true) => Stratum::LowCorrect,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stratum::LowWrong => "C_L/ai_wrong",
            Stratum::HighWrong => "C_H/ai_wrong",
            Stratum::HighCorrect => "C_H/ai_correct",
            Stratum::LowCorrect => "C_L/ai_correct",
        }
    }

    pub fn ai_correct(self) -> bool {
        matches!(self, Stratum::HighCorrect | Stratum::LowCorrect)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CellKey {
    Overall,
    Stratum(Stratum),
    /// Trials at one allotted time, split into probe and unmodified.
    Time { millis: u64, probe: bool },
}

impl CellKey {
    pub fn time(seconds: f64, probe: bool) -> Self {
        CellKey::Time {
            millis: (seconds * 1000.0).round() as u64,
            probe,
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellKey::Overall => f.write_str("overall"),
            CellKey::Stratum(s) => f.write_str(s.name()),
            CellKey::Time { millis, probe } => write!(
                f,
                "time={}s/{}",
                *millis as f64 / 1000.0,
                if *probe { "probe" } else { "unmodified" }
            ),
        }
    }
}

impl FromStr for CellKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "overall" {
            return Ok(CellKey::Overall);
        }
        if let Some(st) = Stratum::ALL.iter().find(|st| st.name() == s) {
            return Ok(CellKey::Stratum(*st));
        }
        let rest = s.strip_prefix("time=").ok_or_else(|| format!("unknown cell `{s}`"))?;
        let (secs, kind) = rest.split_once("s/").ok_or_else(|| format!("unknown cell `{s}`"))?;
        let seconds: f64 = secs.parse().map_err(|_| format!("bad time in cell `{s}`"))?;
        let probe = match kind {
            "probe" => true,
            "unmodified" => false,
            _ => return Err(format!("unknown cell `{s}`")),
        };
        Ok(CellKey::time(seconds, probe))
    }
}

impl From<CellKey> for String {
    fn from(k: CellKey) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for CellKey {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellCounts {
    pub trials: u64,
    pub correct: u64,
    pub agreed: u64,
}

/// Per-session counts for every cell the session touched.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionSummary {
    pub shows_ai: bool,
    pub cells: BTreeMap<CellKey, CellCounts>,
}

pub fn summarize_session(records: &[TrialRecord]) -> SessionSummary {
    let mut s = SessionSummary {
        shows_ai: records.iter().any(|r| r.shown.is_some()),
        cells: BTreeMap::new(),
    };
    for st in Stratum::ALL {
        s.cells.insert(CellKey::Stratum(st), CellCounts::default());
    }
    s.cells.insert(CellKey::Overall, CellCounts::default());
    for r in records {
        let keys = [
            CellKey::Overall,
            CellKey::Stratum(Stratum::of(r.bin, r.ai_correct())),
            CellKey::time(r.allocated_seconds, r.probe),
        ];
        for k in keys {
            let c = s.cells.entry(k).or_default();
            c.trials += 1;
            c.correct += u64::from(r.correct);
            c.agreed += u64::from(r.agree == Some(true));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Moments {
    sessions: u64,
    n: u64,
    x: u64,
    xx: u64,
    nn: u64,
    xn: u64,
}

impl Moments {
    fn add(&mut self, n: u64, x: u64) {
        if n == 0 {
            return;
        }
        self.sessions += 1;
        self.n += n;
        self.x += x;
        self.xx += x * x;
        self.nn += n * n;
        self.xn += x * n;
    }

    fn ratio(&self) -> Option<f64> {
        (self.n > 0).then(|| self.x as f64 / self.n as f64)
    }

    /// Standard error of the pooled ratio from between-session variation.
    fn std_error(&self) -> Option<f64> {
        let p = self.ratio()?;
        if self.sessions < 2 {
            return None;
        }
        let s = self.sessions as f64;
        let ss = self.xx as f64 - 2.0 * p * self.xn as f64 + p * p * self.nn as f64;
        let mean_n = self.n as f64 / s;
        Some((ss.max(0.0) / (s * (s - 1.0))).sqrt() / mean_n)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct CellAccumulator {
    accuracy: Moments,
    agreement: Moments,
}

/// Streaming aggregate for one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAccumulator {
    pub group: Group,
    sessions: u64,
    shows_ai: bool,
    cells: BTreeMap<CellKey, CellAccumulator>,
}

impl GroupAccumulator {
    pub fn new(group: Group) -> Self {
        let mut cells = BTreeMap::new();
        cells.insert(CellKey::Overall, CellAccumulator::default());
        for st in Stratum::ALL {
            cells.insert(CellKey::Stratum(st), CellAccumulator::default());
        }
        Self {
            group,
            sessions: 0,
            shows_ai: group.shows_ai(),
            cells,
        }
    }

    pub fn add(&mut self, summary: &SessionSummary) {
        self.sessions += 1;
        for (k, c) in &summary.cells {
            let acc = self.cells.entry(*k).or_default();
            acc.accuracy.add(c.trials, c.correct);
            acc.agreement.add(c.trials, c.agreed);
        }
    }

    pub fn finish(&self) -> GroupMetrics {
        let cells = self
            .cells
            .iter()
            .map(|(k, acc)| CellMetrics {
                cell: *k,
                sessions: acc.accuracy.sessions,
                trials: acc.accuracy.n,
                correct: acc.accuracy.x,
                agreed: self.shows_ai.then_some(acc.agreement.x),
                accuracy: acc.accuracy.ratio(),
                accuracy_se: acc.accuracy.std_error(),
                agreement: self.shows_ai.then(|| acc.agreement.ratio()),
                agreement_se: self.shows_ai.then(|| acc.agreement.std_error()),
            })
            .collect();
        GroupMetrics {
            group: self.group,
            sessions: self.sessions,
            cells,
        }
    }
}

fn double_option<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub cell: CellKey,
    /// Sessions contributing at least one trial to the cell.
    pub sessions: u64,
    pub trials: u64,
    pub correct: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreed: Option<u64>,
    /// `null` for an empty cell.
    pub accuracy: Option<f64>,
    pub accuracy_se: Option<f64>,
    /// Omitted when the group sees no AI; `null` for an empty cell.
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Option<f64>>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub agreement_se: Option<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub sessions: u64,
    pub cells: Vec<CellMetrics>,
}

impl GroupMetrics {
    pub fn cell(&self, key: CellKey) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.cell == key)
    }

    pub fn stratum(&self, s: Stratum) -> &CellMetrics {
        self.cell(CellKey::Stratum(s)).expect("strata are always present")
    }

    /// Pooled accuracy over the two AI-wrong strata.
    pub fn ai_wrong_accuracy(&self) -> Option<(f64, u64)> {
        let a = self.stratum(Stratum::LowWrong);
        let b = self.stratum(Stratum::HighWrong);
        let n = a.trials + b.trials;
        (n > 0).then(|| ((a.correct + b.correct) as f64 / n as f64, n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedMetrics {
    pub groups: Vec<GroupMetrics>,
}

impl StratifiedMetrics {
    pub fn group(&self, g: Group) -> Option<&GroupMetrics> {
        self.groups.iter().find(|m| m.group == g)
    }
}

/// Aggregates records of complete sessions (any order of lines) into metrics.
///
/// Sessions are folded in order of first appearance.
pub fn aggregate_records(records: &[TrialRecord]) -> StratifiedMetrics {
    let mut order: Vec<&str> = Vec::new();
    let mut by_session: BTreeMap<&str, Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        let e = by_session.entry(r.session.as_str()).or_insert_with(|| {
            order.push(r.session.as_str());
            Vec::new()
        });
        e.push(r.clone());
    }
    let mut groups: BTreeMap<Group, GroupAccumulator> = BTreeMap::new();
    for s in order {
        let recs = &by_session[s];
        let g = recs[0].group;
        groups
            .entry(g)
            .or_insert_with(|| GroupAccumulator::new(g))
            .add(&summarize_session(recs));
    }
    StratifiedMetrics {
        groups: groups.values().map(|g| g.finish()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_keys_round_trip() {
        for k in [
            CellKey::Overall,
            CellKey::Stratum(Stratum::HighWrong),
            CellKey::time(17.5, true),
            CellKey::time(10.0, false),
        ] {
            assert_eq!(k.to_string().parse::<CellKey>().unwrap(), k);
        }
        assert_eq!(CellKey::time(17.5, true).to_string(), "time=17.5s/probe");
    }

    #[test]
    fn moments_match_direct_formula() {
        let mut m = Moments::default();
        let data = [(10u64, 7u64), (10, 5), (10, 9)];
        for (n, x) in data {
            m.add(n, x);
        }
        let p = 21.0 / 30.0;
        let means = [0.7, 0.5, 0.9];
        let var = means.iter().map(|v| (v - p) * (v - p)).sum::<f64>() / 2.0;
        assert!((m.std_error().unwrap() - (var / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_and_hidden_fields_serialize_distinctly() {
        let mut acc = GroupAccumulator::new(Group::HumanOnly);
        acc.add(&SessionSummary::default());
        let text = serde_json::to_string(&acc.finish()).unwrap();
        assert!(text.contains("\"accuracy\":null"));
        assert!(!text.contains("agreement"));
        let mut acc = GroupAccumulator::new(Group::Constant);
        acc.add(&SessionSummary::default());
        let m = acc.finish();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"agreement\":null"));
        let back: GroupMetrics = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
