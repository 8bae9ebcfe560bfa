//! Expected team reward and time allocation under a total budget.
//!
//! Per trial, the team is right when the human agrees with a correct AI or
//! disagrees with a wrong one:
//!
//! ```text
//! E[R] = p_a|r · P(AI right) + (1 - p_a|w) · (1 - P(AI right))
//! ```
//!
//! With AI confidence split into a low bin `C_L` (probability `p_L`) and a
//! high bin `C_H`, the confidence-based policy gives high-confidence trials
//! the minimum time and spends the rest of the budget on low-confidence ones.

use std::fmt::{self, Write as _};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{interpolate, AgreementCurve};
use crate::seed;

pub const BUDGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocationError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate confidence split: p_L = 0 leaves no low-confidence trials to receive the budget slack")]
    DegenerateSplit,
    #[error(
        "t_L = {t_low} exceeds the cap {cap}; a minimum time of at least {feasible_t_min} keeps t_L within the cap"
    )]
    Cap {
        t_low: f64,
        cap: f64,
        feasible_t_min: f64,
    },
    #[error("policy violates the budget: expected time per trial {actual}, budget {expected} ({identity})")]
    Budget {
        expected: f64,
        actual: f64,
        identity: String,
    },
}

pub type Result<T> = std::result::Result<T, AllocationError>;

fn probability(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(AllocationError::Parameter(format!("{name} must lie in [0, 1], got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget")]
pub struct TimeBudget {
    pub total: f64,
    pub trials: u32,
    pub t_min: f64,
    pub t_cap: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBudget {
    total: f64,
    trials: u32,
    t_min: f64,
    #[serde(default)]
    t_cap: Option<f64>,
}

impl TryFrom<RawBudget> for TimeBudget {
    type Error = AllocationError;

    fn try_from(r: RawBudget) -> Result<Self> {
        TimeBudget::new(r.total, r.trials, r.t_min, r.t_cap)
    }
}

impl TimeBudget {
    pub fn new(total: f64, trials: u32, t_min: f64, t_cap: Option<f64>) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(AllocationError::Parameter(format!("total time must be positive, got {total}")));
        }
        if trials == 0 {
            return Err(AllocationError::Parameter("at least one trial required".into()));
        }
        let per = total / trials as f64;
        if !(t_min >= 0.0) || t_min > per {
            return Err(AllocationError::Parameter(format!(
                "t_min must lie in [0, T/N = {per}], got {t_min}"
            )));
        }
        if let Some(cap) = t_cap {
            if !(cap >= per) {
                return Err(AllocationError::Parameter(format!("t_cap {cap} is below T/N = {per}")));
            }
        }
        Ok(Self {
            total,
            trials,
            t_min,
            t_cap,
        })
    }

    /// Budget from an average per-trial time.
    pub fn per_trial_budget(per_trial: f64, trials: u32, t_min: f64) -> Result<Self> {
        Self::new(per_trial * trials as f64, trials, t_min, None)
    }

    pub fn per_trial(&self) -> f64 {
        self.total / self.trials as f64
    }
}

/// `p_a|r · p + (1 - p_a|w) · (1 - p)`.
pub fn expected_reward(p_ai_correct: f64, p_agree_right: f64, p_agree_wrong: f64) -> Result<f64> {
    let p = probability("P(AI correct)", p_ai_correct)?;
    let r = probability("p_a|r", p_agree_right)?;
    let w = probability("p_a|w", p_agree_wrong)?;
    Ok(r * p + (1.0 - w) * (1.0 - p))
}

pub fn expected_reward_given_time(t: f64, curve: &AgreementCurve, p_ai_correct: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(AllocationError::Parameter(format!("time must be nonnegative, got {t}")));
    }
    expected_reward(p_ai_correct, curve.agree_right(t), curve.agree_wrong(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Probability of the helpful response on this branch (agree when right, disagree when wrong).
    pub response: f64,
    /// Probability of the branch within the bin.
    pub weight: f64,
}

/// `P(agree | right) P(right | bin) + P(disagree | wrong) P(wrong | bin)`.
pub fn decompose_conditional_accuracy(right: Branch, wrong: Branch) -> Result<f64> {
    for (n, v) in [
        ("agreement given right", right.response),
        ("P(right | bin)", right.weight),
        ("disagreement given wrong", wrong.response),
        ("P(wrong | bin)", wrong.weight),
    ] {
        probability(n, v)?;
    }
    if (right.weight + wrong.weight - 1.0).abs() > 1e-12 {
        return Err(AllocationError::Parameter(format!(
            "branch weights sum to {}",
            right.weight + wrong.weight
        )));
    }
    Ok(right.response * right.weight + wrong.response * wrong.weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSplit")]
pub struct ConfidenceSplit {
    pub p_low: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    p_low: f64,
}

impl TryFrom<RawSplit> for ConfidenceSplit {
    type Error = AllocationError;

    fn try_from(r: RawSplit) -> Result<Self> {
        ConfidenceSplit::new(r.p_low)
    }
}

impl ConfidenceSplit {
    pub fn new(p_low: f64) -> Result<Self> {
        probability("p_L", p_low)?;
        Ok(Self { p_low })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bin {
    Low,
    High,
}

/// Conditional team reward per confidence bin on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurves")]
pub struct RewardCurves {
    times: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurves {
    times: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<RawCurves> for RewardCurves {
    type Error = AllocationError;

    fn try_from(r: RawCurves) -> Result<Self> {
        RewardCurves::new(r.times, r.low, r.high)
    }
}

impl RewardCurves {
    pub fn new(times: Vec<f64>, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if times.is_empty() || low.len() != times.len() || high.len() != times.len() {
            return Err(AllocationError::Parameter("one reward per grid time in each bin required".into()));
        }
        if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AllocationError::Parameter("grid times must be nonnegative and strictly increasing".into()));
        }
        for v in low.iter().chain(&high) {
            probability("reward", *v)?;
        }
        Ok(Self { times, low, high })
    }

    /// Rewards implied by an agreement curve and the AI's accuracy in each bin.
    pub fn from_agreement(
        curve: &AgreementCurve,
        accuracy_low: f64,
        accuracy_high: f64,
        times: &[f64],
    ) -> Result<Self> {
        let low = times
            .iter()
            .map(|&t| expected_reward_given_time(t, curve, accuracy_low))
            .collect::<Result<_>>()?;
        let high = times
            .iter()
            .map(|&t| expected_reward_given_time(t, curve, accuracy_high))
            .collect::<Result<_>>()?;
        Self::new(times.to_vec(), low, high)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self, bin: Bin) -> &[f64] {
        match bin {
            Bin::Low => &self.low,
            Bin::High => &self.high,
        }
    }

    pub fn at(&self, bin: Bin, t: f64) -> f64 {
        interpolate(&self.times, self.values(bin), t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Constant,
    Random,
    ConfidenceBased,
    ConfidenceBasedExplained,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Constant,
        PolicyKind::Random,
        PolicyKind::ConfidenceBased,
        PolicyKind::ConfidenceBasedExplained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Constant => "constant",
            PolicyKind::Random => "random",
            PolicyKind::ConfidenceBased => "confidence_based",
            PolicyKind::ConfidenceBasedExplained => "confidence_based_explained",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Two-level time assignment. The constant policy has `t_low == t_high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub kind: PolicyKind,
    pub t_low: f64,
    pub t_high: f64,
    /// Probability of drawing `t_low` under the random policy.
    pub p_long: f64,
}

impl AllocationPolicy {
    pub fn constant(budget: &TimeBudget) -> Self {
        let t = budget.per_trial();
        Self {
            kind: PolicyKind::Constant,
            t_low: t,
            t_high: t,
            p_long: 0.0,
        }
    }

    pub fn confidence_based(budget: &TimeBudget, split: &ConfidenceSplit, explained: bool) -> Result<Self> {
        let (t_low, t_high) = solve_confidence_allocation(budget, split.p_low)?;
        Ok(Self {
            kind: if explained {
                PolicyKind::ConfidenceBasedExplained
            } else {
                PolicyKind::ConfidenceBased
            },
            t_low,
            t_high,
            p_long: 0.0,
        })
    }

    /// Confidence-blind draw of the two confidence-based levels, `t_low` with probability `p_L`.
    pub fn random(budget: &TimeBudget, split: &ConfidenceSplit) -> Result<Self> {
        let (t_low, t_high) = solve_confidence_allocation(budget, split.p_low)?;
        Ok(Self {
            kind: PolicyKind::Random,
            t_low,
            t_high,
            p_long: split.p_low,
        })
    }

    pub fn for_kind(kind: PolicyKind, budget: &TimeBudget, split: &ConfidenceSplit) -> Result<Self> {
        match kind {
            PolicyKind::Constant => Ok(Self::constant(budget)),
            PolicyKind::Random => Self::random(budget, split),
            PolicyKind::ConfidenceBased => Self::confidence_based(budget, split, false),
            PolicyKind::ConfidenceBasedExplained => Self::confidence_based(budget, split, true),
        }
    }

    /// Expected time per trial under the given split.
    pub fn expected_time(&self, split: &ConfidenceSplit) -> f64 {
        let p = match self.kind {
            PolicyKind::Constant => return self.t_low,
            PolicyKind::Random => self.p_long,
            _ => split.p_low,
        };
        p * self.t_low + (1.0 - p) * self.t_high
    }

    /// Time for one trial; only the random policy consumes randomness.
    pub fn assign<R: Rng + ?Sized>(&self, bin: Bin, rng: &mut R) -> f64 {
        match self.kind {
            PolicyKind::Constant => self.t_low,
            PolicyKind::Random => {
                if rng.random::<f64>() < self.p_long {
                    self.t_low
                } else {
                    self.t_high
                }
            }
            PolicyKind::ConfidenceBased | PolicyKind::ConfidenceBasedExplained => match bin {
                Bin::Low => self.t_low,
                Bin::High => self.t_high,
            },
        }
    }
}

/// Proposition-style allocation: `t_H = t_min`, `t_L` spends the remaining budget.
pub fn solve_confidence_allocation(budget: &TimeBudget, p_low: f64) -> Result<(f64, f64)> {
    probability("p_L", p_low)?;
    if p_low == 0.0 {
        return Err(AllocationError::DegenerateSplit);
    }
    let per = budget.per_trial();
    let t_high = budget.t_min;
    let t_low = (per - t_high * (1.0 - p_low)) / p_low;
    if let Some(cap) = budget.t_cap {
        if t_low > cap {
            let feasible_t_min = if p_low < 1.0 {
                (per - p_low * cap) / (1.0 - p_low)
            } else {
                per
            };
            return Err(AllocationError::Cap {
                t_low,
                cap,
                feasible_t_min,
            });
        }
    }
    Ok((t_low, t_high))
}

/// Analytic expected accuracy per trial.
pub fn team_reward(
    policy: &AllocationPolicy,
    budget: &TimeBudget,
    split: &ConfidenceSplit,
    curves: &RewardCurves,
) -> Result<f64> {
    let spent = policy.expected_time(split);
    let per = budget.per_trial();
    if (spent - per).abs() > BUDGET_TOLERANCE {
        return Err(AllocationError::Budget {
            expected: per,
            actual: spent,
            identity: format!(
                "{} policy: p_L·t_L + (1 - p_L)·t_H = T/N with p_L = {}, t_L = {}, t_H = {}",
                policy.kind, split.p_low, policy.t_low, policy.t_high
            ),
        });
    }
    Ok(mixture(policy, split, curves))
}

fn mixture(policy: &AllocationPolicy, split: &ConfidenceSplit, curves: &RewardCurves) -> f64 {
    let p = split.p_low;
    let (tl, th) = (policy.t_low, policy.t_high);
    match policy.kind {
        PolicyKind::Constant => p * curves.at(Bin::Low, tl) + (1.0 - p) * curves.at(Bin::High, tl),
        PolicyKind::Random => {
            let q = policy.p_long;
            p * q * curves.at(Bin::Low, tl)
                + p * (1.0 - q) * curves.at(Bin::Low, th)
                + (1.0 - p) * q * curves.at(Bin::High, tl)
                + (1.0 - p) * (1.0 - q) * curves.at(Bin::High, th)
        }
        PolicyKind::ConfidenceBased | PolicyKind::ConfidenceBasedExplained => {
            p * curves.at(Bin::Low, tl) + (1.0 - p) * curves.at(Bin::High, th)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub bin: Bin,
    pub t1: f64,
    pub t2: f64,
    pub reward_t1: f64,
    pub reward_t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption1Report {
    pub holds: bool,
    pub tolerance: f64,
    pub grid: Vec<f64>,
    pub violations: Vec<Violation>,
}

/// Low-bin reward must not fall with time and high-bin reward must not rise,
/// checked over every pair of grid times.
pub fn check_assumption1(curves: &RewardCurves, tolerance: f64) -> Assumption1Report {
    let ts = curves.times();
    let mut violations = Vec::new();
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            let (l1, l2) = (curves.low[i], curves.low[j]);
            if l2 < l1 - tolerance {
                violations.push(Violation {
                    bin: Bin::Low,
                    t1: ts[i],
                    t2: ts[j],
                    reward_t1: l1,
                    reward_t2: l2,
                });
            }
            let (h1, h2) = (curves.high[i], curves.high[j]);
            if h2 > h1 + tolerance {
                violations.push(Violation {
                    bin: Bin::High,
                    t1: ts[i],
                    t2: ts[j],
                    reward_t1: h1,
                    reward_t2: h2,
                });
            }
        }
    }
    Assumption1Report {
        holds: violations.is_empty(),
        tolerance,
        grid: ts.to_vec(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub policy: PolicyKind,
    pub t_low: f64,
    pub t_high: f64,
    pub team_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub budget: TimeBudget,
    pub split: ConfidenceSplit,
    /// Sorted by team reward, best first; ties keep the confidence-based policy ahead.
    pub ranking: Vec<PolicyValue>,
    pub confidence_dominates: bool,
    pub assumption1: Assumption1Report,
}

impl ComparisonReport {
    pub fn value(&self, kind: PolicyKind) -> Option<f64> {
        self.ranking.iter().find(|p| p.policy == kind).map(|p| p.team_reward)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "budget T/N = {} s, t_min = {} s, p_L = {}",
            self.budget.per_trial(),
            self.budget.t_min,
            self.split.p_low
        );
        let _ = writeln!(s, "{:<18} {:>10} {:>10} {:>12}", "policy", "t_L", "t_H", "team_reward");
        for p in &self.ranking {
            let _ = writeln!(
                s,
                "{:<18} {:>10.4} {:>10.4} {:>12.6}",
                p.policy.name(),
                p.t_low,
                p.t_high,
                p.team_reward
            );
        }
        let _ = writeln!(s, "confidence_dominates {}", self.confidence_dominates);
        let _ = writeln!(
            s,
            "assumption1 {} ({} violating pairs)",
            if self.assumption1.holds { "holds" } else { "fails" },
            self.assumption1.violations.len()
        );
        s
    }
}

fn rank_order(kind: PolicyKind) -> u8 {
    match kind {
        PolicyKind::ConfidenceBased => 0,
        PolicyKind::Constant => 1,
        PolicyKind::Random => 2,
        PolicyKind::ConfidenceBasedExplained => 3,
    }
}

/// Analytic comparison of the confidence-based policy against both baselines.
pub fn compare_policies(
    split: &ConfidenceSplit,
    curves: &RewardCurves,
    budget: &TimeBudget,
) -> Result<ComparisonReport> {
    let mut ranking = Vec::new();
    for kind in [PolicyKind::ConfidenceBased, PolicyKind::Constant, PolicyKind::Random] {
        let policy = AllocationPolicy::for_kind(kind, budget, split)?;
        ranking.push(PolicyValue {
            policy: kind,
            t_low: policy.t_low,
            t_high: policy.t_high,
            team_reward: team_reward(&policy, budget, split, curves)?,
        });
    }
    let conf = ranking[0].team_reward;
    let confidence_dominates = ranking[1..].iter().all(|p| conf >= p.team_reward - 1e-12);
    ranking.sort_by(|a, b| {
        b.team_reward
            .total_cmp(&a.team_reward)
            .then(rank_order(a.policy).cmp(&rank_order(b.policy)))
    });
    if confidence_dominates {
        let i = ranking
            .iter()
            .position(|p| p.policy == PolicyKind::ConfidenceBased)
            .expect("present");
        let c = ranking.remove(i);
        ranking.insert(0, c);
    }
    Ok(ComparisonReport {
        budget: *budget,
        split: *split,
        ranking,
        confidence_dominates,
        assumption1: check_assumption1(curves, 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub t_low: f64,
    pub t_high: f64,
    pub team_reward: f64,
    pub evaluated: usize,
}

/// Best budget-feasible two-level policy with `t_H` on a grid of the given resolution.
pub fn grid_search_two_level(
    split: &ConfidenceSplit,
    curves: &RewardCurves,
    budget: &TimeBudget,
    resolution: f64,
) -> Result<GridOptimum> {
    if !(resolution > 0.0) {
        return Err(AllocationError::Parameter("resolution must be positive".into()));
    }
    if split.p_low == 0.0 {
        return Err(AllocationError::DegenerateSplit);
    }
    let p = split.p_low;
    let per = budget.per_trial();
    let t_high_max = if p < 1.0 { per / (1.0 - p) } else { budget.t_min };
    let mut best: Option<GridOptimum> = None;
    let mut evaluated = 0;
    let mut k = 0u64;
    loop {
        let t_high = budget.t_min + k as f64 * resolution;
        if t_high > t_high_max + 1e-12 {
            break;
        }
        k += 1;
        let t_low = (per - (1.0 - p) * t_high) / p;
        if t_low < 0.0 || budget.t_cap.is_some_and(|c| t_low > c) {
            continue;
        }
        let policy = AllocationPolicy {
            kind: PolicyKind::ConfidenceBased,
            t_low,
            t_high,
            p_long: 0.0,
        };
        let value = mixture(&policy, split, curves);
        evaluated += 1;
        if best.is_none_or(|b| value > b.team_reward) {
            best = Some(GridOptimum {
                t_low,
                t_high,
                team_reward: value,
                evaluated,
            });
        }
        if p == 1.0 {
            break;
        }
    }
    let mut best = best.ok_or_else(|| AllocationError::Parameter("no feasible grid point".into()))?;
    best.evaluated = evaluated;
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedReward {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Monte Carlo estimate of team reward: draw bin, time and correctness per trial.
pub fn simulate_team_reward(
    policy: &AllocationPolicy,
    split: &ConfidenceSplit,
    curves: &RewardCurves,
    trials: usize,
    root_seed: u64,
) -> SimulatedReward {
    let mut rng = seed::rng(root_seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let bin = if rng.random::<f64>() < split.p_low { Bin::Low } else { Bin::High };
        let t = policy.assign(bin, &mut rng);
        if rng.random::<f64>() < curves.at(bin, t) {
            hits += 1;
        }
    }
    let mean = hits as f64 / trials as f64;
    SimulatedReward {
        mean,
        std_error: (mean * (1.0 - mean) / trials as f64).sqrt(),
        trials,
    }
}
