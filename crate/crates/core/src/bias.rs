//! Biased-Bayesian decision model.
//!
//! A decision-maker holds a subjective world model: a label prior, per-feature
//! likelihood tables and a 2x2 table for how the AI's shown prediction relates
//! to the true label. Each factor of the unnormalized posterior is raised to
//! its own exponent,
//!
//! ```text
//! P(Y | D, yhat) ∝ P(D | Y)^alpha · P(yhat | Y)^beta · P(Y)^gamma
//! ```
//!
//! and the decision is the sign of the log posterior ratio between class 1
//! and class 0. All arithmetic is carried out in the log domain:
//!
//! ```text
//! log_ratio = alpha · Σ_j log(P(d_j|1)/P(d_j|0))
//!           + beta  · log(q[yhat][1]/q[yhat][0])
//!           + gamma · log(p1/(1-p1))
//! ```
//!
//! With `alpha = beta = gamma = 1` this is the rational Bayes posterior ratio.
//! Large `beta` anchors on the AI; `beta < -1` reproduces the weak-evidence
//! effect; `gamma > 1` is confirmation bias; `|alpha| > 1` selective
//! accessibility.

use std::fmt;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Half-width of the band around zero inside which a log ratio is a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Largest joint observation space that exhaustive enumeration will visit.
pub const MAX_ENUMERATION: usize = 1 << 20;

const PROB_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no evidence for feature `{feature}`: {detail}")]
    Evidence { feature: String, detail: String },
    #[error("zero probability in {location}; the likelihood model needs smoothing")]
    ZeroProbability { location: String },
    #[error("capability not available: {0}")]
    Capability(String),
}

pub type Result<T> = std::result::Result<T, BiasError>;

/// A binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub fn from_bool(one: bool) -> Self {
        if one {
            Label::One
        } else {
            Label::Zero
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Zero => Label::One,
            Label::One => Label::Zero,
        }
    }

    pub fn is_one(self) -> bool {
        self == Label::One
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Zero),
            1 => Ok(Label::One),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Subjective prior probability of class 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct LabelPrior {
    p1: f64,
}

#[derive(Deserialize)]
struct RawPrior {
    p1: f64,
}

impl TryFrom<RawPrior> for LabelPrior {
    type Error = BiasError;

    fn try_from(raw: RawPrior) -> Result<Self> {
        LabelPrior::new(raw.p1)
    }
}

impl LabelPrior {
    pub fn new(p1: f64) -> Result<Self> {
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(BiasError::Parameter(format!(
                "prior p1 must lie strictly inside (0, 1), got {p1}"
            )));
        }
        Ok(Self { p1 })
    }

    pub fn uniform() -> Self {
        Self { p1: 0.5 }
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn log_odds(&self) -> f64 {
        (self.p1 / (1.0 - self.p1)).ln()
    }

    /// The same prior with classes 0 and 1 exchanged.
    pub fn swapped(&self) -> Self {
        Self { p1: 1.0 - self.p1 }
    }
}

/// Conditional value distribution of one discrete feature under each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLikelihood {
    pub name: String,
    /// `probs[class][value]`.
    pub probs: [Vec<f64>; 2],
}

impl FeatureLikelihood {
    pub fn cardinality(&self) -> usize {
        self.probs[0].len()
    }
}

/// Per-feature conditional tables `P(d_j | Y)` under conditional independence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureTable")]
pub struct FeatureLikelihoodTable {
    features: Vec<FeatureLikelihood>,
    smoothing_pseudocount: f64,
    #[serde(skip)]
    log_ratios: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawFeatureTable {
    features: Vec<FeatureLikelihood>,
    smoothing_pseudocount: f64,
}

impl TryFrom<RawFeatureTable> for FeatureLikelihoodTable {
    type Error = BiasError;

    fn try_from(raw: RawFeatureTable) -> Result<Self> {
        FeatureLikelihoodTable::from_probabilities(raw.features, raw.smoothing_pseudocount)
    }
}

impl FeatureLikelihoodTable {
    /// Builds a table from explicit probabilities.
    ///
    /// Each per-class row must sum to one within 1e-12. Zero entries are kept
    /// (they surface as [`BiasError::ZeroProbability`] when touched).
    pub fn from_probabilities(
        features: Vec<FeatureLikelihood>,
        smoothing_pseudocount: f64,
    ) -> Result<Self> {
        if !(smoothing_pseudocount >= 0.0) || !smoothing_pseudocount.is_finite() {
            return Err(BiasError::Parameter(format!(
                "smoothing pseudocount must be finite and nonnegative, got {smoothing_pseudocount}"
            )));
        }
        for f in &features {
            if f.probs[0].len() != f.probs[1].len() || f.probs[0].is_empty() {
                return Err(BiasError::Parameter(format!(
                    "feature `{}` needs the same nonempty value domain under both classes",
                    f.name
                )));
            }
            for (class, row) in f.probs.iter().enumerate() {
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(BiasError::Parameter(format!(
                        "feature `{}` class {class} has a negative or non-finite probability",
                        f.name
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(BiasError::Parameter(format!(
                        "feature `{}` class {class} probabilities sum to {sum}",
                        f.name
                    )));
                }
            }
        }
        let log_ratios = features
            .iter()
            .map(|f| {
                f.probs[1]
                    .iter()
                    .zip(&f.probs[0])
                    .map(|(p1, p0)| {
                        if *p1 > 0.0 && *p0 > 0.0 {
                            (p1 / p0).ln()
                        } else {
                            f64::NAN
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            features,
            smoothing_pseudocount,
            log_ratios,
        })
    }

    /// Fits Laplace-smoothed tables from labelled discrete rows.
    pub fn fit(
        names: &[String],
        cardinalities: &[usize],
        rows: &[Vec<u32>],
        labels: &[Label],
        pseudocount: f64,
    ) -> Result<Self> {
        if names.len() != cardinalities.len() {
            return Err(BiasError::Parameter(
                "one cardinality per feature name required".into(),
            ));
        }
        if rows.len() != labels.len() {
            return Err(BiasError::Parameter("one label per row required".into()));
        }
        if !(pseudocount > 0.0) {
            return Err(BiasError::Parameter(format!(
                "fitting requires a positive pseudocount, got {pseudocount}"
            )));
        }
        let mut counts: Vec<[Vec<f64>; 2]> = cardinalities
            .iter()
            .map(|&c| [vec![0.0; c], vec![0.0; c]])
            .collect();
        let mut class_totals = [0.0f64; 2];
        for (row, label) in rows.iter().zip(labels) {
            if row.len() != names.len() {
                return Err(BiasError::Parameter(format!(
                    "row has {} values, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            class_totals[label.index()] += 1.0;
            for (j, &v) in row.iter().enumerate() {
                let v = v as usize;
                if v >= cardinalities[j] {
                    return Err(BiasError::Evidence {
                        feature: names[j].clone(),
                        detail: format!("value {v} outside domain of {} values", cardinalities[j]),
                    });
                }
                counts[j][label.index()][v] += 1.0;
            }
        }
        let features = names
            .iter()
            .zip(counts)
            .map(|(name, per_class)| {
                let probs = [0, 1].map(|c| {
                    let card = per_class[c].len() as f64;
                    let denom = class_totals[c] + pseudocount * card;
                    per_class[c]
                        .iter()
                        .map(|n| (n + pseudocount) / denom)
                        .collect::<Vec<_>>()
                });
                FeatureLikelihood {
                    name: name.clone(),
                    probs,
                }
            })
            .collect();
        Self::from_probabilities(features, pseudocount)
    }

    pub fn features(&self) -> &[FeatureLikelihood] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn smoothing_pseudocount(&self) -> f64 {
        self.smoothing_pseudocount
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.cardinality()).collect()
    }

    /// `Σ_j log(P(d_j|1)/P(d_j|0))` for one observation.
    pub fn log_likelihood_ratio(&self, values: &[u32]) -> Result<f64> {
        if values.len() > self.features.len() {
            return Err(BiasError::Parameter(format!(
                "observation has {} feature values, table has {} features",
                values.len(),
                self.features.len()
            )));
        }
        if values.len() < self.features.len() {
            return Err(BiasError::Evidence {
                feature: self.features[values.len()].name.clone(),
                detail: "no value supplied in the observation".into(),
            });
        }
        let mut total = 0.0;
        for ((f, table), &v) in self.features.iter().zip(&self.log_ratios).zip(values) {
            let lr = table.get(v as usize).ok_or_else(|| BiasError::Evidence {
                feature: f.name.clone(),
                detail: format!("value {v} outside domain of {} values", f.cardinality()),
            })?;
            if lr.is_nan() {
                return Err(BiasError::ZeroProbability {
                    location: format!("feature `{}` value {v}", f.name),
                });
            }
            total += lr;
        }
        Ok(total)
    }

    /// The same table with classes 0 and 1 exchanged.
    pub fn swapped(&self) -> Self {
        let features = self
            .features
            .iter()
            .map(|f| FeatureLikelihood {
                name: f.name.clone(),
                probs: [f.probs[1].clone(), f.probs[0].clone()],
            })
            .collect();
        Self::from_probabilities(features, self.smoothing_pseudocount)
            .expect("swapping classes preserves table invariants")
    }
}

/// Subjective 2x2 table `q[yhat][y] = P(Yhat = yhat | Y = y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAiTable")]
pub struct AiOutputTable {
    q: [[f64; 2]; 2],
}

#[derive(Deserialize)]
struct RawAiTable {
    q: [[f64; 2]; 2],
}

impl TryFrom<RawAiTable> for AiOutputTable {
    type Error = BiasError;

    fn try_from(raw: RawAiTable) -> Result<Self> {
        AiOutputTable::new(raw.q)
    }
}

/// Accuracy announced to participants during training.
pub const ANNOUNCED_AI_ACCURACY: f64 = 0.85;

impl AiOutputTable {
    pub fn new(q: [[f64; 2]; 2]) -> Result<Self> {
        for row in &q {
            for &v in row {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(BiasError::Parameter(format!(
                        "AI output table entries must lie in (0, 1], got {v}"
                    )));
                }
            }
        }
        for y in 0..2 {
            let sum = q[0][y] + q[1][y];
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(BiasError::Parameter(format!(
                    "AI output table column {y} sums to {sum}"
                )));
            }
        }
        Ok(Self { q })
    }

    /// Table with `P(yhat = y | y) = accuracy` for both classes.
    pub fn symmetric(accuracy: f64) -> Result<Self> {
        Self::from_class_accuracies(accuracy, accuracy)
    }

    /// Table from per-class accuracies `P(yhat = 0 | y = 0)` and `P(yhat = 1 | y = 1)`.
    pub fn from_class_accuracies(acc0: f64, acc1: f64) -> Result<Self> {
        Self::new([[acc0, 1.0 - acc1], [1.0 - acc0, acc1]])
    }

    /// The belief induced by the announced 85% accuracy.
    pub fn announced() -> Self {
        Self::symmetric(ANNOUNCED_AI_ACCURACY).expect("announced accuracy is a valid table")
    }

    pub fn q(&self) -> [[f64; 2]; 2] {
        self.q
    }

    /// True when the AI output positively correlates with the label.
    pub fn is_diagonally_dominant(&self) -> bool {
        self.q[0][0] > self.q[0][1] && self.q[1][1] > self.q[1][0]
    }

    /// `log(q[yhat][1] / q[yhat][0])`.
    pub fn log_ratio(&self, shown: Label) -> f64 {
        let row = self.q[shown.index()];
        (row[1] / row[0]).ln()
    }

    pub fn swapped(&self) -> Self {
        let q = self.q;
        Self {
            q: [[q[1][1], q[1][0]], [q[0][1], q[0][0]]],
        }
    }
}

/// Rule applied when `|log_ratio| <= TIE_TOLERANCE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    FavorAi,
    FavorClass0,
    CoinFlip {
        seed: u64,
    },
}

impl TieRule {
    /// Resolves a tie. Without a shown AI prediction `FavorAi` falls back to class 0.
    pub fn resolve(&self, shown: Option<Label>, salt: u64) -> Label {
        match self {
            TieRule::FavorAi => shown.unwrap_or(Label::Zero),
            TieRule::FavorClass0 => Label::Zero,
            TieRule::CoinFlip { seed } => Label::from_bool(seed::derive(*seed, salt) & 1 == 1),
        }
    }
}

/// Exponents on the three posterior factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct BiasProfile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tie_rule: TieRule,
}

#[derive(Deserialize)]
struct RawProfile {
    alpha: f64,
    beta: f64,
    gamma: f64,
    #[serde(default)]
    tie_rule: TieRule,
}

impl TryFrom<RawProfile> for BiasProfile {
    type Error = BiasError;

    fn try_from(r: RawProfile) -> Result<Self> {
        BiasProfile::new(r.alpha, r.beta, r.gamma, r.tie_rule)
    }
}

impl BiasProfile {
    pub fn new(alpha: f64, beta: f64, gamma: f64, tie_rule: TieRule) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !v.is_finite() {
                return Err(BiasError::Parameter(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            tie_rule,
        })
    }

    pub fn rational() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            tie_rule: TieRule::FavorAi,
        }
    }

    /// Over-weighted AI output, `beta > 1`.
    pub fn anchoring(beta: f64) -> Result<Self> {
        require(beta > 1.0, "anchoring requires beta > 1", beta)?;
        Self::new(1.0, beta, 1.0, TieRule::FavorAi)
    }

    /// Over-weighted prior, `gamma > 1`.
    pub fn confirmation(gamma: f64) -> Result<Self> {
        require(gamma > 1.0, "confirmation bias requires gamma > 1", gamma)?;
        Self::new(1.0, 1.0, gamma, TieRule::FavorAi)
    }

    /// Reversed reading of the AI output, `beta < -1`.
    pub fn weak_evidence(beta: f64) -> Result<Self> {
        require(beta < -1.0, "weak evidence effect requires beta < -1", beta)?;
        Self::new(1.0, beta, 1.0, TieRule::FavorAi)
    }

    /// Distorted data likelihood, `alpha > 1` or `alpha < -1`.
    pub fn selective_accessibility(alpha: f64) -> Result<Self> {
        require(
            alpha.abs() > 1.0,
            "selective accessibility requires |alpha| > 1",
            alpha,
        )?;
        Self::new(alpha, 1.0, 1.0, TieRule::FavorAi)
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

fn require(ok: bool, msg: &str, v: f64) -> Result<()> {
    if ok && v.is_finite() {
        Ok(())
    } else {
        Err(BiasError::Parameter(format!("{msg}, got {v}")))
    }
}

/// What the decision-maker sees on one trial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    /// Discrete feature codes, aligned with the likelihood table.
    pub features: Vec<u32>,
    /// Shown AI prediction; `None` when no AI output is shown at all.
    pub ai_prediction: Option<Label>,
}

impl Observation {
    pub fn new(features: Vec<u32>, ai_prediction: Option<Label>) -> Self {
        Self {
            features,
            ai_prediction,
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            features: self.features.clone(),
            ai_prediction: self.ai_prediction.map(Label::flip),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub log_ratio: f64,
    pub label: Label,
    pub was_tie: bool,
}

/// Unweighted evidence terms; the log ratio is their exponent-weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceTerms {
    pub data: f64,
    /// Zero when no AI prediction is shown.
    pub ai: f64,
    pub prior: f64,
}

impl EvidenceTerms {
    pub fn weighted(&self, profile: &BiasProfile) -> f64 {
        profile.alpha * self.data + profile.beta * self.ai + profile.gamma * self.prior
    }
}

pub fn evidence_terms(
    prior: &LabelPrior,
    lik: &FeatureLikelihoodTable,
    ai: &AiOutputTable,
    obs: &Observation,
) -> Result<EvidenceTerms> {
    Ok(EvidenceTerms {
        data: lik.log_likelihood_ratio(&obs.features)?,
        ai: obs.ai_prediction.map_or(0.0, |shown| ai.log_ratio(shown)),
        prior: prior.log_odds(),
    })
}

/// Log of the biased posterior ratio `P(Y=1|·)/P(Y=0|·)`.
pub fn posterior_log_ratio(
    profile: &BiasProfile,
    prior: &LabelPrior,
    lik: &FeatureLikelihoodTable,
    ai: &AiOutputTable,
    obs: &Observation,
) -> Result<f64> {
    let lr = evidence_terms(prior, lik, ai, obs)?.weighted(profile);
    if !lr.is_finite() {
        return Err(BiasError::Parameter(format!(
            "log ratio is not finite ({lr})"
        )));
    }
    Ok(lr)
}

/// Argmax decision with explicit tie handling.
pub fn decide(log_ratio: f64, tie_rule: &TieRule, shown: Option<Label>) -> Decision {
    decide_salted(log_ratio, tie_rule, shown, 0)
}

fn decide_salted(log_ratio: f64, tie_rule: &TieRule, shown: Option<Label>, salt: u64) -> Decision {
    if log_ratio.abs() <= TIE_TOLERANCE {
        Decision {
            log_ratio,
            label: tie_rule.resolve(shown, salt),
            was_tie: true,
        }
    } else {
        Decision {
            log_ratio,
            label: Label::from_bool(log_ratio > 0.0),
            was_tie: false,
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that the decision is class 1 at logistic temperature `tau`.
///
/// `tau = 0` is the deterministic argmax; ties count as the tie rule's
/// expectation (a fair coin contributes one half).
pub fn prob_label_one(log_ratio: f64, temperature: f64, tie_rule: &TieRule, shown: Option<Label>) -> f64 {
    if temperature > 0.0 {
        return sigmoid(log_ratio / temperature);
    }
    if log_ratio.abs() <= TIE_TOLERANCE {
        return match tie_rule {
            TieRule::CoinFlip { .. } => 0.5,
            rule => {
                if rule.resolve(shown, 0).is_one() {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    if log_ratio > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Draws a decision from a logistic choice rule using the caller's RNG.
pub fn sample_decision<R: RngCore + ?Sized>(
    log_ratio: f64,
    temperature: f64,
    tie_rule: &TieRule,
    shown: Option<Label>,
    rng: &mut R,
) -> Decision {
    if temperature > 0.0 {
        let p = sigmoid(log_ratio / temperature);
        let u: f64 = rng.random();
        Decision {
            log_ratio,
            label: Label::from_bool(u < p),
            was_tie: false,
        }
    } else {
        let salt = rng.next_u64();
        decide_salted(log_ratio, tie_rule, shown, salt)
    }
}

/// Seeded stochastic decision; `temperature = 0` equals [`decide`] exactly.
pub fn simulate_decision(
    profile: &BiasProfile,
    prior: &LabelPrior,
    lik: &FeatureLikelihoodTable,
    ai: &AiOutputTable,
    obs: &Observation,
    temperature: f64,
    seed: u64,
) -> Result<Decision> {
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(BiasError::Parameter(format!(
            "temperature must be finite and nonnegative, got {temperature}"
        )));
    }
    let lr = posterior_log_ratio(profile, prior, lik, ai, obs)?;
    if temperature == 0.0 {
        return Ok(decide(lr, &profile.tie_rule, obs.ai_prediction));
    }
    let mut rng = seed::rng(seed);
    Ok(sample_decision(lr, temperature, &profile.tie_rule, obs.ai_prediction, &mut rng))
}

/// The decision-maker's subjective world model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    pub prior: LabelPrior,
    pub features: FeatureLikelihoodTable,
    pub ai: AiOutputTable,
}

impl LikelihoodModel {
    pub fn terms(&self, obs: &Observation) -> Result<EvidenceTerms> {
        evidence_terms(&self.prior, &self.features, &self.ai, obs)
    }

    pub fn log_ratio(&self, profile: &BiasProfile, obs: &Observation) -> Result<f64> {
        posterior_log_ratio(profile, &self.prior, &self.features, &self.ai, obs)
    }
}

/// A biased decision-maker with optional logistic choice noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub profile: BiasProfile,
    pub model: LikelihoodModel,
    #[serde(default)]
    pub temperature: f64,
}

impl Agent {
    pub fn new(profile: BiasProfile, model: LikelihoodModel, temperature: f64) -> Result<Self> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(BiasError::Parameter(format!(
                "temperature must be finite and nonnegative, got {temperature}"
            )));
        }
        Ok(Self {
            profile,
            model,
            temperature,
        })
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            profile: self.profile.with_beta(beta),
            ..self.clone()
        }
    }

    /// Probability that this agent agrees with the shown prediction.
    pub fn agreement_given(&self, obs: &Observation) -> Result<f64> {
        let shown = obs.ai_prediction.ok_or_else(|| {
            BiasError::Parameter("agreement needs an observation with a shown AI prediction".into())
        })?;
        let lr = self.model.log_ratio(&self.profile, obs)?;
        let p1 = prob_label_one(lr, self.temperature, &self.profile.tie_rule, Some(shown));
        Ok(if shown.is_one() { p1 } else { 1.0 - p1 })
    }

    /// `P(decision = shown prediction)` over a trial source.
    pub fn agreement(&self, source: &dyn TrialSource, mode: AgreementMode) -> Result<AgreementEstimate> {
        match mode {
            AgreementMode::Exhaustive => {
                let support = source.enumerate()?;
                let total: f64 = support.iter().map(|(_, w)| w).sum();
                if !(total > 0.0) {
                    return Err(BiasError::Parameter("trial source has no mass".into()));
                }
                let mut acc = 0.0;
                for (obs, w) in &support {
                    acc += w * self.agreement_given(obs)?;
                }
                Ok(AgreementEstimate {
                    probability: acc / total,
                    std_error: 0.0,
                    samples: None,
                })
            }
            AgreementMode::MonteCarlo { samples, seed } => self.agreement_monte_carlo(source, samples, seed),
        }
    }

    fn agreement_monte_carlo(
        &self,
        source: &dyn TrialSource,
        samples: usize,
        root: u64,
    ) -> Result<AgreementEstimate> {
        const SHARD: usize = 4096;
        if samples == 0 {
            return Err(BiasError::Parameter("Monte Carlo mode needs at least one sample".into()));
        }
        let shards = samples.div_ceil(SHARD);
        let counts: Vec<Result<u64>> = (0..shards)
            .into_par_iter()
            .map(|s| {
                let n = SHARD.min(samples - s * SHARD);
                let mut rng = seed::rng(seed::derive(root, s as u64));
                let mut agreed = 0u64;
                for _ in 0..n {
                    let obs = source.sample(&mut rng);
                    let shown = obs.ai_prediction.ok_or_else(|| {
                        BiasError::Parameter("sampled observation has no AI prediction".into())
                    })?;
                    let lr = self.model.log_ratio(&self.profile, &obs)?;
                    let d = sample_decision(lr, self.temperature, &self.profile.tie_rule, Some(shown), &mut rng);
                    agreed += u64::from(d.label == shown);
                }
                Ok(agreed)
            })
            .collect();
        let mut agreed = 0u64;
        for c in counts {
            agreed += c?;
        }
        let p = agreed as f64 / samples as f64;
        Ok(AgreementEstimate {
            probability: p,
            std_error: (p * (1.0 - p) / samples as f64).sqrt(),
            samples: Some(samples),
        })
    }
}

/// Deterministic-decision agreement probability (no choice noise).
pub fn agreement_probability(
    profile: &BiasProfile,
    prior: &LabelPrior,
    lik: &FeatureLikelihoodTable,
    ai: &AiOutputTable,
    source: &dyn TrialSource,
    mode: AgreementMode,
) -> Result<AgreementEstimate> {
    let agent = Agent {
        profile: *profile,
        model: LikelihoodModel {
            prior: *prior,
            features: lik.clone(),
            ai: *ai,
        },
        temperature: 0.0,
    };
    agent.agreement(source, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AgreementMode {
    Exhaustive,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementEstimate {
    pub probability: f64,
    /// Zero in exhaustive mode.
    pub std_error: f64,
    pub samples: Option<usize>,
}

/// A distribution over observations (features plus shown prediction).
pub trait TrialSource: Sync {
    /// Full support with (unnormalized) weights.
    fn enumerate(&self) -> Result<Vec<(Observation, f64)>>;
    fn sample(&self, rng: &mut dyn RngCore) -> Observation;
}

/// A finite weighted list of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedObservations {
    items: Vec<(Observation, f64)>,
    cumulative: Vec<f64>,
}

impl WeightedObservations {
    pub fn new(items: Vec<(Observation, f64)>) -> Result<Self> {
        if items.is_empty() {
            return Err(BiasError::Parameter("empty observation list".into()));
        }
        let mut cumulative = Vec::with_capacity(items.len());
        let mut total = 0.0;
        for (_, w) in &items {
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(BiasError::Parameter(format!("invalid weight {w}")));
            }
            total += w;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(BiasError::Parameter("observation weights sum to zero".into()));
        }
        Ok(Self { items, cumulative })
    }

    pub fn uniform(observations: Vec<Observation>) -> Result<Self> {
        Self::new(observations.into_iter().map(|o| (o, 1.0)).collect())
    }

    pub fn items(&self) -> &[(Observation, f64)] {
        &self.items
    }
}

impl TrialSource for WeightedObservations {
    fn enumerate(&self) -> Result<Vec<(Observation, f64)>> {
        Ok(self.items.clone())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Observation {
        let total = *self.cumulative.last().expect("nonempty");
        let u: f64 = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u).min(self.items.len() - 1);
        self.items[idx].0.clone()
    }
}

/// The true generating process: label prior, class-conditional feature
/// distributions and the AI's confusion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSource {
    pub label_p1: f64,
    /// `features[j][class][value]`.
    pub features: Vec<[Vec<f64>; 2]>,
    pub ai: AiOutputTable,
}

impl GenerativeSource {
    pub fn joint_size(&self) -> Option<usize> {
        self.features
            .iter()
            .try_fold(2usize, |acc, f| acc.checked_mul(f[0].len()))
    }

    /// Joint weight `P(y) Π_j P(x_j|y) P(yhat|y)` for every (y, x, yhat).
    pub fn enumerate_joint(&self) -> Result<Vec<(Label, Observation, f64)>> {
        let size = self.joint_size().unwrap_or(usize::MAX);
        if size > MAX_ENUMERATION {
            return Err(BiasError::Capability(format!(
                "joint observation space of {size} values exceeds the enumeration limit of {MAX_ENUMERATION}"
            )));
        }
        let cards: Vec<usize> = self.features.iter().map(|f| f[0].len()).collect();
        let mut out = Vec::with_capacity(2 * size);
        let mut values = vec![0u32; cards.len()];
        loop {
            for y in [Label::Zero, Label::One] {
                let py = if y.is_one() { self.label_p1 } else { 1.0 - self.label_p1 };
                let px: f64 = self
                    .features
                    .iter()
                    .zip(&values)
                    .map(|(f, &v)| f[y.index()][v as usize])
                    .product();
                for shown in [Label::Zero, Label::One] {
                    let w = py * px * self.ai.q()[shown.index()][y.index()];
                    out.push((y, Observation::new(values.clone(), Some(shown)), w));
                }
            }
            if !advance_odometer(&mut values, &cards) {
                break;
            }
        }
        Ok(out)
    }
}

/// Increments a mixed-radix counter; false once it wraps around.
pub(crate) fn advance_odometer(values: &mut [u32], cards: &[usize]) -> bool {
    for (v, &c) in values.iter_mut().zip(cards) {
        *v += 1;
        if (*v as usize) < c {
            return true;
        }
        *v = 0;
    }
    false
}

fn draw_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl GenerativeSource {
    /// Draws the true label alongside the observation.
    pub fn sample_labelled(&self, rng: &mut dyn RngCore) -> (Label, Observation) {
        let u: f64 = rng.random();
        let y = Label::from_bool(u < self.label_p1);
        let features = self
            .features
            .iter()
            .map(|f| draw_index(&f[y.index()], rng) as u32)
            .collect();
        let q = self.ai.q();
        let v: f64 = rng.random();
        let shown = Label::from_bool(v < q[1][y.index()]);
        (y, Observation::new(features, Some(shown)))
    }
}

impl TrialSource for GenerativeSource {
    fn enumerate(&self) -> Result<Vec<(Observation, f64)>> {
        // Marginalize the true label: (y=0, x, yhat) and (y=1, x, yhat) collapse.
        let joint = self.enumerate_joint()?;
        let mut out: Vec<(Observation, f64)> = Vec::with_capacity(joint.len() / 2);
        let mut index = std::collections::HashMap::with_capacity(joint.len() / 2);
        for (_, obs, w) in joint {
            match index.get(&obs) {
                Some(&i) => {
                    let entry: &mut (Observation, f64) = &mut out[i];
                    entry.1 += w;
                }
                None => {
                    index.insert(obs.clone(), out.len());
                    out.push((obs, w));
                }
            }
        }
        Ok(out)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Observation {
        self.sample_labelled(rng).1
    }
}

/// A sampling-only source wrapping a closure; it has no enumerable support.
pub struct SamplerSource<F> {
    sampler: F,
}

impl<F> SamplerSource<F>
where
    F: Fn(&mut dyn RngCore) -> Observation + Sync,
{
    pub fn new(sampler: F) -> Self {
        Self { sampler }
    }
}

impl<F> TrialSource for SamplerSource<F>
where
    F: Fn(&mut dyn RngCore) -> Observation + Sync,
{
    fn enumerate(&self) -> Result<Vec<(Observation, f64)>> {
        Err(BiasError::Capability(
            "exhaustive enumeration requested on an unbounded sampling source".into(),
        ))
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Observation {
        (self.sampler)(rng)
    }
}
