//! Trial selection and per-participant session plans.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::allocation::{solve_confidence_allocation, TimeBudget};
use crate::bias::{Label, Observation, WeightedObservations};
use crate::data::{AiAdvice, ConfidenceBin};
use crate::seed;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// First-experiment participants: AI shown, block times permuted.
    TimeBlocks,
    HumanOnly,
    Constant,
    Random,
    Confidence,
    ConfidenceExplained,
}

impl Group {
    pub const EXPERIMENT2: [Group; 5] = [
        Group::HumanOnly,
        Group::Constant,
        Group::Random,
        Group::Confidence,
        Group::ConfidenceExplained,
    ];

    pub const COLLABORATIVE: [Group; 4] = [
        Group::Constant,
        Group::Random,
        Group::Confidence,
        Group::ConfidenceExplained,
    ];

    pub fn shows_ai(self) -> bool {
        self != Group::HumanOnly
    }

    pub fn shows_confidence(self) -> bool {
        self == Group::ConfidenceExplained
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::TimeBlocks => "time_blocks",
            Group::HumanOnly => "human_only",
            Group::Constant => "constant",
            Group::Random => "random",
            Group::Confidence => "confidence",
            Group::ConfidenceExplained => "confidence_explained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Group::TimeBlocks,
            Group::HumanOnly,
            Group::Constant,
            Group::Random,
            Group::Confidence,
            Group::ConfidenceExplained,
        ]
        .into_iter()
        .find(|g| g.name() == s)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Interval of AI confidence values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Self {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn label(&self) -> String {
        format!(
            "{}{},{}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

pub const PROBE_INTERVAL: Interval = Interval::new(0.6, 0.8, false, true);

pub const EXPERIMENT1_STRATA: [Interval; 5] = [
    Interval::new(0.5, 0.6, true, true),
    Interval::new(0.6, 0.7, false, true),
    Interval::new(0.7, 0.8, false, true),
    Interval::new(0.8, 0.9, false, true),
    Interval::new(0.9, 1.0, false, true),
];

/// Unmodified trials drawn per stratum (28 in total).
pub const EXPERIMENT1_COUNTS: [usize; 5] = [6, 6, 6, 5, 5];
pub const EXPERIMENT1_PROBES: usize = 8;
pub const EXPERIMENT1_BLOCK_TIMES: [f64; 4] = [10.0, 15.0, 20.0, 25.0];

pub const EXPERIMENT2_STRATA: [Interval; 4] = [
    Interval::new(0.5, 0.625, true, false),
    Interval::new(0.625, 0.75, true, false),
    Interval::new(0.75, 0.875, true, false),
    Interval::new(0.875, 1.0, true, true),
];
pub const EXPERIMENT2_PER_STRATUM: usize = 10;
pub const EXPERIMENT2_BLOCK_SIZE: usize = 5;

/// A candidate test item: participant-visible features, truth and model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub index: usize,
    pub features: Vec<u32>,
    pub label: Label,
    /// Model probability of class 1.
    pub probability: f64,
}

impl PoolItem {
    pub fn advice(&self, threshold: f64, flip: bool) -> AiAdvice {
        AiAdvice::from_probability(self.probability, threshold, flip)
    }

    pub fn confidence(&self) -> f64 {
        self.probability.max(1.0 - self.probability)
    }

    pub fn model_correct(&self) -> bool {
        Label::from_bool(self.probability >= 0.5) == self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub id: u32,
    pub pool_index: usize,
    pub features: Vec<u32>,
    pub true_label: Label,
    pub advice: AiAdvice,
    pub probe: bool,
    pub stratum: String,
}

impl TrialSpec {
    pub fn shown(&self) -> Label {
        self.advice.shown
    }

    pub fn ai_correct(&self) -> bool {
        self.advice.shown == self.true_label
    }

    pub fn bin(&self) -> ConfidenceBin {
        self.advice.bin
    }

    pub fn observation(&self, shows_ai: bool) -> Observation {
        Observation::new(self.features.clone(), shows_ai.then_some(self.advice.shown))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub seconds: f64,
    pub trials: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub group: Group,
    pub participant: u64,
    pub permutation_seed: u64,
    pub blocks: Vec<Block>,
}

impl SessionPlan {
    /// `(trial id, allocated seconds)` in presentation order.
    pub fn sequence(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.blocks
            .iter()
            .flat_map(|b| b.trials.iter().map(move |&t| (t, b.seconds)))
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.trials.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_seconds(&self) -> f64 {
        self.sequence().map(|(_, s)| s).sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum DesignTimes {
    Experiment1 {
        block_times: [f64; 4],
    },
    Experiment2 {
        human_only: f64,
        constant: f64,
        t_low: f64,
        t_high: f64,
        /// Blocks given `t_low` under the random policy.
        random_long_blocks: usize,
    },
}

/// Fixed trial set and block layout shared by every participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub trials: Vec<TrialSpec>,
    pub layout: Vec<Vec<u32>>,
    pub times: DesignTimes,
    pub permutation_seed: u64,
    pub confidence_threshold: f64,
}

fn sample_from(
    pool: &[PoolItem],
    used: &mut [bool],
    take: usize,
    interval: &Interval,
    extra: impl Fn(&PoolItem) -> bool,
    rng: &mut rand_chacha::ChaCha8Rng,
    what: &str,
) -> Result<Vec<usize>, HarnessError> {
    let mut eligible: Vec<usize> = (0..pool.len())
        .filter(|&i| !used[i] && interval.contains(pool[i].confidence()) && extra(&pool[i]))
        .collect();
    if eligible.len() < take {
        return Err(HarnessError::Pool {
            interval: format!("{what} {}", interval.label()),
            needed: take,
            available: eligible.len(),
        });
    }
    eligible.shuffle(rng);
    eligible.truncate(take);
    eligible.sort_unstable();
    for &i in &eligible {
        used[i] = true;
    }
    Ok(eligible)
}

impl Design {
    /// 36 trials: 8 flipped medium-confidence probes the model got right, and
    /// 28 unmodified trials stratified over confidence; four blocks of nine.
    pub fn experiment1(pool: &[PoolItem], threshold: f64, seed: u64) -> Result<Self, HarnessError> {
        let mut rng = seed::rng(seed::derive(seed, 1));
        let mut used = vec![false; pool.len()];
        let probes = sample_from(
            pool,
            &mut used,
            EXPERIMENT1_PROBES,
            &PROBE_INTERVAL,
            PoolItem::model_correct,
            &mut rng,
            "probe",
        )?;
        let mut unmodified = Vec::new();
        for (interval, &n) in EXPERIMENT1_STRATA.iter().zip(&EXPERIMENT1_COUNTS) {
            unmodified.extend(sample_from(pool, &mut used, n, interval, |_| true, &mut rng, "unmodified")?);
        }
        let mut probes_order = probes.clone();
        probes_order.shuffle(&mut rng);
        let mut unmod_order = unmodified.clone();
        unmod_order.shuffle(&mut rng);

        let mut trials = Vec::new();
        let mut layout = Vec::new();
        for b in 0..4 {
            let mut block: Vec<(usize, bool)> = probes_order[2 * b..2 * b + 2]
                .iter()
                .map(|&i| (i, true))
                .chain(unmod_order[7 * b..7 * b + 7].iter().map(|&i| (i, false)))
                .collect();
            block.shuffle(&mut rng);
            let mut ids = Vec::new();
            for (i, probe) in block {
                let id = trials.len() as u32;
                let item = &pool[i];
                let stratum = if probe {
                    PROBE_INTERVAL.label()
                } else {
                    EXPERIMENT1_STRATA
                        .iter()
                        .find(|s| s.contains(item.confidence()))
                        .map(|s| s.label())
                        .unwrap_or_default()
                };
                trials.push(TrialSpec {
                    id,
                    pool_index: item.index,
                    features: item.features.clone(),
                    true_label: item.label,
                    advice: item.advice(threshold, probe),
                    probe,
                    stratum,
                });
                ids.push(id);
            }
            layout.push(ids);
        }
        Ok(Self {
            trials,
            layout,
            times: DesignTimes::Experiment1 {
                block_times: EXPERIMENT1_BLOCK_TIMES,
            },
            permutation_seed: seed::derive(seed, 2),
            confidence_threshold: threshold,
        })
    }

    /// 40 trials, ten per confidence stratum (20 low, 20 high), in eight
    /// single-bin blocks of five.
    pub fn experiment2(
        pool: &[PoolItem],
        threshold: f64,
        budget: &TimeBudget,
        human_only_seconds: f64,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        let mut rng = seed::rng(seed::derive(seed, 1));
        let mut used = vec![false; pool.len()];
        let mut trials = Vec::new();
        let mut blocks: Vec<Vec<u32>> = Vec::new();
        for interval in &EXPERIMENT2_STRATA {
            let mut picked = sample_from(
                pool,
                &mut used,
                EXPERIMENT2_PER_STRATUM,
                interval,
                |_| true,
                &mut rng,
                "stratum",
            )?;
            picked.shuffle(&mut rng);
            for chunk in picked.chunks(EXPERIMENT2_BLOCK_SIZE) {
                let mut ids = Vec::new();
                for &i in chunk {
                    let id = trials.len() as u32;
                    let item = &pool[i];
                    trials.push(TrialSpec {
                        id,
                        pool_index: item.index,
                        features: item.features.clone(),
                        true_label: item.label,
                        advice: item.advice(threshold, false),
                        probe: false,
                        stratum: interval.label(),
                    });
                    ids.push(id);
                }
                blocks.push(ids);
            }
        }
        blocks.shuffle(&mut rng);
        let lows = trials.iter().filter(|t| t.bin() == ConfidenceBin::Low).count();
        let p_low = lows as f64 / trials.len() as f64;
        let (t_low, t_high) = solve_confidence_allocation(budget, p_low)?;
        let random_long_blocks = (blocks.len() as f64 * p_low).round() as usize;
        Ok(Self {
            trials,
            layout: blocks,
            times: DesignTimes::Experiment2 {
                human_only: human_only_seconds,
                constant: budget.per_trial(),
                t_low,
                t_high,
                random_long_blocks,
            },
            permutation_seed: seed::derive(seed, 2),
            confidence_threshold: threshold,
        })
    }

    pub fn trial(&self, id: u32) -> &TrialSpec {
        &self.trials[id as usize]
    }

    pub fn groups(&self) -> Vec<Group> {
        match self.times {
            DesignTimes::Experiment1 { .. } => vec![Group::TimeBlocks],
            DesignTimes::Experiment2 { .. } => Group::EXPERIMENT2.to_vec(),
        }
    }

    /// Fraction of trials whose shown prediction is correct.
    pub fn shown_accuracy(&self) -> f64 {
        self.trials.iter().filter(|t| t.ai_correct()).count() as f64 / self.trials.len() as f64
    }

    /// Probe trials as a uniformly weighted observation set with the AI shown.
    pub fn probe_source(&self) -> Option<WeightedObservations> {
        let obs: Vec<Observation> = self
            .trials
            .iter()
            .filter(|t| t.probe)
            .map(|t| t.observation(true))
            .collect();
        WeightedObservations::uniform(obs).ok()
    }

    pub fn plan(&self, group: Group, participant: u64) -> Result<SessionPlan, HarnessError> {
        let permutation_seed = seed::derive(self.permutation_seed, participant);
        let mut rng = seed::rng(permutation_seed);
        let blocks = match (self.times, group) {
            (DesignTimes::Experiment1 { block_times }, Group::TimeBlocks) => {
                let mut times = block_times;
                times.shuffle(&mut rng);
                self.layout
                    .iter()
                    .zip(times)
                    .map(|(ids, seconds)| Block {
                        seconds,
                        trials: ids.clone(),
                    })
                    .collect()
            }
            (
                DesignTimes::Experiment2 {
                    human_only,
                    constant,
                    t_low,
                    t_high,
                    random_long_blocks,
                },
                g,
            ) if g != Group::TimeBlocks => {
                let mut long = vec![false; self.layout.len()];
                if g == Group::Random {
                    for slot in long.iter_mut().take(random_long_blocks) {
                        *slot = true;
                    }
                    long.shuffle(&mut rng);
                }
                self.layout
                    .iter()
                    .enumerate()
                    .map(|(b, ids)| {
                        let bin = self.trial(ids[0]).bin();
                        let seconds = match g {
                            Group::HumanOnly => human_only,
                            Group::Constant => constant,
                            Group::Random => {
                                if long[b] {
                                    t_low
                                } else {
                                    t_high
                                }
                            }
                            _ => match bin {
                                ConfidenceBin::Low => t_low,
                                ConfidenceBin::High => t_high,
                            },
                        };
                        Block {
                            seconds,
                            trials: ids.clone(),
                        }
                    })
                    .collect()
            }
            _ => return Err(HarnessError::Config(format!("group {group} does not belong to this design"))),
        };
        Ok(SessionPlan {
            group,
            participant,
            permutation_seed,
            blocks,
        })
    }
}

/// Model-correct trials in the probe confidence interval, shown with the prediction flipped.
pub fn probe_style_source(pool: &[PoolItem], threshold: f64) -> Option<WeightedObservations> {
    let obs: Vec<Observation> = pool
        .iter()
        .filter(|p| p.model_correct() && PROBE_INTERVAL.contains(p.confidence()))
        .map(|p| Observation::new(p.features.clone(), Some(p.advice(threshold, true).shown)))
        .collect();
    WeightedObservations::uniform(obs).ok()
}
