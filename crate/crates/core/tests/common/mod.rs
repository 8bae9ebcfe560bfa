#![allow(dead_code)]

use deanchor_core::bias::{
    AiOutputTable, FeatureLikelihood, FeatureLikelihoodTable, GenerativeSource, Label, LabelPrior, Observation,
};
use proptest::prelude::*;

/// A normalized probability vector with entries bounded away from zero.
pub fn prob_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, len).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    })
}

/// Per-feature, per-class value distributions.
pub fn feature_tables(max_features: usize, max_card: usize) -> impl Strategy<Value = Vec<[Vec<f64>; 2]>> {
    prop::collection::vec(2..=max_card, 1..=max_features).prop_flat_map(|cards| {
        cards
            .into_iter()
            .map(|c| (prob_vec(c), prob_vec(c)).prop_map(|(a, b)| [a, b]))
            .collect::<Vec<_>>()
    })
}

/// Strictly diagonally dominant AI table.
pub fn dominant_ai() -> impl Strategy<Value = AiOutputTable> {
    (0.52f64..0.98, 0.52f64..0.98).prop_map(|(a0, a1)| AiOutputTable::from_class_accuracies(a0, a1).unwrap())
}

pub fn any_ai() -> impl Strategy<Value = AiOutputTable> {
    (0.02f64..0.98, 0.02f64..0.98).prop_map(|(a0, a1)| AiOutputTable::from_class_accuracies(a0, a1).unwrap())
}

pub fn likelihood(tables: &[[Vec<f64>; 2]]) -> FeatureLikelihoodTable {
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

pub fn observation_for(tables: &[[Vec<f64>; 2]]) -> impl Strategy<Value = Vec<u32>> {
    tables
        .iter()
        .map(|t| (0..t[0].len() as u32).boxed())
        .collect::<Vec<_>>()
}

pub fn label() -> impl Strategy<Value = Label> {
    any::<bool>().prop_map(Label::from_bool)
}

/// Unnormalized biased posterior weight of class `y`, computed by direct products.
pub fn biased_weight(
    y: usize,
    prior_p1: f64,
    tables: &[[Vec<f64>; 2]],
    ai: &AiOutputTable,
    obs: &Observation,
    (alpha, beta, gamma): (f64, f64, f64),
) -> f64 {
    let p_y = if y == 1 { prior_p1 } else { 1.0 - prior_p1 };
    let mut w = p_y.powf(gamma);
    for (j, &v) in obs.features.iter().enumerate() {
        w *= tables[j][y][v as usize].powf(alpha);
    }
    if let Some(shown) = obs.ai_prediction {
        w *= ai.q()[shown.index()][y].powf(beta);
    }
    w
}

pub fn oracle_log_ratio(
    prior_p1: f64,
    tables: &[[Vec<f64>; 2]],
    ai: &AiOutputTable,
    obs: &Observation,
    weights: (f64, f64, f64),
) -> f64 {
    (biased_weight(1, prior_p1, tables, ai, obs, weights) / biased_weight(0, prior_p1, tables, ai, obs, weights)).ln()
}

pub fn prior(p1: f64) -> LabelPrior {
    LabelPrior::new(p1).unwrap()
}

pub fn generative(label_p1: f64, tables: Vec<[Vec<f64>; 2]>, ai: AiOutputTable) -> GenerativeSource {
    GenerativeSource {
        label_p1,
        features: tables,
        ai,
    }
}

/// Belief and truth tables over the same feature domains.
pub fn matched_tables(
    max_features: usize,
    max_card: usize,
) -> impl Strategy<Value = (Vec<[Vec<f64>; 2]>, Vec<[Vec<f64>; 2]>)> {
    feature_tables(max_features, max_card).prop_flat_map(|belief| {
        let truth: Vec<_> = belief
            .iter()
            .map(|t| (prob_vec(t[0].len()), prob_vec(t[0].len())).prop_map(|(a, b)| [a, b]))
            .collect();
        (Just(belief), truth)
    })
}

pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}
