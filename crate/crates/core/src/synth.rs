//! Synthetic student records in the UCI layout.
//!
//! Attribute marginals roughly follow the published dataset. The pass/fail
//! outcome comes from a logistic latent model in which the ten study features
//! carry the signal and every other attribute is noise.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::bias::sigmoid;
use crate::data::{attribute_index, RawStudentRecord, Subject, SCHEMA};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "d_math")]
    pub math_rows: usize,
    #[serde(default = "d_por")]
    pub portuguese_rows: usize,
    /// Multiplies every latent effect; larger values make labels easier to predict.
    #[serde(default = "d_strength")]
    pub effect_scale: f64,
}

fn d_math() -> usize {
    395
}
fn d_por() -> usize {
    649
}
fn d_strength() -> f64 {
    0.8
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            math_rows: d_math(),
            portuguese_rows: d_por(),
            effect_scale: d_strength(),
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> i32 {
    WeightedIndex::new(weights).expect("static weights").sample(rng) as i32
}

fn set(values: &mut [i32], name: &str, v: i32) {
    values[attribute_index(name).expect("schema attribute")] = v;
}

fn get(values: &[i32], name: &str) -> i32 {
    values[attribute_index(name).expect("schema attribute")]
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> i32 {
    i32::from(rng.random::<f64>() < p)
}

fn draw_record(rng: &mut ChaCha8Rng, subject: Subject, scale: f64) -> RawStudentRecord {
    let mut v = vec![0i32; SCHEMA.len()];
    let gp = if subject == Subject::Math { 0.88 } else { 0.65 };
    set(&mut v, "school", 1 - bernoulli(rng, gp));
    set(&mut v, "sex", bernoulli(rng, 0.45));
    set(&mut v, "age", 15 + pick(rng, &[0.2, 0.27, 0.26, 0.2, 0.05, 0.015, 0.003, 0.002]));
    set(&mut v, "address", bernoulli(rng, 0.3));
    set(&mut v, "famsize", 1 - bernoulli(rng, 0.3));
    set(&mut v, "Pstatus", bernoulli(rng, 0.12));
    let medu = pick(rng, &[0.01, 0.15, 0.27, 0.23, 0.34]);
    set(&mut v, "Medu", medu);
    let fedu = if rng.random::<f64>() < 0.5 {
        (medu + pick(rng, &[0.25, 0.5, 0.25]) - 1).clamp(0, 4)
    } else {
        pick(rng, &[0.01, 0.24, 0.31, 0.22, 0.22])
    };
    set(&mut v, "Fedu", fedu);
    // teacher, health, services, at_home, other
    let mjob = if medu == 4 {
        pick(rng, &[0.3, 0.15, 0.25, 0.05, 0.25])
    } else {
        pick(rng, &[0.04, 0.05, 0.22, 0.26, 0.43])
    };
    set(&mut v, "Mjob", mjob);
    set(&mut v, "Fjob", pick(rng, &[0.06, 0.04, 0.28, 0.05, 0.57]));
    set(&mut v, "reason", pick(rng, &[0.25, 0.23, 0.42, 0.10]));
    set(&mut v, "guardian", pick(rng, &[0.7, 0.23, 0.07]));
    set(&mut v, "traveltime", 1 + pick(rng, &[0.6, 0.3, 0.07, 0.03]));
    set(&mut v, "studytime", 1 + pick(rng, &[0.3, 0.48, 0.15, 0.07]));
    set(&mut v, "failures", pick(rng, &[0.8, 0.12, 0.04, 0.04, 0.0]));
    set(&mut v, "schoolsup", bernoulli(rng, 0.11));
    set(&mut v, "famsup", bernoulli(rng, 0.61));
    set(&mut v, "paid", bernoulli(rng, 0.2));
    set(&mut v, "activities", bernoulli(rng, 0.49));
    set(&mut v, "nursery", bernoulli(rng, 0.8));
    set(&mut v, "higher", bernoulli(rng, 0.91));
    set(&mut v, "internet", bernoulli(rng, 0.79));
    set(&mut v, "romantic", bernoulli(rng, 0.36));
    set(&mut v, "famrel", 1 + pick(rng, &[0.03, 0.05, 0.16, 0.49, 0.27]));
    set(&mut v, "freetime", 1 + pick(rng, &[0.06, 0.16, 0.4, 0.28, 0.1]));
    set(&mut v, "goout", 1 + pick(rng, &[0.06, 0.25, 0.32, 0.22, 0.15]));
    set(&mut v, "Dalc", 1 + pick(rng, &[0.7, 0.19, 0.07, 0.02, 0.02]));
    set(&mut v, "Walc", 1 + pick(rng, &[0.38, 0.22, 0.2, 0.13, 0.07]));
    set(&mut v, "health", 1 + pick(rng, &[0.12, 0.12, 0.2, 0.17, 0.39]));
    let absences = if rng.random::<f64>() < 0.35 {
        0
    } else {
        let u: f64 = rng.random();
        ((-u.ln() * 6.0).ceil() as i32).min(93)
    };
    set(&mut v, "absences", absences);

    let logit = scale * latent(&v) + if subject == Subject::Portuguese { 0.3 } else { -0.3 };
    let pass = rng.random::<f64>() < sigmoid(logit);
    let g3 = if pass {
        10 + pick(rng, &[0.14, 0.14, 0.13, 0.12, 0.11, 0.1, 0.08, 0.07, 0.05, 0.04, 0.02])
    } else if rng.random::<f64>() < 0.25 {
        0
    } else {
        pick(rng, &[0.0, 0.0, 0.0, 0.0, 0.02, 0.05, 0.1, 0.18, 0.3, 0.35])
    };
    let g2 = (g3 + pick(rng, &[0.1, 0.2, 0.4, 0.2, 0.1]) - 2).clamp(0, 20);
    let g1 = (g2 + pick(rng, &[0.1, 0.2, 0.4, 0.2, 0.1]) - 2).clamp(0, 20);
    set(&mut v, "G1", if g3 == 0 { g1.max(4) } else { g1 });
    set(&mut v, "G2", g2);
    set(&mut v, "G3", g3);
    RawStudentRecord { subject, values: v }
}

/// Latent pass log-odds before subject shift.
pub fn latent(v: &[i32]) -> f64 {
    const MJOB: [f64; 5] = [0.6, 0.6, 0.2, -0.5, 0.0];
    const FJOB: [f64; 5] = [0.8, 0.3, 0.1, -0.3, 0.0];
    0.9 - 1.6 * get(v, "failures") as f64 + 1.8 * (get(v, "higher") as f64 - 1.0)
        + 0.65 * (get(v, "studytime") as f64 - 2.0)
        - 0.45 * (get(v, "goout") as f64 - 3.0)
        - 1.45 * get(v, "schoolsup") as f64
        + 0.27 * (get(v, "Medu") as f64 - 2.5)
        + 0.23 * (get(v, "Fedu") as f64 - 2.5)
        + MJOB[get(v, "Mjob") as usize]
        + FJOB[get(v, "Fjob") as usize]
        - 0.05 * (get(v, "absences") as f64 - 5.0)
}

/// Generates math rows then Portuguese rows.
pub fn generate(config: &SynthConfig) -> Vec<RawStudentRecord> {
    let mut rng = seed::rng(config.seed);
    let mut out = Vec::with_capacity(config.math_rows + config.portuguese_rows);
    for _ in 0..config.math_rows {
        out.push(draw_record(&mut rng, Subject::Math, config.effect_scale));
    }
    for _ in 0..config.portuguese_rows {
        out.push(draw_record(&mut rng, Subject::Portuguese, config.effect_scale));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_domains() {
        let rows = generate(&SynthConfig::new(1));
        assert_eq!(rows.len(), 1044);
        for r in &rows {
            for (a, &x) in SCHEMA.iter().zip(&r.values) {
                match a.kind {
                    crate::data::AttributeKind::Nominal(c) => assert!((x as usize) < c.len(), "{}", a.name),
                    crate::data::AttributeKind::Integer { min, max } => {
                        assert!(x >= min && x <= max, "{} = {x}", a.name)
                    }
                }
            }
        }
        assert_eq!(generate(&SynthConfig::new(1)), rows);
    }
}
