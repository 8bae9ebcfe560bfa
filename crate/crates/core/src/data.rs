//! Student-performance records, feature encoding and the assisting classifier.
//!
//! Records follow the UCI Student Performance layout: 33 semicolon-separated
//! columns with a header row, one file per subject.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{sigmoid, Label};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeKind {
    Nominal(&'static [&'static str]),
    Integer { min: i32, max: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttributeSpec {
    pub name: &'static str,
    pub kind: AttributeKind,
}

const YES_NO: &[&str] = &["no", "yes"];
const JOBS: &[&str] = &["teacher", "health", "services", "at_home", "other"];

const fn nominal(name: &'static str, cats: &'static [&'static str]) -> AttributeSpec {
    AttributeSpec {
        name,
        kind: AttributeKind::Nominal(cats),
    }
}

const fn integer(name: &'static str, min: i32, max: i32) -> AttributeSpec {
    AttributeSpec {
        name,
        kind: AttributeKind::Integer { min, max },
    }
}

/// The 33 UCI columns in file order.
pub const SCHEMA: [AttributeSpec; 33] = [
    nominal("school", &["GP", "MS"]),
    nominal("sex", &["F", "M"]),
    integer("age", 15, 22),
    nominal("address", &["U", "R"]),
    nominal("famsize", &["LE3", "GT3"]),
    nominal("Pstatus", &["T", "A"]),
    integer("Medu", 0, 4),
    integer("Fedu", 0, 4),
    nominal("Mjob", JOBS),
    nominal("Fjob", JOBS),
    nominal("reason", &["home", "reputation", "course", "other"]),
    nominal("guardian", &["mother", "father", "other"]),
    integer("traveltime", 1, 4),
    integer("studytime", 1, 4),
    integer("failures", 0, 4),
    nominal("schoolsup", YES_NO),
    nominal("famsup", YES_NO),
    nominal("paid", YES_NO),
    nominal("activities", YES_NO),
    nominal("nursery", YES_NO),
    nominal("higher", YES_NO),
    nominal("internet", YES_NO),
    nominal("romantic", YES_NO),
    integer("famrel", 1, 5),
    integer("freetime", 1, 5),
    integer("goout", 1, 5),
    integer("Dalc", 1, 5),
    integer("Walc", 1, 5),
    integer("health", 1, 5),
    integer("absences", 0, 93),
    integer("G1", 0, 20),
    integer("G2", 0, 20),
    integer("G3", 0, 20),
];

pub const G3_INDEX: usize = 32;

/// Columns never used as model inputs: the intermediate grades give the label away.
pub const EXCLUDED_FROM_FEATURES: [&str; 3] = ["G1", "G2", "G3"];

/// The ten attributes participants see, which are also the retained model features.
pub const STUDY_FEATURES: [&str; 10] = [
    "Medu", "Fedu", "Mjob", "Fjob", "studytime", "higher", "goout", "absences", "schoolsup", "failures",
];

/// Attributes withheld from the reduced (complementary-knowledge) model.
pub const WITHHELD_FROM_REDUCED: [&str; 3] = ["studytime", "goout", "schoolsup"];

pub fn attribute_index(name: &str) -> Option<usize> {
    SCHEMA.iter().position(|a| a.name == name)
}

pub fn candidate_features() -> Vec<String> {
    SCHEMA
        .iter()
        .filter(|a| !EXCLUDED_FROM_FEATURES.contains(&a.name))
        .map(|a| a.name.to_string())
        .collect()
}

pub fn reduced_features() -> Vec<String> {
    STUDY_FEATURES
        .iter()
        .filter(|f| !WITHHELD_FROM_REDUCED.contains(f))
        .map(|f| f.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Math,
    Portuguese,
}

impl Subject {
    pub fn file_name(self) -> &'static str {
        match self {
            Subject::Math => "student-mat.csv",
            Subject::Portuguese => "student-por.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubjectFilter {
    #[default]
    Both,
    Math,
    Portuguese,
}

impl SubjectFilter {
    pub fn subjects(self) -> &'static [Subject] {
        match self {
            SubjectFilter::Both => &[Subject::Math, Subject::Portuguese],
            SubjectFilter::Math => &[Subject::Math],
            SubjectFilter::Portuguese => &[Subject::Portuguese],
        }
    }
}

/// One student row. Nominal attributes hold their category index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStudentRecord {
    pub subject: Subject,
    pub values: Vec<i32>,
}

impl RawStudentRecord {
    pub fn get(&self, name: &str) -> Option<i32> {
        attribute_index(name).map(|i| self.values[i])
    }

    pub fn value(&self, index: usize) -> i32 {
        self.values[index]
    }

    pub fn g3(&self) -> i32 {
        self.values[G3_INDEX]
    }

    /// Text form of an attribute as it appears in the source file.
    pub fn display(&self, index: usize) -> String {
        let v = self.values[index];
        match SCHEMA[index].kind {
            AttributeKind::Nominal(cats) => cats[v as usize].to_string(),
            AttributeKind::Integer { .. } => v.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: input is empty")]
    EmptyInput { path: PathBuf },
    #[error("{path}: unknown column `{column}`")]
    UnknownColumn { path: PathBuf, column: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: line {line}, column `{column}`: cannot parse `{value}` ({reason})")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
        reason: String,
    },
    #[error("{path}: malformed row at line {line}: {detail}")]
    Row { path: PathBuf, line: u64, detail: String },
    #[error("no records to prepare")]
    NoRecords,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("training split contains only class {0}")]
    SingleClass(Label),
    #[error("training diverged at epoch {epoch}: loss rose for {window} consecutive epochs (trace {trace:?})")]
    Diverged {
        epoch: usize,
        window: usize,
        trace: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

fn parse_field(spec: &AttributeSpec, raw: &str) -> std::result::Result<i32, String> {
    let raw = raw.trim();
    match spec.kind {
        AttributeKind::Nominal(cats) => cats
            .iter()
            .position(|c| *c == raw)
            .map(|i| i as i32)
            .ok_or_else(|| format!("expected one of {cats:?}")),
        AttributeKind::Integer { min, max } => {
            let v: i32 = raw.parse().map_err(|_| "not an integer".to_string())?;
            if v < min || v > max {
                Err(format!("outside [{min}, {max}]"))
            } else {
                Ok(v)
            }
        }
    }
}

/// Reads one subject file.
pub fn ingest_file(path: &Path, subject: Subject) -> Result<Vec<RawStudentRecord>> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_bytes(&bytes, path, subject)
}

/// Parses semicolon-delimited UCI text; `path` is used for error messages only.
pub fn ingest_bytes(bytes: &[u8], path: &Path, subject: Subject) -> Result<Vec<RawStudentRecord>> {
    let p = || path.to_path_buf();
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(DataError::EmptyInput { path: p() });
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| DataError::Row {
            path: p(),
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let mut column_of = vec![usize::MAX; SCHEMA.len()];
    for (pos, h) in headers.iter().enumerate() {
        let h = h.trim();
        match attribute_index(h) {
            Some(i) => column_of[i] = pos,
            None => {
                return Err(DataError::UnknownColumn {
                    path: p(),
                    column: h.to_string(),
                })
            }
        }
    }
    if let Some(i) = column_of.iter().position(|&c| c == usize::MAX) {
        return Err(DataError::MissingColumn {
            path: p(),
            column: SCHEMA[i].name.to_string(),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::Row {
            path: p(),
            line: e.position().map_or(0, |pos| pos.line()),
            detail: e.to_string(),
        })?;
        let line = row.position().map_or(0, |pos| pos.line());
        let mut values = Vec::with_capacity(SCHEMA.len());
        for (i, spec) in SCHEMA.iter().enumerate() {
            let raw = row.get(column_of[i]).unwrap_or("");
            let v = parse_field(spec, raw).map_err(|reason| DataError::Parse {
                path: p(),
                line,
                column: spec.name.to_string(),
                value: raw.to_string(),
                reason,
            })?;
            values.push(v);
        }
        out.push(RawStudentRecord { subject, values });
    }
    Ok(out)
}

/// Reads `student-mat.csv` and/or `student-por.csv` from a directory.
pub fn ingest_dir(dir: &Path, filter: SubjectFilter) -> Result<Vec<RawStudentRecord>> {
    let mut out = Vec::new();
    for &s in filter.subjects() {
        out.extend(ingest_file(&dir.join(s.file_name()), s)?);
    }
    Ok(out)
}

/// Writes records in the UCI file format (non-numeric fields quoted).
pub fn write_records<W: std::io::Write>(w: W, records: &[RawStudentRecord]) -> std::io::Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b';')
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_writer(w);
    writer.write_record(SCHEMA.iter().map(|a| a.name))?;
    for r in records {
        writer.write_record((0..SCHEMA.len()).map(|i| r.display(i)))?;
    }
    writer.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub pass_threshold: i32,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self { pass_threshold: 10 }
    }
}

impl LabelRule {
    pub fn label(&self, record: &RawStudentRecord) -> Label {
        Label::from_bool(record.g3() >= self.pass_threshold)
    }
}

/// How a raw attribute maps onto one model column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
pub enum Encoding {
    Numeric,
    /// 1 when the category index equals `category`.
    Indicator { category: i32, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub attribute: String,
    #[serde(flatten)]
    pub encoding: Encoding,
    pub mean: f64,
    pub std: f64,
}

impl EncodedColumn {
    fn raw(&self, record: &RawStudentRecord, index: usize) -> f64 {
        let v = record.values[index];
        match &self.encoding {
            Encoding::Numeric => v as f64,
            Encoding::Indicator { category, .. } => f64::from(u8::from(v == *category)),
        }
    }
}

fn columns_for(index: usize) -> Vec<EncodedColumn> {
    let spec = &SCHEMA[index];
    let col = |name: String, encoding| EncodedColumn {
        name,
        attribute: spec.name.to_string(),
        encoding,
        mean: 0.0,
        std: 1.0,
    };
    match spec.kind {
        AttributeKind::Integer { .. } => vec![col(spec.name.to_string(), Encoding::Numeric)],
        AttributeKind::Nominal(cats) if cats.len() == 2 => vec![col(
            format!("{}={}", spec.name, cats[1]),
            Encoding::Indicator {
                category: 1,
                value: cats[1].to_string(),
            },
        )],
        AttributeKind::Nominal(cats) => cats
            .iter()
            .enumerate()
            .map(|(i, c)| {
                col(
                    format!("{}={}", spec.name, c),
                    Encoding::Indicator {
                        category: i as i32,
                        value: c.to_string(),
                    },
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    #[serde(default)]
    pub label_rule: LabelRule,
    pub split_seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Attributes to encode; defaults to every non-grade attribute.
    #[serde(default = "candidate_features")]
    pub features: Vec<String>,
}

fn default_train_fraction() -> f64 {
    0.7
}

impl PrepareConfig {
    pub fn new(split_seed: u64) -> Self {
        Self {
            label_rule: LabelRule::default(),
            split_seed,
            train_fraction: default_train_fraction(),
            features: candidate_features(),
        }
    }

    pub fn with_features<S: AsRef<str>>(mut self, features: &[S]) -> Self {
        self.features = features.iter().map(|f| f.as_ref().to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub columns: Vec<EncodedColumn>,
    pub features: Vec<String>,
    pub label_rule: LabelRule,
    pub split_seed: u64,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<Label>,
    pub x_test: Vec<Vec<f64>>,
    pub y_test: Vec<Label>,
    pub warnings: Vec<String>,
}

/// Deterministic shuffled train/test partition of `0..n`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train.min(n));
    (idx, test)
}

pub fn prepare(records: &[RawStudentRecord], config: &PrepareConfig) -> Result<PreparedDataset> {
    if records.is_empty() {
        return Err(DataError::NoRecords);
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(DataError::Parameter(format!(
            "train fraction must lie in (0, 1), got {}",
            config.train_fraction
        )));
    }
    let mut attr_indices = Vec::new();
    for f in &config.features {
        let i = attribute_index(f).ok_or_else(|| DataError::UnknownFeature(f.clone()))?;
        if EXCLUDED_FROM_FEATURES.contains(&f.as_str()) {
            return Err(DataError::Parameter(format!("`{f}` is a grade column and cannot be a feature")));
        }
        attr_indices.push(i);
    }
    let (train_rows, test_rows) = split_indices(records.len(), config.train_fraction, config.split_seed);

    let mut warnings = Vec::new();
    let mut columns = Vec::new();
    let mut sources = Vec::new();
    for &ai in &attr_indices {
        for mut col in columns_for(ai) {
            let n = train_rows.len() as f64;
            let mean = train_rows.iter().map(|&r| col.raw(&records[r], ai)).sum::<f64>() / n;
            let var = train_rows
                .iter()
                .map(|&r| (col.raw(&records[r], ai) - mean).powi(2))
                .sum::<f64>()
                / n;
            if var.sqrt() < 1e-12 {
                warnings.push(format!(
                    "column `{}` has zero variance on the training split and was excluded",
                    col.name
                ));
                continue;
            }
            col.mean = mean;
            col.std = var.sqrt();
            columns.push(col);
            sources.push(ai);
        }
    }
    let encode = |rows: &[usize]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                columns
                    .iter()
                    .zip(&sources)
                    .map(|(c, &ai)| (c.raw(&records[r], ai) - c.mean) / c.std)
                    .collect()
            })
            .collect()
    };
    let x_train = encode(&train_rows);
    let x_test = encode(&test_rows);
    let y_train = train_rows.iter().map(|&r| config.label_rule.label(&records[r])).collect();
    let y_test = test_rows.iter().map(|&r| config.label_rule.label(&records[r])).collect();
    Ok(PreparedDataset {
        columns,
        features: config.features.clone(),
        label_rule: config.label_rule,
        split_seed: config.split_seed,
        train_rows,
        test_rows,
        x_train,
        y_train,
        x_test,
        y_test,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_l2")]
    pub l2: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_tol")]
    pub tolerance: f64,
}

fn d_lr() -> f64 {
    0.5
}
fn d_l2() -> f64 {
    1e-3
}
fn d_epochs() -> usize {
    5000
}
fn d_tol() -> f64 {
    1e-6
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            l2: d_l2(),
            epochs: d_epochs(),
            tolerance: d_tol(),
        }
    }
}

pub const DIVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnWeight {
    #[serde(flatten)]
    pub column: EncodedColumn,
    pub weight: f64,
}

/// All columns derived from one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub feature: String,
    pub columns: Vec<ColumnWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub epochs_run: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<FeatureWeights>,
    pub intercept: f64,
    pub hyperparameters: TrainConfig,
    pub label_rule: LabelRule,
    pub training: TrainingSummary,
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Full-batch gradient descent on the L2-regularized logistic loss.
pub fn train(data: &PreparedDataset, config: &TrainConfig, seed: u64) -> Result<LinearClassifier> {
    let n = data.x_train.len();
    let ones = data.y_train.iter().filter(|y| y.is_one()).count();
    if ones == 0 {
        return Err(DataError::SingleClass(Label::Zero));
    }
    if ones == n {
        return Err(DataError::SingleClass(Label::One));
    }
    if !(config.learning_rate > 0.0) || !(config.l2 >= 0.0) || config.epochs == 0 {
        return Err(DataError::Parameter(format!("invalid training hyperparameters {config:?}")));
    }
    let d = data.columns.len();
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut rng = seed::rng(seed);
    let mut w: Vec<f64> = (0..d).map(|_| init.sample(&mut rng)).collect();
    let mut b = 0.0;
    let y: Vec<f64> = data.y_train.iter().map(|l| l.index() as f64).collect();
    let nf = n as f64;

    let loss_grad = |w: &[f64], b: f64| -> (f64, Vec<f64>, f64) {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (x, &yi) in data.x_train.iter().zip(&y) {
            let z = dot(w, x) + b;
            loss += log1p_exp(z) - yi * z;
            let r = sigmoid(z) - yi;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += r * xi;
            }
            gb += r;
        }
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * config.l2 / 2.0;
        for (g, wi) in gw.iter_mut().zip(w) {
            *g = *g / nf + config.l2 * wi;
        }
        (loss / nf + reg, gw, gb / nf)
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut rising = 0usize;
    let mut epochs_run = 0;
    let mut converged = false;
    let (mut loss, mut gw, mut gb) = loss_grad(&w, b);
    let mut gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
    while epochs_run < config.epochs {
        if gnorm < config.tolerance {
            converged = true;
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= config.learning_rate * g;
        }
        b -= config.learning_rate * gb;
        epochs_run += 1;
        let prev = loss;
        (loss, gw, gb) = loss_grad(&w, b);
        gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        trace.push(loss);
        if trace.len() > DIVERGENCE_WINDOW + 1 {
            trace.remove(0);
        }
        if !loss.is_finite() {
            return Err(DataError::Diverged {
                epoch: epochs_run,
                window: rising + 1,
                trace,
            });
        }
        rising = if loss > prev { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_WINDOW {
            return Err(DataError::Diverged {
                epoch: epochs_run,
                window: rising,
                trace,
            });
        }
    }
    if !converged && gnorm < config.tolerance {
        converged = true;
    }

    let mut grouped: Vec<FeatureWeights> = Vec::new();
    for (col, &wi) in data.columns.iter().zip(&w) {
        let cw = ColumnWeight {
            column: col.clone(),
            weight: wi,
        };
        match grouped.iter_mut().find(|g| g.feature == col.attribute) {
            Some(g) => g.columns.push(cw),
            None => grouped.push(FeatureWeights {
                feature: col.attribute.clone(),
                columns: vec![cw],
            }),
        }
    }
    let mut model = LinearClassifier {
        weights: grouped,
        intercept: b,
        hyperparameters: *config,
        label_rule: data.label_rule,
        training: TrainingSummary {
            seed,
            epochs_run,
            converged,
            gradient_norm: gnorm,
            final_loss: loss,
            train_accuracy: 0.0,
            test_accuracy: 0.0,
        },
    };
    model.training.train_accuracy = model.accuracy_on(&data.x_train, &data.y_train);
    model.training.test_accuracy = model.accuracy_on(&data.x_test, &data.y_test);
    Ok(model)
}

impl LinearClassifier {
    pub fn features(&self) -> Vec<String> {
        self.weights.iter().map(|f| f.feature.clone()).collect()
    }

    fn flat_weights(&self) -> impl Iterator<Item = &ColumnWeight> {
        self.weights.iter().flat_map(|f| f.columns.iter())
    }

    /// Probability of class 1 for an already standardized row.
    pub fn probability_encoded(&self, x: &[f64]) -> f64 {
        let z: f64 = self.flat_weights().zip(x).map(|(c, xi)| c.weight * xi).sum::<f64>() + self.intercept;
        sigmoid(z)
    }

    /// Probability of class 1 for a raw record, standardized with stored statistics.
    pub fn probability(&self, record: &RawStudentRecord) -> f64 {
        let mut z = self.intercept;
        for f in &self.weights {
            let ai = attribute_index(&f.feature).expect("model features come from the schema");
            for c in &f.columns {
                z += c.weight * (c.column.raw(record, ai) - c.column.mean) / c.column.std;
            }
        }
        sigmoid(z)
    }

    pub fn predict(&self, record: &RawStudentRecord) -> Label {
        Label::from_bool(self.probability(record) >= 0.5)
    }

    pub fn accuracy_on(&self, x: &[Vec<f64>], y: &[Label]) -> f64 {
        if x.is_empty() {
            return f64::NAN;
        }
        let hits = x
            .iter()
            .zip(y)
            .filter(|(xi, yi)| Label::from_bool(self.probability_encoded(xi) >= 0.5) == **yi)
            .count();
        hits as f64 / x.len() as f64
    }

    pub fn accuracy(&self, records: &[RawStudentRecord]) -> f64 {
        let hits = records
            .iter()
            .filter(|r| self.predict(r) == self.label_rule.label(r))
            .count();
        hits as f64 / records.len() as f64
    }

    /// Attributes ordered by their largest absolute standardized coefficient.
    pub fn importance(&self) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> = self
            .weights
            .iter()
            .map(|f| {
                let m = f.columns.iter().map(|c| c.weight.abs()).fold(0.0, f64::max);
                (f.feature.clone(), m)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked
    }
}

pub fn rank_and_select_features(model: &LinearClassifier, k: usize) -> Result<Vec<String>> {
    let ranked = model.importance();
    if k == 0 || k > ranked.len() {
        return Err(DataError::Parameter(format!(
            "cannot select {k} of {} features",
            ranked.len()
        )));
    }
    Ok(ranked.into_iter().take(k).map(|(f, _)| f).collect())
}

/// Study features absent from a selection (a soft check; mismatches are reported, not fatal).
pub fn missing_study_features(selected: &[String]) -> Vec<String> {
    STUDY_FEATURES
        .iter()
        .filter(|f| !selected.iter().any(|s| s == *f))
        .map(|f| f.to_string())
        .collect()
}

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfidenceBin {
    #[serde(rename = "C_L")]
    Low,
    #[serde(rename = "C_H")]
    High,
}

impl ConfidenceBin {
    pub fn of(confidence: f64, threshold: f64) -> Self {
        if confidence >= threshold {
            ConfidenceBin::High
        } else {
            ConfidenceBin::Low
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ConfidenceBin::Low => "low",
            ConfidenceBin::High => "high",
        }
    }
}

impl fmt::Display for ConfidenceBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceBin::Low => "C_L",
            ConfidenceBin::High => "C_H",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AiAdvice {
    /// Label shown to the decision-maker.
    pub shown: Label,
    pub model_label: Label,
    /// Model probability of class 1.
    pub probability: f64,
    pub confidence: f64,
    pub bin: ConfidenceBin,
    pub flipped: bool,
}

impl AiAdvice {
    pub fn from_probability(p: f64, threshold: f64, flip: bool) -> Self {
        let model_label = Label::from_bool(p >= 0.5);
        let confidence = p.max(1.0 - p);
        Self {
            shown: if flip { model_label.flip() } else { model_label },
            model_label,
            probability: p,
            confidence,
            bin: ConfidenceBin::of(confidence, threshold),
            flipped: flip,
        }
    }

    pub fn flipped(self) -> Self {
        Self {
            shown: self.shown.flip(),
            flipped: !self.flipped,
            ..self
        }
    }
}

pub fn advise(model: &LinearClassifier, record: &RawStudentRecord, threshold: f64, flip: bool) -> AiAdvice {
    AiAdvice::from_probability(model.probability(record), threshold, flip)
}

/// Discretized view of the ten participant-visible attributes.
pub mod human_view {
    use super::*;

    pub fn names() -> Vec<String> {
        STUDY_FEATURES.iter().map(|s| s.to_string()).collect()
    }

    pub fn cardinalities() -> Vec<usize> {
        STUDY_FEATURES.iter().map(|f| cardinality(f)).collect()
    }

    pub fn cardinality(feature: &str) -> usize {
        match feature {
            "absences" => 4,
            "failures" => 4,
            other => {
                let i = attribute_index(other).expect("study feature in schema");
                match SCHEMA[i].kind {
                    AttributeKind::Nominal(c) => c.len(),
                    AttributeKind::Integer { min, max } => (max - min + 1) as usize,
                }
            }
        }
    }

    /// Absences binned as {0}, 1-4, 5-10, 11+.
    pub fn absence_bin(v: i32) -> u32 {
        match v {
            0 => 0,
            1..=4 => 1,
            5..=10 => 2,
            _ => 3,
        }
    }

    pub fn encode(record: &RawStudentRecord) -> Vec<u32> {
        STUDY_FEATURES
            .iter()
            .map(|f| {
                let i = attribute_index(f).expect("study feature in schema");
                let v = record.values[i];
                match *f {
                    "absences" => absence_bin(v),
                    "failures" => v.min(3) as u32,
                    _ => match SCHEMA[i].kind {
                        AttributeKind::Nominal(_) => v as u32,
                        AttributeKind::Integer { min, .. } => (v - min) as u32,
                    },
                }
            })
            .collect()
    }

    /// Human-readable value labels, in display order.
    pub fn describe(record: &RawStudentRecord) -> BTreeMap<String, String> {
        STUDY_FEATURES
            .iter()
            .map(|f| {
                let i = attribute_index(f).expect("study feature in schema");
                (f.to_string(), record.display(i))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> RawStudentRecord {
        let mut values = Vec::new();
        for a in SCHEMA.iter() {
            values.push(match a.kind {
                AttributeKind::Nominal(_) => 0,
                AttributeKind::Integer { min, .. } => min,
            });
        }
        RawStudentRecord {
            subject: Subject::Math,
            values,
        }
    }

    #[test]
    fn label_boundary() {
        let mut r = sample_record();
        r.values[G3_INDEX] = 10;
        assert_eq!(LabelRule::default().label(&r), Label::One);
        r.values[G3_INDEX] = 9;
        assert_eq!(LabelRule::default().label(&r), Label::Zero);
        r.values[G3_INDEX] = 0;
        assert_eq!(LabelRule::default().label(&r), Label::Zero);
    }

    #[test]
    fn advice_definitions() {
        let a = AiAdvice::from_probability(0.9, 0.75, false);
        assert_eq!((a.shown, a.confidence, a.bin), (Label::One, 0.9, ConfidenceBin::High));
        let a = AiAdvice::from_probability(0.6, 0.75, true);
        assert_eq!(a.shown, Label::Zero);
        assert_eq!(a.model_label, Label::One);
        assert_eq!(a.bin, ConfidenceBin::Low);
        assert!(a.flipped);
        assert_eq!(AiAdvice::from_probability(0.75, 0.75, false).bin, ConfidenceBin::High);
        assert_eq!(AiAdvice::from_probability(0.25, 0.75, false).bin, ConfidenceBin::High);
        assert_eq!(a.flipped().flipped(), a);
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let (a, b) = split_indices(1044, 0.7, 5);
        assert_eq!(a.len(), 731);
        assert_eq!(b.len(), 313);
        assert_eq!(split_indices(1044, 0.7, 5), (a, b));
    }

    #[test]
    fn human_view_domains() {
        let r = sample_record();
        let enc = human_view::encode(&r);
        let cards = human_view::cardinalities();
        assert_eq!(enc.len(), 10);
        assert!(enc.iter().zip(&cards).all(|(v, c)| (*v as usize) < *c));
        assert_eq!(human_view::absence_bin(4), 1);
        assert_eq!(human_view::absence_bin(5), 2);
        assert_eq!(human_view::absence_bin(11), 3);
    }

    #[test]
    fn reduced_features_are_seven() {
        assert_eq!(reduced_features().len(), 7);
        assert_eq!(candidate_features().len(), 30);
    }
}
