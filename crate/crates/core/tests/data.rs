use std::path::Path;

use deanchor_core::bias::Label;
use deanchor_core::data::{
    self, human_view, ingest_bytes, ingest_dir, prepare, rank_and_select_features, train, write_records, AiAdvice,
    ConfidenceBin, DataError, PrepareConfig, RawStudentRecord, Subject, SubjectFilter, TrainConfig, SCHEMA,
    STUDY_FEATURES,
};
use deanchor_core::synth::{generate, SynthConfig};
use proptest::prelude::*;

fn header() -> String {
    SCHEMA.iter().map(|a| a.name).collect::<Vec<_>>().join(";")
}

fn synthetic() -> Vec<RawStudentRecord> {
    generate(&SynthConfig::new(7))
}

fn csv_text(records: &[RawStudentRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).unwrap();
    String::from_utf8(buf).unwrap()
}

fn ingest(text: &str) -> data::Result<Vec<RawStudentRecord>> {
    ingest_bytes(text.as_bytes(), Path::new("student-mat.csv"), Subject::Math)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn round_trip_through_the_file_format() {
    let records = synthetic();
    assert_eq!(records.len(), 1044);
    let dir = tempfile::tempdir().unwrap();
    for subject in [Subject::Math, Subject::Portuguese] {
        let part: Vec<_> = records.iter().filter(|r| r.subject == subject).cloned().collect();
        std::fs::write(dir.path().join(subject.file_name()), csv_text(&part)).unwrap();
    }
    let back = ingest_dir(dir.path(), SubjectFilter::Both).unwrap();
    assert_eq!(back.len(), 1044);
    let mut sorted = records.clone();
    sorted.sort_by_key(|r| r.subject);
    assert_eq!(back, sorted);
    assert_eq!(ingest_dir(dir.path(), SubjectFilter::Math).unwrap().len(), 395);
    assert_eq!(ingest_dir(dir.path(), SubjectFilter::Portuguese).unwrap().len(), 649);
}

#[test]
fn quoted_and_unquoted_fields_both_parse() {
    let records = synthetic();
    let quoted = csv_text(&records[..3]);
    assert!(quoted.contains("\"GP\"") || quoted.contains("\"MS\""));
    let bare = quoted.replace('"', "");
    assert_eq!(ingest(&quoted).unwrap(), ingest(&bare).unwrap());
}

#[test]
fn empty_input_is_rejected() {
    assert!(matches!(ingest(""), Err(DataError::EmptyInput { .. })));
    assert!(matches!(ingest("  \n"), Err(DataError::EmptyInput { .. })));
}

#[test]
fn header_problems_name_the_column() {
    let text = csv_text(&synthetic()[..2]);
    let renamed = text.replacen("\"famsize\"", "\"family\"", 1);
    match ingest(&renamed) {
        Err(DataError::UnknownColumn { column, .. }) => assert_eq!(column, "family"),
        other => panic!("{other:?}"),
    }
    let h = header();
    let short = h.replace(";G3", "");
    match ingest(&format!("{short}\n")) {
        Err(DataError::MissingColumn { column, .. }) => assert_eq!(column, "G3"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_values_report_line_and_column() {
    let records = synthetic();
    let text = csv_text(&records[..3]);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let age = SCHEMA.iter().position(|a| a.name == "age").unwrap();
    let mut fields: Vec<String> = lines[2].split(';').map(String::from).collect();
    fields[age] = "30".into();
    lines[2] = fields.join(";");
    match ingest(&lines.join("\n")) {
        Err(DataError::Parse { line, column, value, .. }) => {
            assert_eq!((line, column.as_str(), value.as_str()), (3, "age", "30"));
        }
        other => panic!("{other:?}"),
    }
    let mut fields: Vec<String> = text.lines().nth(1).unwrap().split(';').map(String::from).collect();
    let sex = SCHEMA.iter().position(|a| a.name == "sex").unwrap();
    fields[sex] = "\"X\"".into();
    let bad = format!("{}\n{}\n", header(), fields.join(";"));
    match ingest(&bad) {
        Err(DataError::Parse { line, column, .. }) => assert_eq!((line, column.as_str()), (2, "sex")),
        other => panic!("{other:?}"),
    }
    let ragged = format!("{}\n\"GP\";\"F\"\n", header());
    assert!(matches!(ingest(&ragged), Err(DataError::Row { .. })));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = ingest_dir(dir.path(), SubjectFilter::Math).unwrap_err();
    assert!(matches!(err, DataError::Io { .. }));
    assert!(err.to_string().contains("student-mat.csv"));
}

#[test]
fn prepare_splits_and_standardizes() {
    let records = synthetic();
    let prepared = prepare(&records, &PrepareConfig::new(3).with_features(&STUDY_FEATURES)).unwrap();
    assert_eq!((prepared.train_rows.len(), prepared.test_rows.len()), (731, 313));
    let mut all: Vec<usize> = prepared.train_rows.iter().chain(&prepared.test_rows).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..1044).collect::<Vec<_>>());
    let n = prepared.x_train.len() as f64;
    for j in 0..prepared.columns.len() {
        let mean = prepared.x_train.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = prepared.x_train.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "{}", prepared.columns[j].name);
        assert!((var - 1.0).abs() < 1e-9, "{}", prepared.columns[j].name);
    }
    // Mjob and Fjob expand to five indicators each; the other eight are one column.
    assert_eq!(prepared.columns.len(), 18);
    for (row, &r) in prepared.test_rows.iter().enumerate() {
        let want = Label::from_bool(records[r].g3() >= 10);
        assert_eq!(prepared.y_test[row], want);
    }
}

#[test]
fn constant_columns_are_dropped_with_a_warning() {
    let mut records = synthetic();
    let medu = data::attribute_index("Medu").unwrap();
    for r in &mut records {
        r.values[medu] = 2;
    }
    let prepared = prepare(&records, &PrepareConfig::new(3).with_features(&STUDY_FEATURES)).unwrap();
    assert_eq!(prepared.warnings.len(), 1);
    assert!(prepared.warnings[0].contains("Medu"));
    assert!(prepared.columns.iter().all(|c| c.attribute != "Medu"));
}

#[test]
fn prepare_rejects_bad_requests() {
    let records = synthetic();
    assert!(matches!(
        prepare(&[], &PrepareConfig::new(0)),
        Err(DataError::NoRecords)
    ));
    assert!(matches!(
        prepare(&records, &PrepareConfig::new(0).with_features(&["G2"])),
        Err(DataError::Parameter(_))
    ));
    assert!(matches!(
        prepare(&records, &PrepareConfig::new(0).with_features(&["shoe_size"])),
        Err(DataError::UnknownFeature(f)) if f == "shoe_size"
    ));
    let mut cfg = PrepareConfig::new(0);
    cfg.train_fraction = 1.0;
    assert!(matches!(prepare(&records, &cfg), Err(DataError::Parameter(_))));
}

#[test]
fn training_reaches_a_stationary_point() {
    let records = synthetic();
    let prepared = prepare(&records, &PrepareConfig::new(11).with_features(&STUDY_FEATURES)).unwrap();
    let cfg = TrainConfig {
        epochs: 20_000,
        ..TrainConfig::default()
    };
    let model = train(&prepared, &cfg, 12).unwrap();
    assert!(model.training.converged, "{:?}", model.training);
    // Gradient of the regularized mean log loss, computed from scratch.
    let w: Vec<f64> = model.weights.iter().flat_map(|f| f.columns.iter().map(|c| c.weight)).collect();
    let n = prepared.x_train.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, y) in prepared.x_train.iter().zip(&prepared.y_train) {
        let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + model.intercept;
        let r = sigmoid(z) - f64::from(u8::from(y.is_one()));
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi / n;
        }
        gb += r / n;
    }
    let norm = (gw.iter().zip(&w).map(|(g, wi)| (g + cfg.l2 * wi).powi(2)).sum::<f64>() + gb * gb).sqrt();
    assert!(norm < 1e-5, "gradient norm {norm}");
    // Raw-record scoring agrees with the standardized rows.
    for (row, &r) in prepared.test_rows.iter().enumerate() {
        let a = model.probability(&records[r]);
        let b = model.probability_encoded(&prepared.x_test[row]);
        assert!((a - b).abs() < 1e-12);
    }
    let test: Vec<_> = prepared.test_rows.iter().map(|&r| records[r].clone()).collect();
    assert!((model.accuracy(&test) - model.training.test_accuracy).abs() < 1e-12);
    assert!(model.training.train_accuracy > 0.6 && model.training.test_accuracy > 0.6);
}

#[test]
fn training_is_deterministic_per_seed() {
    let records = synthetic();
    let prepared = prepare(&records, &PrepareConfig::new(11).with_features(&STUDY_FEATURES)).unwrap();
    let short = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let a = train(&prepared, &short, 1).unwrap();
    assert_eq!(a, train(&prepared, &short, 1).unwrap());
    assert_ne!(a.intercept, train(&prepared, &short, 2).unwrap().intercept);
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(serde_json::from_str::<data::LinearClassifier>(&json).unwrap(), a);
}

#[test]
fn training_failures_are_typed() {
    let records = synthetic();
    let prepared = prepare(&records, &PrepareConfig::new(11).with_features(&STUDY_FEATURES)).unwrap();
    let wild = TrainConfig {
        learning_rate: 1e6,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&prepared, &wild, 1), Err(DataError::Diverged { .. })));
    let bad = TrainConfig {
        learning_rate: -1.0,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&prepared, &bad, 1), Err(DataError::Parameter(_))));
    let mut one_class = prepared.clone();
    one_class.y_train = vec![Label::One; one_class.y_train.len()];
    assert!(matches!(train(&one_class, &TrainConfig::default(), 1), Err(DataError::SingleClass(Label::One))));
}

#[test]
fn ranking_prefers_signal_attributes() {
    let records = synthetic();
    let prepared = prepare(&records, &PrepareConfig::new(11)).unwrap();
    let model = train(&prepared, &TrainConfig::default(), 12).unwrap();
    let ranked = model.importance();
    assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    let top = rank_and_select_features(&model, 10).unwrap();
    let hits = top.iter().filter(|f| STUDY_FEATURES.contains(&f.as_str())).count();
    assert!(hits >= 6, "{top:?}");
    assert!(top.contains(&"failures".to_string()));
    assert!(rank_and_select_features(&model, 0).is_err());
    assert!(rank_and_select_features(&model, 1000).is_err());
    assert_eq!(data::missing_study_features(&top).len(), 10 - hits);
}

#[test]
fn advice_bins_and_flips() {
    let a = AiAdvice::from_probability(0.8, 0.75, false);
    assert_eq!((a.shown, a.bin), (Label::One, ConfidenceBin::High));
    let b = AiAdvice::from_probability(0.3, 0.75, true);
    assert_eq!((b.model_label, b.shown, b.bin), (Label::Zero, Label::One, ConfidenceBin::Low));
    assert!((b.confidence - 0.7).abs() < 1e-15);
    assert_eq!(b.flipped().shown, Label::Zero);
    assert_eq!(AiAdvice::from_probability(0.25, 0.75, false).bin, ConfidenceBin::High);
}

#[test]
fn human_view_stays_inside_declared_domains() {
    let cards = human_view::cardinalities();
    for r in synthetic() {
        let v = human_view::encode(&r);
        assert_eq!(v.len(), 10);
        assert!(v.iter().zip(&cards).all(|(x, c)| (*x as usize) < *c));
        let described = human_view::describe(&r);
        assert_eq!(described.len(), 10);
    }
    let bins: Vec<u32> = [0, 1, 4, 5, 10, 11, 93].iter().map(|&a| human_view::absence_bin(a)).collect();
    assert_eq!(bins, vec![0, 1, 1, 2, 2, 3, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn any_synthetic_sample_round_trips(seed in any::<u64>(), rows in 1usize..40) {
        let records = generate(&SynthConfig { seed, math_rows: rows, portuguese_rows: 0, effect_scale: 0.8 });
        let back = ingest(&csv_text(&records)).unwrap();
        prop_assert_eq!(back, records);
    }
}
