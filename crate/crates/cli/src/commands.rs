//! Pipeline subcommands. Each writes its outputs and a manifest under `--out`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deanchor_core::allocation::{compare_policies, grid_search_two_level, ComparisonReport, GridOptimum};
use deanchor_core::config::{CurvesSection, DataSection, RunConfig};
use deanchor_core::data::{self, RawStudentRecord, Subject, SubjectFilter};
use deanchor_core::harness::report::{self, Format, Series};
use deanchor_core::harness::StratifiedMetrics;
use deanchor_core::pipeline::{self, Calibration};
use deanchor_core::response::BetaSchedule;
use deanchor_core::schema;
use deanchor_core::synth;
use serde::{Deserialize, Serialize};

use crate::manifest::{sha256_bytes, sha256_file, OutputFile, RunManifest};
use crate::{CliError, Command, Common, OutputFormat};

pub const DATASET_KIND: &str = "dataset_summary";
pub const MODEL_KIND: &str = "linear_classifier";
pub const TRAINING_KIND: &str = "training_report";
pub const CALIBRATION_KIND: &str = "calibration";
pub const COMPARISON_KIND: &str = "policy_comparison";
pub const SERIES_KIND: &str = "figure_series";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub records: usize,
    pub by_subject: BTreeMap<Subject, usize>,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub features: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub converged: bool,
    pub epochs_run: usize,
    pub ranking: Vec<FeatureRank>,
    /// Top-k selection by importance.
    pub selected: Vec<String>,
    /// Candidate study features absent from `selected`.
    pub missing_study_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub curves: CurvesSection,
    #[serde(flatten)]
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    #[serde(flatten)]
    pub report: ComparisonReport,
    pub grid_optimum: GridOptimum,
    pub grid_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDocument {
    pub series: Vec<Series>,
}

/// Configuration with command-line overrides applied, plus the hash of the file it came from.
pub fn resolve_config(common: &Common) -> Result<(RunConfig, BTreeMap<String, String>), CliError> {
    let mut inputs = BTreeMap::new();
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            inputs.insert(path.display().to_string(), sha256_bytes(text.as_bytes()));
            RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let seed = common.seed.ok_or_else(|| {
                CliError::Config("no seed: pass --seed or a --config file with a `seed` field".into())
            })?;
            RunConfig::new(seed)
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.replications {
        if n == 0 {
            return Err(CliError::Config("--replications must be at least 1".into()));
        }
        cfg.experiment.sessions = n;
    }
    Ok((cfg, inputs))
}

fn hash_data_inputs(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) {
    if let DataSection::Uci { dir, subjects } = &cfg.data {
        for s in subjects.subjects() {
            let p = dir.join(s.file_name());
            if let Ok(h) = sha256_file(&p) {
                inputs.insert(p.display().to_string(), h);
            }
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile {
            sha256: sha256_bytes(contents.as_bytes()),
            path,
        });
        Ok(())
    }
}

fn document<T: Serialize>(kind: &str, body: &T) -> String {
    schema::to_document(kind, body).expect("report serializes")
}

fn configure_threads(threads: usize) -> Result<(), CliError> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Other(format!("cannot start {threads} worker threads: {e}")))
}

pub fn run(common: &Common, command: Command) -> Result<Vec<PathBuf>, CliError> {
    let started = Instant::now();
    configure_threads(common.threads)?;
    let (mut cfg, mut inputs) = resolve_config(common)?;
    let mut out = Outputs::new(&common.out)?;
    let fmt = common.format;
    let name = match command {
        Command::Ingest { uci_dir } => {
            if let Some(dir) = uci_dir {
                cfg.data = DataSection::Uci {
                    dir,
                    subjects: SubjectFilter::Both,
                };
            }
            hash_data_inputs(&cfg, &mut inputs);
            ingest(&cfg, fmt, &mut out)?;
            "ingest"
        }
        Command::Train => {
            hash_data_inputs(&cfg, &mut inputs);
            train(&cfg, fmt, &mut out)?;
            "train"
        }
        Command::Calibrate => {
            hash_data_inputs(&cfg, &mut inputs);
            calibrate(&cfg, fmt, &mut out)?;
            "calibrate"
        }
        Command::Simulate => {
            hash_data_inputs(&cfg, &mut inputs);
            simulate(&cfg, fmt, &mut out)?;
            "simulate"
        }
        Command::ComparePolicies => {
            compare(&cfg, fmt, &mut out)?;
            "compare-policies"
        }
        Command::Report { input } => {
            let h = sha256_file(&input).map_err(|e| CliError::Data(format!("cannot read {}: {e}", input.display())))?;
            inputs.insert(input.display().to_string(), h);
            report_cmd(&input, fmt, &mut out)?;
            "report"
        }
        Command::GenerateData => {
            generate(&cfg, &mut out)?;
            "generate-data"
        }
        Command::Session(_) => unreachable!("handled by the session client"),
    };
    let manifest = RunManifest {
        subcommand: name.to_string(),
        seed: cfg.seed,
        config: cfg,
        inputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: out.files.clone(),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    let path = common.out.join(RunManifest::file_name(name));
    fs::write(&path, manifest.to_document())
        .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
    let mut written: Vec<PathBuf> = out.files.into_iter().map(|f| f.path).collect();
    written.push(path);
    Ok(written)
}

fn summarize(cfg: &RunConfig, records: &[RawStudentRecord]) -> DatasetSummary {
    let mut by_subject = BTreeMap::new();
    for r in records {
        *by_subject.entry(r.subject).or_insert(0) += 1;
    }
    let passed = records.iter().filter(|r| r.g3() >= cfg.prepare.pass_threshold).count();
    DatasetSummary {
        source: match cfg.data {
            DataSection::Synthetic { .. } => "synthetic".into(),
            DataSection::Uci { .. } => "uci".into(),
        },
        records: records.len(),
        by_subject,
        pass_rate: if records.is_empty() { 0.0 } else { passed as f64 / records.len() as f64 },
    }
}

fn subject_name(s: Subject) -> &'static str {
    match s {
        Subject::Math => "math",
        Subject::Portuguese => "portuguese",
    }
}

fn ingest(cfg: &RunConfig, fmt: OutputFormat, out: &mut Outputs) -> Result<(), CliError> {
    let records = pipeline::load_records(cfg)?;
    let summary = summarize(cfg, &records);
    let text = match fmt {
        OutputFormat::Json => document(DATASET_KIND, &summary),
        OutputFormat::Text => {
            let mut s = format!("source {}\nrecords {}\n", summary.source, summary.records);
            for (subj, n) in &summary.by_subject {
                let _ = writeln!(s, "{} {n}", subject_name(*subj));
            }
            let _ = writeln!(s, "pass_rate {:.6}", summary.pass_rate);
            s
        }
        OutputFormat::Csv => {
            let mut s = String::from("subject,records\n");
            for (subj, n) in &summary.by_subject {
                let _ = writeln!(s, "{},{n}", subject_name(*subj));
            }
            let _ = writeln!(s, "all,{}", summary.records);
            s
        }
    };
    out.write(&format!("dataset.{}", fmt.extension()), &text)?;
    let mut buf = Vec::new();
    data::write_records(&mut buf, &records).map_err(|e| CliError::Other(e.to_string()))?;
    out.write("records.csv", &String::from_utf8(buf).expect("records are UTF-8"))
}

fn train(cfg: &RunConfig, fmt: OutputFormat, out: &mut Outputs) -> Result<(), CliError> {
    let records = pipeline::load_records(cfg)?;
    let features = pipeline::experiment_features(cfg);
    let trained = pipeline::train_model(&records, cfg, features)?;
    let model = &trained.model;
    let k = cfg.model.top_k.min(features.len());
    let selected = data::rank_and_select_features(model, k).map_err(|e| CliError::Data(e.to_string()))?;
    let report = TrainingReport {
        features: model.features(),
        train_rows: trained.data.train_rows.len(),
        test_rows: trained.data.test_rows.len(),
        train_accuracy: model.training.train_accuracy,
        test_accuracy: model.training.test_accuracy,
        converged: model.training.converged,
        epochs_run: model.training.epochs_run,
        ranking: model
            .importance()
            .into_iter()
            .map(|(feature, importance)| FeatureRank { feature, importance })
            .collect(),
        missing_study_features: data::missing_study_features(&selected),
        selected,
    };
    out.write("model.json", &document(MODEL_KIND, model))?;
    let text = match fmt {
        OutputFormat::Json => document(TRAINING_KIND, &report),
        OutputFormat::Text => {
            let mut s = format!(
                "rows train {} test {}\naccuracy train {:.4} test {:.4}\nconverged {} after {} epochs\n",
                report.train_rows,
                report.test_rows,
                report.train_accuracy,
                report.test_accuracy,
                report.converged,
                report.epochs_run
            );
            for (i, r) in report.ranking.iter().enumerate() {
                let _ = writeln!(s, "{:>2} {:<12} {:.6}", i + 1, r.feature, r.importance);
            }
            if !report.missing_study_features.is_empty() {
                let _ = writeln!(s, "not selected: {}", report.missing_study_features.join(", "));
            }
            s
        }
        OutputFormat::Csv => {
            let mut s = String::from("rank,feature,importance,selected\n");
            for (i, r) in report.ranking.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    i + 1,
                    r.feature,
                    r.importance,
                    report.selected.contains(&r.feature)
                );
            }
            s
        }
    };
    out.write(&format!("training.{}", fmt.extension()), &text)
}

fn knot_rows(name: &str, schedule: &BetaSchedule, s: &mut String) {
    for k in &schedule.knots {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            k.time,
            k.target,
            k.raw_beta,
            k.beta,
            k.achieved,
            k.achieved - k.target
        );
    }
}

fn calibrate(cfg: &RunConfig, fmt: OutputFormat, out: &mut Outputs) -> Result<(), CliError> {
    let study = pipeline::study(cfg)?;
    let design = pipeline::build_design(cfg, &study.pool)?;
    let source = pipeline::calibration_source(cfg, &design, &study.pool)?;
    let calibration = pipeline::calibrate(cfg, &study.agent, &source)?;
    let report = CalibrationReport {
        curves: cfg.curves.clone(),
        calibration,
    };
    out.write("calibration.json", &document(CALIBRATION_KIND, &report))?;
    let schedules: Vec<(&str, &BetaSchedule)> = std::iter::once(("default", &report.calibration.default))
        .chain(report.calibration.explained.iter().map(|e| ("explained", e)))
        .collect();
    match fmt {
        OutputFormat::Json => Ok(()),
        OutputFormat::Text => {
            let mut s = format!("baseline_agreement {:.6}\n", report.calibration.baseline_agreement);
            for (name, sch) in &schedules {
                let _ = writeln!(s, "{name} residual_rmse {:.6}", sch.residual_rmse);
                for k in &sch.knots {
                    let _ = writeln!(
                        s,
                        "  t={:>5} target {:.4} achieved {:.4} beta {:.6}",
                        k.time, k.target, k.achieved, k.beta
                    );
                }
            }
            out.write("calibration.txt", &s)
        }
        OutputFormat::Csv => {
            let mut s = String::from("schedule,time,target,raw_beta,beta,achieved,residual\n");
            for (name, sch) in &schedules {
                knot_rows(name, sch, &mut s);
            }
            out.write("calibration.csv", &s)
        }
    }
}

fn simulate(cfg: &RunConfig, fmt: OutputFormat, out: &mut Outputs) -> Result<(), CliError> {
    let sim = pipeline::simulate(cfg, cfg.output.trial_log)?;
    out.write(
        &format!("metrics.{}", fmt.extension()),
        &report::render(&sim.output.metrics, fmt.into()),
    )?;
    if let Some(records) = &sim.output.records {
        let mut s = String::new();
        for r in records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        out.write("trials.jsonl", &s)?;
    }
    Ok(())
}

fn compare(cfg: &RunConfig, fmt: OutputFormat, out: &mut Outputs) -> Result<(), CliError> {
    let alloc = cfg
        .allocation
        .as_ref()
        .ok_or_else(|| CliError::Config("compare-policies needs an `allocation` section in the configuration".into()))?;
    let budget_err = |e: deanchor_core::allocation::AllocationError| CliError::Budget(e.to_string());
    let curves = alloc.rewards.curves().map_err(|e| CliError::Config(e.to_string()))?;
    let report = compare_policies(&alloc.split, &curves, &alloc.budget).map_err(budget_err)?;
    let grid = grid_search_two_level(&alloc.split, &curves, &alloc.budget, alloc.grid_resolution).map_err(budget_err)?;
    let cmp = PolicyComparison {
        report,
        grid_optimum: grid,
        grid_resolution: alloc.grid_resolution,
    };
    let text = match fmt {
        OutputFormat::Json => document(COMPARISON_KIND, &cmp),
        OutputFormat::Text => {
            let mut s = cmp.report.render_text();
            let _ = writeln!(
                s,
                "grid optimum (resolution {} s): t_L {:.4} t_H {:.4} team_reward {:.6}",
                cmp.grid_resolution, grid.t_low, grid.t_high, grid.team_reward
            );
            s
        }
        OutputFormat::Csv => {
            let mut s = String::from("rank,policy,t_low,t_high,team_reward\n");
            for (i, p) in cmp.report.ranking.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", i + 1, p.policy.name(), p.t_low, p.t_high, p.team_reward);
            }
            s
        }
    };
    out.write(&format!("comparison.{}", fmt.extension()), &text)
}

/// Reads a metrics file, picking the parser from the extension.
pub fn read_metrics(path: &Path) -> Result<StratifiedMetrics, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        Some("txt") => Format::Text,
        _ => Format::Json,
    };
    report::parse(&text, format).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn report_cmd(input: &Path, fmt: OutputFormat, out: &mut Outputs) -> Result<(), CliError> {
    let m = read_metrics(input)?;
    out.write(&format!("report.{}", fmt.extension()), &report::render(&m, fmt.into()))?;
    let series = SeriesDocument {
        series: report::figure_series(&m),
    };
    out.write("series.json", &document(SERIES_KIND, &series))
}

fn generate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let sc = cfg
        .synth_config()
        .ok_or_else(|| CliError::Config("generate-data needs a synthetic `data` section".into()))?;
    let records = synth::generate(&sc);
    for s in [Subject::Math, Subject::Portuguese] {
        let rows: Vec<RawStudentRecord> = records.iter().filter(|r| r.subject == s).cloned().collect();
        let mut buf = Vec::new();
        data::write_records(&mut buf, &rows).map_err(|e| CliError::Other(e.to_string()))?;
        out.write(s.file_name(), &String::from_utf8(buf).expect("records are UTF-8"))?;
    }
    Ok(())
}
