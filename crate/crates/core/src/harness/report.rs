//! Rendering and parsing of metric tables.
//!
//! Text and CSV carry every field of [`StratifiedMetrics`], floats in their
//! shortest round-trip form, so both parse back to identical values. An empty
//! cell renders as `null`; a field that does not apply (agreement without a
//! shown AI) renders as `-` in text and as an empty CSV field.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{CellKey, CellMetrics, GroupMetrics, StratifiedMetrics, Stratum};
use super::plan::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Text,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected json, text or csv)")),
        }
    }
}

pub const COLUMNS: [&str; 11] = [
    "group",
    "group_sessions",
    "cell",
    "sessions",
    "trials",
    "correct",
    "agreed",
    "accuracy",
    "accuracy_se",
    "agreement",
    "agreement_se",
];

pub const METRICS_KIND: &str = "stratified_metrics";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

fn opt2<T: ToString>(v: Option<Option<T>>, absent: &str) -> String {
    match v {
        None => absent.to_string(),
        Some(inner) => opt(inner),
    }
}

fn row(g: &GroupMetrics, c: &CellMetrics, absent: &str) -> Vec<String> {
    vec![
        g.group.name().to_string(),
        g.sessions.to_string(),
        c.cell.to_string(),
        c.sessions.to_string(),
        c.trials.to_string(),
        c.correct.to_string(),
        c.agreed.map_or_else(|| absent.to_string(), |a| a.to_string()),
        opt(c.accuracy),
        opt(c.accuracy_se),
        opt2(c.agreement, absent),
        opt2(c.agreement_se, absent),
    ]
}

fn rows(m: &StratifiedMetrics, absent: &str) -> Vec<Vec<String>> {
    m.groups
        .iter()
        .flat_map(|g| g.cells.iter().map(move |c| row(g, c, absent)))
        .collect()
}

pub fn render(m: &StratifiedMetrics, format: Format) -> String {
    match format {
        Format::Json => crate::schema::to_document(METRICS_KIND, m).expect("metrics serialize"),
        Format::Text => render_text(m),
        Format::Csv => render_csv(m),
    }
}

pub fn render_text(m: &StratifiedMetrics) -> String {
    let mut table = vec![COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    table.extend(rows(m, "-"));
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| table.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &table {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, w))| if i < 3 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn render_csv(m: &StratifiedMetrics) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows(m, "") {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, String> {
    if s == "null" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad value `{s}`"))
    }
}

fn parse_opt2<T: std::str::FromStr>(s: &str, absent: &str) -> Result<Option<Option<T>>, String> {
    if s == absent {
        Ok(None)
    } else {
        parse_opt(s).map(Some)
    }
}

fn from_rows(rows: Vec<Vec<String>>, absent: &str) -> Result<StratifiedMetrics, String> {
    let mut groups: Vec<GroupMetrics> = Vec::new();
    for (n, r) in rows.into_iter().enumerate() {
        if r.len() != COLUMNS.len() {
            return Err(format!("row {}: expected {} fields, found {}", n + 1, COLUMNS.len(), r.len()));
        }
        let num = |i: usize| r[i].parse::<u64>().map_err(|_| format!("row {}: bad {} `{}`", n + 1, COLUMNS[i], r[i]));
        let group = Group::parse(&r[0]).ok_or_else(|| format!("row {}: unknown group `{}`", n + 1, r[0]))?;
        let cell = CellMetrics {
            cell: r[2].parse::<CellKey>()?,
            sessions: num(3)?,
            trials: num(4)?,
            correct: num(5)?,
            agreed: if r[6] == absent { None } else { Some(num(6)?) },
            accuracy: parse_opt(&r[7])?,
            accuracy_se: parse_opt(&r[8])?,
            agreement: parse_opt2(&r[9], absent)?,
            agreement_se: parse_opt2(&r[10], absent)?,
        };
        let sessions = num(1)?;
        match groups.last_mut() {
            Some(g) if g.group == group => g.cells.push(cell),
            _ => groups.push(GroupMetrics {
                group,
                sessions,
                cells: vec![cell],
            }),
        }
    }
    Ok(StratifiedMetrics { groups })
}

pub fn parse_text(text: &str) -> Result<StratifiedMetrics, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split_whitespace().collect();
    if header != COLUMNS {
        return Err("unexpected header".into());
    }
    from_rows(
        lines.map(|l| l.split_whitespace().map(str::to_string).collect()).collect(),
        "-",
    )
}

pub fn parse_csv(text: &str) -> Result<StratifiedMetrics, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err("unexpected header".into());
    }
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()).map_err(|e| e.to_string()))
        .collect::<Result<Vec<Vec<String>>, String>>()?;
    from_rows(rows, "")
}

pub fn parse(text: &str, format: Format) -> Result<StratifiedMetrics, String> {
    match format {
        Format::Json => crate::schema::from_document(METRICS_KIND, text).map_err(|e| e.to_string()),
        Format::Text => parse_text(text),
        Format::Csv => parse_csv(text),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub group: Group,
    pub accuracy: Option<f64>,
    pub accuracy_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

/// Plot-ready series: overall, C_L wrong, C_H wrong, C_H correct, C_L correct.
pub fn figure_series(m: &StratifiedMetrics) -> Vec<Series> {
    let keys = std::iter::once(CellKey::Overall).chain(Stratum::ALL.into_iter().map(CellKey::Stratum));
    keys.map(|k| Series {
        name: k.to_string(),
        points: m
            .groups
            .iter()
            .filter_map(|g| {
                g.cell(k).map(|c| SeriesPoint {
                    group: g.group,
                    accuracy: c.accuracy,
                    accuracy_se: c.accuracy_se,
                    agreement: c.agreement,
                })
            })
            .collect(),
    })
    .collect()
}
