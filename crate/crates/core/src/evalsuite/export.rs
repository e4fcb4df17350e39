//! CSV and JSON-lines export of episode logs and reports.
//!
//! Both formats carry one row per step with the episode fields repeated, so
//! a file can be filtered with ordinary tools. Floats are written in their
//! shortest round-trip form, which makes re-import lossless.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpisodeLog, EvalError, EvalReport, Outcome, StepRecord};
use crate::env::Variant;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "schema_version,policy,variant,trial,seed,initial_distance,outcome,first_contact,\
step,ee_x,ee_y,ee_z,target_x,target_y,target_z,distance,force_x,force_y,force_z,contact,\
a_1,a_2,a_3,a_4,a_axial,reward";

pub const REPORT_CSV_HEADER: &str = "schema_version,policy,variant,trials,successes,sr,ae,ae_all";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "jsonl" | "json-lines" => Some(Format::JsonLines),
            _ => None,
        }
    }
}

/// One exported line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub schema_version: u32,
    pub policy: String,
    pub variant: Variant,
    pub trial: usize,
    pub seed: u64,
    pub initial_distance: f64,
    pub outcome: Outcome,
    pub first_contact: Option<usize>,
    #[serde(flatten)]
    pub record: StepRecord,
}

fn rows(logs: &[EpisodeLog]) -> impl Iterator<Item = Row> + '_ {
    logs.iter().flat_map(|l| {
        l.records.iter().map(move |r| Row {
            schema_version: SCHEMA_VERSION,
            policy: l.policy.clone(),
            variant: l.variant,
            trial: l.trial,
            seed: l.seed,
            initial_distance: l.initial_distance,
            outcome: l.outcome,
            first_contact: l.first_contact,
            record: r.clone(),
        })
    })
}

/// Groups consecutive rows of the same episode back into logs.
fn group(rows: Vec<Row>) -> Result<Vec<EpisodeLog>, EvalError> {
    let mut logs: Vec<EpisodeLog> = Vec::new();
    for row in rows {
        if row.schema_version != SCHEMA_VERSION {
            return Err(EvalError::Parse(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                row.schema_version
            )));
        }
        let same = logs.last().is_some_and(|l| {
            l.policy == row.policy && l.variant == row.variant && l.trial == row.trial && l.seed == row.seed
        });
        if same {
            logs.last_mut().unwrap().records.push(row.record);
        } else {
            logs.push(EpisodeLog {
                policy: row.policy,
                variant: row.variant,
                trial: row.trial,
                seed: row.seed,
                initial_distance: row.initial_distance,
                records: vec![row.record],
                outcome: row.outcome,
                first_contact: row.first_contact,
            });
        }
    }
    Ok(logs)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn logs_to_csv(logs: &[EpisodeLog]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows(logs) {
        let rec = &r.record;
        let mut fields: Vec<String> = vec![
            r.schema_version.to_string(),
            r.policy.clone(),
            r.variant.name().to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.initial_distance.to_string(),
            r.outcome.name().to_string(),
            fmt_opt(r.first_contact),
            rec.step.to_string(),
        ];
        fields.extend(rec.ee.iter().chain(&rec.target).map(|v| v.to_string()));
        fields.push(rec.distance.to_string());
        fields.extend(rec.force.iter().map(|v| v.to_string()));
        fields.push(u8::from(rec.contact).to_string());
        fields.extend(rec.action.iter().map(|v| v.to_string()));
        fields.push(rec.reward.to_string());
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn logs_from_csv(text: &str) -> Result<Vec<EpisodeLog>, EvalError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => return Err(EvalError::Parse(format!("unexpected CSV header: {h}"))),
        None => return Err(EvalError::Parse("empty CSV".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 26 {
            return Err(EvalError::Parse(format!("line {lineno}: {} fields, expected 26", f.len())));
        }
        let bad = |what: &str| EvalError::Parse(format!("line {lineno}: bad {what}"));
        let num = |k: usize, what: &str| f[k].parse::<f64>().map_err(|_| bad(what));
        let int = |k: usize, what: &str| f[k].parse::<usize>().map_err(|_| bad(what));
        let arr3 = |k: usize, what: &str| -> Result<[f64; 3], EvalError> { Ok([num(k, what)?, num(k + 1, what)?, num(k + 2, what)?]) };
        let mut action = [0.0; 5];
        for (j, a) in action.iter_mut().enumerate() {
            *a = num(20 + j, "action")?;
        }
        out.push(Row {
            schema_version: f[0].parse().map_err(|_| bad("schema_version"))?,
            policy: f[1].to_string(),
            variant: Variant::parse(f[2]).ok_or_else(|| bad("variant"))?,
            trial: int(3, "trial")?,
            seed: f[4].parse().map_err(|_| bad("seed"))?,
            initial_distance: num(5, "initial_distance")?,
            outcome: Outcome::parse(f[6]).ok_or_else(|| bad("outcome"))?,
            first_contact: if f[7].is_empty() { None } else { Some(int(7, "first_contact")?) },
            record: StepRecord {
                step: int(8, "step")?,
                ee: arr3(9, "ee")?,
                target: arr3(12, "target")?,
                distance: num(15, "distance")?,
                force: arr3(16, "force")?,
                contact: match f[19] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad("contact")),
                },
                action,
                reward: num(25, "reward")?,
            },
        });
    }
    group(out)
}

pub fn logs_to_jsonl(logs: &[EpisodeLog]) -> String {
    let mut s = String::new();
    for r in rows(logs) {
        s.push_str(&serde_json::to_string(&r).expect("rows serialize"));
        s.push('\n');
    }
    s
}

pub fn logs_from_jsonl(text: &str) -> Result<Vec<EpisodeLog>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| EvalError::Parse(format!("line {}: {e}", i + 1)))?);
    }
    group(out)
}

pub fn export_logs(logs: &[EpisodeLog], path: &Path, format: Format) -> Result<(), EvalError> {
    let text = match format {
        Format::Csv => logs_to_csv(logs),
        Format::JsonLines => logs_to_jsonl(logs),
    };
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn import_logs(path: &Path, format: Format) -> Result<Vec<EpisodeLog>, EvalError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    match format {
        Format::Csv => logs_from_csv(&text),
        Format::JsonLines => logs_from_jsonl(&text),
    }
}

/// Summary lines, one per report. AE over successes and over all trials
/// are both written.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&format!(
            "{SCHEMA_VERSION},{},{},{},{},{},{},{}\n",
            r.policy,
            r.variant.name(),
            r.trials,
            r.successes,
            r.sr,
            r.ae.map_or(String::new(), |v| v.to_string()),
            r.ae_all
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(io_err(path))
}
