//! Zero-shot evaluation results: ingestion, per-model averages and the
//! grouped comparison table.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVAL_CSV_HEADER: &str = "model,task,metric,value";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc,
    AccNorm,
    F1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::AccNorm => "acc_norm",
            Metric::F1 => "f1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "acc" => Ok(Metric::Acc),
            "acc_norm" => Ok(Metric::AccNorm),
            "f1" => Ok(Metric::F1),
            other => Err(format!(
                "unknown metric `{other}` (expected acc, acc_norm or f1)"
            )),
        }
    }
}

/// The published averages use plain accuracy only.
pub const DEFAULT_METRICS: &[Metric] = &[Metric::Acc];

/// Plain accuracy plus the F1 score of tasks that report no accuracy.
pub const ACC_WITH_F1_ONLY_TASKS: &[Metric] = &[Metric::Acc, Metric::F1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub task: String,
    pub metric: Metric,
    /// Fraction in [0, 1].
    pub value: f64,
}

/// Parses a `model,task,metric,value` file. `source` names the input in
/// error messages. Lines starting with `#` are ignored.
pub fn read_eval_csv(reader: impl Read, source: &str) -> Result<Vec<EvalRecord>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let header_line = header.position().map_or(1, |p| p.line());
    let header_text = header.iter().map(str::trim).collect::<Vec<_>>().join(",");
    if header_text != EVAL_CSV_HEADER {
        return Err(parse_err(
            header_line,
            format!("expected header `{EVAL_CSV_HEADER}`, found `{header_text}`"),
        ));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, found {}", rec.len()),
            ));
        }
        let field = |i: usize| rec[i].trim();
        if field(0).is_empty() || field(1).is_empty() {
            return Err(parse_err(line, "model and task must be non-empty".into()));
        }
        let metric: Metric = field(2).parse().map_err(|m| parse_err(line, m))?;
        let value: f64 = field(3)
            .parse()
            .map_err(|_| parse_err(line, format!("value `{}` is not a number", field(3))))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Validation(format!(
                "{source}:{line}: value {value} is outside [0, 1]"
            )));
        }
        let key = (field(0).to_string(), field(1).to_string(), metric);
        if !seen.insert(key.clone()) {
            return Err(Error::Validation(format!(
                "{source}:{line}: duplicate record ({}, {}, {})",
                key.0, key.1, key.2
            )));
        }
        out.push(EvalRecord {
            model: key.0,
            task: key.1,
            metric,
            value,
        });
    }
    Ok(out)
}

pub fn load_eval_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_eval_csv(file, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// Percent.
    pub average_acc: f64,
    pub n_tasks: usize,
}

/// Mean over the model's records whose metric is in `metrics`, in percent.
///
/// With more than one metric a task contributes only its first available
/// metric in `metrics` order, so `[Acc, F1]` adds the F1 of tasks that have
/// no accuracy without double counting the others.
pub fn average_accuracy(
    records: &[EvalRecord],
    model: &str,
    metrics: &[Metric],
) -> Result<ReportRow> {
    let mut per_task: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.model == model) {
        if let Some(rank) = metrics.iter().position(|m| *m == r.metric) {
            let slot = per_task.entry(&r.task).or_insert((usize::MAX, 0.0));
            if rank < slot.0 {
                *slot = (rank, r.value);
            }
        }
    }
    if per_task.is_empty() {
        let names: Vec<_> = metrics.iter().map(|m| m.as_str()).collect();
        return Err(Error::EmptySelection(format!(
            "no records for model `{model}` with metric in {{{}}}",
            names.join(", ")
        )));
    }
    let sum: f64 = per_task.values().map(|(_, v)| v).sum();
    Ok(ReportRow {
        model: model.to_string(),
        average_acc: 100.0 * sum / per_task.len() as f64,
        n_tasks: per_task.len(),
    })
}

/// Distinct model tags in first-seen order.
pub fn models(records: &[EvalRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.model.as_str()))
        .map(|r| r.model.clone())
        .collect()
}

/// One model in a comparison: size, data, token budget and average accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub model: String,
    pub params_b: f64,
    #[serde(default)]
    pub dataset: String,
    pub tokens_b: f64,
    pub avg_acc: f64,
}

pub fn read_comparison_csv(reader: impl Read) -> Result<Vec<ComparisonEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Grouping {
    /// Token budget only.
    Tokens,
    /// Model size and token budget.
    #[default]
    ParamsAndTokens,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub entry: ComparisonEntry,
    pub group: String,
    pub best_in_group: bool,
    pub best_overall: bool,
}

/// Rows ordered by group (ascending size, then tokens) and by descending
/// accuracy within a group. Ties for best are all marked.
pub fn comparison_table(entries: &[ComparisonEntry], grouping: Grouping) -> Vec<ComparisonRow> {
    let key = |e: &ComparisonEntry| match grouping {
        Grouping::Tokens => (0u64, e.tokens_b.to_bits()),
        Grouping::ParamsAndTokens => (e.params_b.to_bits(), e.tokens_b.to_bits()),
    };
    let label = |e: &ComparisonEntry| match grouping {
        Grouping::Tokens => format!("{}B tokens", e.tokens_b),
        Grouping::ParamsAndTokens => format!("{}B params / {}B tokens", e.params_b, e.tokens_b),
    };

    let best_overall = entries
        .iter()
        .map(|e| e.avg_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best_group: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for e in entries {
        let b = best_group.entry(key(e)).or_insert(f64::NEG_INFINITY);
        *b = b.max(e.avg_acc);
    }

    let mut rows: Vec<ComparisonRow> = entries
        .iter()
        .map(|e| ComparisonRow {
            entry: e.clone(),
            group: label(e),
            best_in_group: e.avg_acc == best_group[&key(e)],
            best_overall: e.avg_acc == best_overall,
        })
        .collect();
    let size = |e: &ComparisonEntry| match grouping {
        Grouping::Tokens => 0.0,
        Grouping::ParamsAndTokens => e.params_b,
    };
    rows.sort_by(|a, b| {
        size(&a.entry)
            .total_cmp(&size(&b.entry))
            .then(a.entry.tokens_b.total_cmp(&b.entry.tokens_b))
            .then(b.entry.avg_acc.total_cmp(&a.entry.avg_acc))
    });
    rows
}

/// Markdown rendering: best in group in `**bold**`, best overall in
/// `<u>underline</u>`.
pub fn comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("| group | model | dataset | avg acc |\n|---|---|---|---:|\n");
    for r in rows {
        let mut acc = format!("{:.2}", r.entry.avg_acc);
        if r.best_in_group {
            acc = format!("**{acc}**");
        }
        if r.best_overall {
            acc = format!("<u>{acc}</u>");
        }
        let dataset = if r.entry.dataset.is_empty() {
            "-"
        } else {
            &r.entry.dataset
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.group, r.entry.model, dataset, acc
        ));
    }
    out
}
