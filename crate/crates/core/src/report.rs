//! Scoring answers against a QA set and rendering the result tables.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DocLevel;
use crate::index::Method;
use crate::metrics::{bleu1, ef1, em_token, normalize};
use crate::rag::RagAnswer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub ground_truth: String,
    #[serde(with = "level_serde")]
    pub level: DocLevel,
}

mod level_serde {
    use crate::distill::DocLevel;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(level: &DocLevel, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match level {
            DocLevel::FileLevel => "file",
            DocLevel::FolderLevel => "folder",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DocLevel, D::Error> {
        let raw = alloc::string::String::deserialize(d)?;
        match raw.to_ascii_lowercase().as_str() {
            "file" | "filelevel" | "file-level" | "file_level" => Ok(DocLevel::FileLevel),
            "folder" | "folderlevel" | "folder-level" | "folder_level" => Ok(DocLevel::FolderLevel),
            _ => Err(serde::de::Error::custom(alloc::format!(
                "unknown level `{raw}`, expected `file` or `folder`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("item `{0}` has an empty question")]
    EmptyQuestion(String),
    #[error("item `{0}` has an empty ground truth")]
    EmptyGroundTruth(String),
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("no {1} answer for item `{0}`")]
    MissingAnswer(String, Method),
}

impl QAItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.question.trim().is_empty() {
            return Err(EvalError::EmptyQuestion(self.id.clone()));
        }
        if normalize(&self.ground_truth).is_empty() {
            return Err(EvalError::EmptyGroundTruth(self.id.clone()));
        }
        Ok(())
    }
}

pub fn validate_dataset(items: &[QAItem]) -> Result<(), EvalError> {
    let mut ids = BTreeSet::new();
    for item in items {
        item.validate()?;
        if !ids.insert(item.id.as_str()) {
            return Err(EvalError::DuplicateId(item.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu1: f64,
    pub ef1: f64,
    pub em: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub id: String,
    #[serde(with = "level_serde")]
    pub level: DocLevel,
    pub method: Method,
    pub bleu1: f64,
    pub ef1: f64,
    pub em: f64,
}

impl QuestionScore {
    fn scores(&self) -> Scores {
        Scores {
            bleu1: self.bleu1,
            ef1: self.ef1,
            em: self.em,
        }
    }
}

/// Means for one method. A level with no questions has no mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub file: Option<Scores>,
    pub folder: Option<Scores>,
    pub overall: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default)]
    pub per_question: Vec<QuestionScore>,
    pub aggregates: Vec<AggregateRow>,
    #[serde(default)]
    pub doc_counts: BTreeMap<Method, usize>,
}

fn mean<'a>(rows: impl Iterator<Item = &'a QuestionScore>) -> Option<Scores> {
    let mut n = 0usize;
    let mut sum = Scores {
        bleu1: 0.0,
        ef1: 0.0,
        em: 0.0,
    };
    for r in rows {
        n += 1;
        sum.bleu1 += r.bleu1;
        sum.ef1 += r.ef1;
        sum.em += r.em;
    }
    (n > 0).then(|| Scores {
        bleu1: sum.bleu1 / n as f64,
        ef1: sum.ef1 / n as f64,
        em: sum.em / n as f64,
    })
}

/// Scores every answer against its item's ground truth.
///
/// Answers are matched to items by question text. Every method that appears
/// in `answers` must answer every item. The overall mean is pooled over all
/// questions of a method.
pub fn evaluate(
    answers: &[RagAnswer],
    dataset: &[QAItem],
    doc_counts: BTreeMap<Method, usize>,
) -> Result<MetricReport, EvalError> {
    validate_dataset(dataset)?;
    let methods: BTreeSet<Method> = answers.iter().map(|a| a.method).collect();
    let by_key: BTreeMap<(Method, &str), &RagAnswer> = answers
        .iter()
        .map(|a| ((a.method, a.question.as_str()), a))
        .collect();

    let mut per_question = Vec::with_capacity(dataset.len() * methods.len());
    for &method in &methods {
        for item in dataset {
            let ans = by_key
                .get(&(method, item.question.as_str()))
                .ok_or_else(|| EvalError::MissingAnswer(item.id.clone(), method))?;
            let pred = normalize(&ans.answer_text);
            let truth = normalize(&item.ground_truth);
            let b =
                bleu1(&pred, &truth).map_err(|_| EvalError::EmptyGroundTruth(item.id.clone()))?;
            let em = em_token(&pred, &truth)
                .map_err(|_| EvalError::EmptyGroundTruth(item.id.clone()))?;
            per_question.push(QuestionScore {
                id: item.id.clone(),
                level: item.level,
                method,
                bleu1: b.score,
                ef1: ef1(&pred, &truth).f1,
                em,
            });
        }
    }

    let mut report = MetricReport {
        per_question,
        aggregates: Vec::new(),
        doc_counts,
    };
    report.recompute_aggregates();
    Ok(report)
}

impl MetricReport {
    /// Recomputes aggregate rows from `per_question`.
    pub fn recompute_aggregates(&mut self) {
        let methods: BTreeSet<Method> = self.per_question.iter().map(|r| r.method).collect();
        self.aggregates = methods
            .iter()
            .map(|&method| {
                let rows = || self.per_question.iter().filter(move |r| r.method == method);
                AggregateRow {
                    method,
                    file: mean(rows().filter(|r| r.level == DocLevel::FileLevel)),
                    folder: mean(rows().filter(|r| r.level == DocLevel::FolderLevel)),
                    overall: mean(rows()),
                }
            })
            .collect();
    }

    pub fn all_scores(&self) -> impl Iterator<Item = Scores> + '_ {
        self.per_question.iter().map(QuestionScore::scores)
    }
}

const METHOD_WIDTH: usize = 10;
const CELL: usize = 6;
const GROUP_GAP: &str = "   ";

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:>CELL$}", format!("{x:.2}")),
        None => format!("{:>CELL$}", "-"),
    }
}

/// Aligned plain-text table: one row per method, Bleu-1 / E-F1 / EM for
/// File, Folder and Overall.
pub fn render_scores_table(report: &MetricReport) -> String {
    let group_width = CELL * 3 + 2;
    let mut out = String::new();
    let _ = write!(out, "{:<METHOD_WIDTH$}", "");
    for (i, g) in ["File", "Folder", "Overall"].iter().enumerate() {
        if i > 0 {
            out.push_str(GROUP_GAP);
        }
        let _ = write!(out, "{g:^group_width$}");
    }
    trim_push_line(&mut out);
    let _ = write!(out, "{:<METHOD_WIDTH$}", "Method");
    for i in 0..3 {
        if i > 0 {
            out.push_str(GROUP_GAP);
        }
        let _ = write!(out, "{:>CELL$} {:>CELL$} {:>CELL$}", "Bleu-1", "E-F1", "EM");
    }
    trim_push_line(&mut out);
    for row in &report.aggregates {
        let _ = write!(out, "{:<METHOD_WIDTH$}", row.method.label());
        for (i, s) in [row.file, row.folder, row.overall].iter().enumerate() {
            if i > 0 {
                out.push_str(GROUP_GAP);
            }
            let _ = write!(
                out,
                "{} {} {}",
                cell(s.map(|s| s.bleu1)),
                cell(s.map(|s| s.ef1)),
                cell(s.map(|s| s.em))
            );
        }
        trim_push_line(&mut out);
    }
    out
}

fn trim_push_line(out: &mut String) {
    let trimmed = out.trim_end_matches(' ').len();
    out.truncate(trimmed);
    out.push('\n');
}

/// Percentage of documents saved by the implicit index relative to the
/// baseline, if both counts are known and the baseline is non-empty.
pub fn reduction_percent(counts: &BTreeMap<Method, usize>) -> Option<f64> {
    let base = *counts.get(&Method::Baseline)?;
    let imp = *counts.get(&Method::Implicit)?;
    (base > 0).then(|| (1.0 - imp as f64 / base as f64) * 100.0)
}

/// `baseline=N implicit=M reduction=R%`, with `-` for unknown parts.
pub fn reduction_line(counts: &BTreeMap<Method, usize>) -> String {
    let show = |m: Method| {
        counts
            .get(&m)
            .map(|n| n.to_string())
            .unwrap_or_else(|| "-".to_string())
    };
    let red = reduction_percent(counts)
        .map(|r| format!("{r:.1}%"))
        .unwrap_or_else(|| "-".to_string());
    format!(
        "baseline={} implicit={} reduction={}",
        show(Method::Baseline),
        show(Method::Implicit),
        red
    )
}

/// Document counts per method followed by the reduction line.
pub fn render_counts_table(counts: &BTreeMap<Method, usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<METHOD_WIDTH$}{:>10}", "Method", "Documents");
    for (m, n) in counts {
        let _ = writeln!(out, "{:<METHOD_WIDTH$}{:>10}", m.label(), n);
    }
    let _ = writeln!(out, "{}", reduction_line(counts));
    out
}

/// Both tables separated by a blank line.
pub fn render_report(report: &MetricReport) -> String {
    let mut out = render_scores_table(report);
    if !report.doc_counts.is_empty() {
        out.push('\n');
        out.push_str(&render_counts_table(&report.doc_counts));
    }
    out
}
