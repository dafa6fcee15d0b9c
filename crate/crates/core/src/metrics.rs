//! Set-based precision, recall and F1 between predicted and gold entity sets.
//!
//! Empty-set conventions: precision is 1 when nothing is predicted, recall is 1
//! when the gold set is empty, and F1 is 0 whenever `p + r = 0`. Two empty
//! sets therefore score P = R = F1 = 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        Prf { p, r, f1: harmonic(p, r) }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DocScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let Prf { p, r, f1 } = Prf::from_counts(tp, fp, fn_);
        DocScore { tp, fp, fn_, precision: p, recall: r, f1 }
    }

    pub fn prf(&self) -> Prf {
        Prf { p: self.precision, r: self.recall, f1: self.f1 }
    }
}

pub fn prf1<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> DocScore {
    let tp = pred.intersection(gold).count();
    DocScore::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub per_doc: Vec<DocScore>,
    /// From summed counts.
    pub micro: DocScore,
    /// Means of per-document P, R and F1.
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub n_docs: usize,
}

pub fn aggregate(scores: &[DocScore]) -> Result<DatasetReport> {
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (tp, fp, fn_) = scores.iter().fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
    let n = scores.len() as f64;
    let mean = |f: fn(&DocScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(DatasetReport {
        per_doc: scores.to_vec(),
        micro: DocScore::from_counts(tp, fp, fn_),
        macro_: Prf { p: mean(|s| s.precision), r: mean(|s| s.recall), f1: mean(|s| s.f1) },
        n_docs: scores.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Precision,
    Recall,
    F1,
}

impl DatasetReport {
    pub fn summary(&self, agg: Aggregation) -> Prf {
        match agg {
            Aggregation::Micro => self.micro.prf(),
            Aggregation::Macro => self.macro_,
        }
    }

    pub fn metric(&self, agg: Aggregation, metric: Metric) -> f64 {
        let s = self.summary(agg);
        match metric {
            Metric::Precision => s.p,
            Metric::Recall => s.r,
            Metric::F1 => s.f1,
        }
    }
}

pub fn unweighted_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Unweighted mean of one metric across datasets.
pub fn cross_dataset_average(reports: &[(String, DatasetReport)], agg: Aggregation, metric: Metric) -> Result<f64> {
    let v: Vec<f64> = reports.iter().map(|(_, r)| r.metric(agg, metric)).collect();
    unweighted_mean(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    /// F1 per dataset plus the cross-dataset average.
    F1,
    /// Precision and recall per dataset plus their averages.
    PrecisionRecall,
}

impl std::str::FromStr for ReportStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" | "table2" => Ok(ReportStyle::F1),
            "pr" | "table4" => Ok(ReportStyle::PrecisionRecall),
            other => Err(Error::Config(format!("unknown report style {other:?}"))),
        }
    }
}

/// Fixed-width table of percentages with one decimal place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ScoreTable {
    pub fn render(&self) -> String {
        let label_w = self.rows.iter().map(|(l, _)| l.chars().count()).chain([5]).max().unwrap_or(5);
        let col_w: Vec<usize> = self.columns.iter().map(|c| c.chars().count().max(5)).collect();
        let mut s = String::new();
        let _ = write!(s, "{:<label_w$}", "");
        for (c, w) in self.columns.iter().zip(&col_w) {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
        for (label, vals) in &self.rows {
            let _ = write!(s, "{label:<label_w$}");
            for (v, w) in vals.iter().zip(&col_w) {
                let _ = write!(s, "  {:>w$.1}", v);
            }
            s.push('\n');
        }
        s
    }
}

/// Table with a micro and a macro row for one system.
pub fn format_report(system: &str, reports: &[(String, DatasetReport)], style: ReportStyle) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut table = ScoreTable::default();
    let metrics: &[(Metric, &str)] = match style {
        ReportStyle::F1 => &[(Metric::F1, "")],
        ReportStyle::PrecisionRecall => &[(Metric::Precision, " P"), (Metric::Recall, " R")],
    };
    for (name, _) in reports {
        for (_, suffix) in metrics {
            table.columns.push(format!("{name}{suffix}"));
        }
    }
    for (_, suffix) in metrics {
        table.columns.push(format!("Avg.{suffix}"));
    }
    for agg in [Aggregation::Micro, Aggregation::Macro] {
        let mut vals = Vec::new();
        for (_, r) in reports {
            for (m, _) in metrics {
                vals.push(100.0 * r.metric(agg, *m));
            }
        }
        for (m, _) in metrics {
            vals.push(100.0 * cross_dataset_average(reports, agg, *m)?);
        }
        let tag = match agg {
            Aggregation::Micro => "micro",
            Aggregation::Macro => "macro",
        };
        table.rows.push((format!("{system} ({tag})"), vals));
    }
    Ok(table.render())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub micro: Prf,
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub n_docs: usize,
}

/// `{dataset → {micro, macro, n_docs}}`.
pub fn json_report(reports: &[(String, DatasetReport)]) -> BTreeMap<String, DatasetSummary> {
    reports
        .iter()
        .map(|(n, r)| (n.clone(), DatasetSummary { micro: r.micro.prf(), macro_: r.macro_, n_docs: r.n_docs }))
        .collect()
}
