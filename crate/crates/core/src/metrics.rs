//! Confusion matrices and the usual emotion-recognition scores: weighted
//! accuracy (WA), unweighted accuracy / average recall (UA), per-class and
//! macro F1, plus mean and sample standard deviation across folds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmotionLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Elementwise sum; used to merge evaluation shards.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.k() != other.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: other.k(),
            });
        }
        Ok(ConfusionMatrix {
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    /// Delimited text with class names on both axes.
    pub fn to_csv(&self) -> String {
        let names = class_names(self.k());
        let mut out = String::from("true\\pred");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty confusion matrix file".into()))?;
        let k = header.split(',').count() - 1;
        let mut counts = Vec::with_capacity(k);
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != k + 1 {
                return Err(Error::Format(format!("confusion row has {} cells, want {}", cells.len(), k + 1)));
            }
            let row = cells[1..]
                .iter()
                .map(|c| {
                    c.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Format(format!("bad count `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        if counts.len() != k {
            return Err(Error::Format(format!("expected {k} rows, got {}", counts.len())));
        }
        Ok(ConfusionMatrix { counts })
    }
}

pub(crate) fn class_names(k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            EmotionLabel::from_index(i)
                .map(|l| l.as_str().to_owned())
                .unwrap_or_else(|| format!("class{i}"))
        })
        .collect()
}

pub fn confusion_from_pairs(pairs: &[(EmotionLabel, EmotionLabel)]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::zeros(NUM_CLASSES);
    for &(t, p) in pairs {
        cm.add(t.index(), p.index());
    }
    cm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wa: f64,
    pub ua: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    /// Set when some true class has no samples; its recall counts as 0.
    pub degenerate: bool,
    pub confusion: ConfusionMatrix,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidInput("confusion matrix is empty".into()));
    }
    let k = cm.k();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut recall = Vec::with_capacity(k);
    let mut precision = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    let mut degenerate = false;
    for c in 0..k {
        let tp = cm.counts[c][c];
        let row = cm.row_sum(c);
        degenerate |= row == 0;
        let r = ratio(tp, row);
        let p = ratio(tp, cm.col_sum(c));
        recall.push(r);
        precision.push(p);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricsReport {
        wa: cm.trace() as f64 / total as f64,
        ua: mean(&recall),
        macro_f1: mean(&f1),
        per_class_f1: f1,
        per_class_recall: recall,
        per_class_precision: precision,
        degenerate,
        confusion: cm.clone(),
    })
}

impl MetricsReport {
    /// Named scalar view used by fold summaries, in a fixed order.
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let names = class_names(self.per_class_f1.len());
        let mut out = vec![
            ("wa".to_owned(), self.wa),
            ("ua".to_owned(), self.ua),
            ("macro_f1".to_owned(), self.macro_f1),
        ];
        for (n, v) in names.iter().zip(&self.per_class_f1) {
            out.push((format!("f1_{n}"), *v));
        }
        for (n, v) in names.iter().zip(&self.per_class_recall) {
            out.push((format!("recall_{n}"), *v));
        }
        out
    }

    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json_line(text: &str) -> Result<Self> {
        let line = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Format("empty metrics file".into()))?;
        serde_json::from_str(line).map_err(|e| Error::Format(format!("metrics record: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    /// Sample standard deviation (n - 1); absent for a single fold.
    pub std: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub reports: Vec<MetricsReport>,
    pub stats: BTreeMap<String, MetricStat>,
    /// Metric names in report order.
    pub order: Vec<String>,
}

pub fn summarize(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    // Shifted by the first value so a constant list averages to itself exactly.
    let pivot = values.first().copied().unwrap_or(0.0);
    let mean = pivot + values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    MetricStat {
        mean,
        std,
        values: values.to_vec(),
    }
}

pub fn fold_summary(reports: &[MetricsReport]) -> Result<FoldSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidInput("fold summary needs at least one report".into()))?;
    let order: Vec<String> = first.scalars().into_iter().map(|(n, _)| n).collect();
    let per_report: Vec<Vec<(String, f64)>> = reports.iter().map(|r| r.scalars()).collect();
    let stats = order
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<f64> = per_report.iter().map(|s| s[i].1).collect();
            (name.clone(), summarize(&values))
        })
        .collect();
    Ok(FoldSummary {
        reports: reports.to_vec(),
        stats,
        order,
    })
}

impl FoldSummary {
    pub fn get(&self, name: &str) -> Option<&MetricStat> {
        self.stats.get(name)
    }

    /// One JSON record per metric, in report order.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for name in &self.order {
            let s = &self.stats[name];
            let rec = serde_json::json!({
                "metric": name,
                "mean": s.mean,
                "std": s.std,
                "folds": s.values,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}
