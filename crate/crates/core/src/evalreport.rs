//! Confusion matrices, accuracy, macro precision/recall/F1, and the CSV report.
//!
//! Undefined ratios (0/0) are reported as 0, which penalizes classes that are
//! never predicted.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthdata::{Subtype, NUM_SUBTYPES};
use crate::textio::{numbered_lines, parse_f64, parse_usize, read_text, write_text};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub stage: String,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(stage: impl Into<String>, confusion: Vec<Vec<usize>>) -> Result<Self> {
        let m = confusion.len();
        if m == 0 || confusion.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Argument("no samples to evaluate".into()));
        }
        let trace: usize = (0..m).map(|c| confusion[c][c]).sum();
        let mut precision = Vec::with_capacity(m);
        let mut recall = Vec::with_capacity(m);
        let mut f1 = Vec::with_capacity(m);
        for c in 0..m {
            let tp = confusion[c][c];
            let predicted: usize = (0..m).map(|t| confusion[t][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        Ok(Self {
            stage: stage.into(),
            accuracy: ratio(trace, total),
            precision_macro: mean(&precision),
            recall_macro: mean(&recall),
            f1_macro: mean(&f1),
            confusion,
            precision,
            recall,
            f1,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn num_samples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

pub fn confusion_matrix(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no samples to evaluate".into()));
    }
    let mut cm = vec![vec![0; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Index {
                index: p.max(t),
                len: num_classes,
            });
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

pub fn compute_metrics(
    stage: impl Into<String>,
    predictions: &[usize],
    truths: &[usize],
    num_classes: usize,
) -> Result<MetricsReport> {
    MetricsReport::from_confusion(stage, confusion_matrix(predictions, truths, num_classes)?)
}

/// Shorthand for the macro F1 of a prediction set.
pub fn macro_f1(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<f64> {
    Ok(compute_metrics("", predictions, truths, num_classes)?.f1_macro)
}

pub fn report_header() -> String {
    let mut h = String::from("stage,accuracy,precision_macro,recall_macro,f1_macro");
    for s in Subtype::ALL {
        let _ = write!(h, ",f1_{}", s.code());
    }
    h
}

pub fn reports_to_string(reports: &[MetricsReport]) -> Result<String> {
    let mut out = report_header();
    out.push('\n');
    for r in reports {
        if r.num_classes() != NUM_SUBTYPES {
            return Err(Error::Argument(format!(
                "report {:?} has {} classes; the CSV holds {NUM_SUBTYPES}-class reports",
                r.stage,
                r.num_classes()
            )));
        }
        if r.stage.is_empty() || r.stage.contains([',', '\n']) {
            return Err(Error::Argument(format!("unusable stage tag {:?}", r.stage)));
        }
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.stage, r.accuracy, r.precision_macro, r.recall_macro, r.f1_macro
        );
        for f in &r.f1 {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
    }
    for r in reports {
        let _ = writeln!(out, "\nconfusion,{}", r.stage);
        for row in &r.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn reports_from_str(path: &Path, text: &str) -> Result<Vec<MetricsReport>> {
    let header = report_header();
    let mut lines = numbered_lines(text).peekable();
    match lines.next() {
        Some((_, l)) if l == header => {}
        Some((n, l)) => return Err(Error::parse(path, n, format!("bad header {l:?}"))),
        None => return Err(Error::parse(path, 1, "empty report")),
    }
    let mut rows: Vec<(usize, String, Vec<f64>)> = Vec::new();
    while let Some(&(n, l)) = lines.peek() {
        if l.starts_with("confusion,") {
            break;
        }
        lines.next();
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != 5 + NUM_SUBTYPES {
            return Err(Error::parse(path, n, format!("expected {} fields", 5 + NUM_SUBTYPES)));
        }
        let vals = fields[1..]
            .iter()
            .map(|f| parse_f64(path, n, f))
            .collect::<Result<Vec<_>>>()?;
        rows.push((n, fields[0].to_string(), vals));
    }
    let mut reports = Vec::with_capacity(rows.len());
    for (row_line, stage, vals) in rows {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, row_line, format!("missing confusion block for {stage:?}")))?;
        if l != format!("confusion,{stage}") {
            return Err(Error::parse(path, n, format!("expected confusion block for {stage:?}")));
        }
        let mut cm = Vec::with_capacity(NUM_SUBTYPES);
        for _ in 0..NUM_SUBTYPES {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::parse(path, n, "truncated confusion block"))?;
            let row = l
                .split(',')
                .map(|f| parse_usize(path, n, f))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != NUM_SUBTYPES {
                return Err(Error::parse(path, n, "confusion row has wrong arity"));
            }
            cm.push(row);
        }
        let report = MetricsReport::from_confusion(stage, cm)?;
        let stored = [
            report.accuracy,
            report.precision_macro,
            report.recall_macro,
            report.f1_macro,
        ]
        .into_iter()
        .chain(report.f1.iter().copied());
        if stored.zip(&vals).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::parse(
                path,
                row_line,
                format!("metrics for {:?} disagree with its confusion matrix", report.stage),
            ));
        }
        reports.push(report);
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(path, n, "unexpected trailing data"));
    }
    Ok(reports)
}

pub fn write_report(reports: &[MetricsReport], path: &Path) -> Result<()> {
    write_text(path, &reports_to_string(reports)?)
}

pub fn read_report(path: &Path) -> Result<Vec<MetricsReport>> {
    reports_from_str(path, &read_text(path)?)
}

/// Appends one stage to an existing report file (or starts a new one).
pub fn append_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut all = if path.exists() { read_report(path)? } else { Vec::new() };
    all.push(report.clone());
    write_report(&all, path)
}
