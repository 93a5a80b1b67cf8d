//! Confusion-matrix evaluation: per-class precision/recall/F1, micro and
//! macro averages, Hamming loss, and the text and CSV reports built on them.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[i][j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix", "counts must be a non-empty square table"));
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&i| i != c).map(|i| self.counts[i][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.num_classes()).filter(|&j| j != c).map(|j| self.counts[c][j]).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

fn check_pairs(truths: &[usize], preds: &[usize]) -> Result<()> {
    if truths.len() != preds.len() {
        return Err(Error::shape("confusion_matrix", truths.len(), preds.len()));
    }
    if truths.is_empty() {
        return Err(Error::invalid("confusion matrix", "no samples"));
    }
    Ok(())
}

pub fn confusion_matrix(truths: &[usize], preds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    check_pairs(truths, preds)?;
    if k == 0 {
        return Err(Error::invalid("confusion matrix", "zero classes"));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= k || p >= k {
            return Err(Error::invalid("confusion matrix", format!("label {} out of range for {k} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero denominators give zero.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // Equal to 2PR/(P+R), with one rounding.
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub prf: Prf,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryReport {
    pub micro: Prf,
    pub macro_avg: Prf,
    pub hamming_loss: f64,
    pub total: u64,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> ClassReport {
    let classes = (0..cm.num_classes())
        .map(|c| ClassMetrics {
            prf: Prf::from_counts(cm.true_positives(c), cm.false_positives(c), cm.false_negatives(c)),
            support: cm.support(c),
        })
        .collect();
    ClassReport { classes }
}

pub fn averaged_metrics(cm: &ConfusionMatrix) -> SummaryReport {
    let k = cm.num_classes();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in 0..k {
        tp += cm.true_positives(c);
        fp += cm.false_positives(c);
        fn_ += cm.false_negatives(c);
    }
    let per = per_class_metrics(cm);
    let mean = |f: fn(&Prf) -> f64| per.classes.iter().map(|m| f(&m.prf)).sum::<f64>() / k as f64;
    let total = cm.total();
    SummaryReport {
        micro: Prf::from_counts(tp, fp, fn_),
        macro_avg: Prf {
            precision: mean(|p| p.precision),
            recall: mean(|p| p.recall),
            f1: mean(|p| p.f1),
        },
        hamming_loss: if total == 0 { 0.0 } else { (total - cm.trace()) as f64 / total as f64 },
        total,
    }
}

/// Fraction of positions where the prediction differs from the truth.
pub fn hamming_loss(truths: &[usize], preds: &[usize]) -> Result<f64> {
    check_pairs(truths, preds)?;
    let wrong = truths.iter().zip(preds).filter(|(t, p)| t != p).count();
    Ok(wrong as f64 / truths.len() as f64)
}

/// Confusion matrix plus derived reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub per_class: ClassReport,
    pub summary: SummaryReport,
}

impl Evaluation {
    pub fn new(class_names: Vec<String>, truths: &[usize], preds: &[usize]) -> Result<Self> {
        let confusion = confusion_matrix(truths, preds, class_names.len())?;
        Ok(Self {
            per_class: per_class_metrics(&confusion),
            summary: averaged_metrics(&confusion),
            class_names,
            confusion,
        })
    }

    pub fn render(&self) -> Result<String> {
        render_report(&self.per_class, &self.summary, &self.class_names)
    }

    pub fn to_csv(&self) -> Result<String> {
        report_csv(&self.per_class, &self.summary, &self.class_names)
    }
}

fn check_names(report: &ClassReport, names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(Error::invalid("report", "empty class list"));
    }
    if names.len() != report.classes.len() {
        return Err(Error::shape("render_report", report.classes.len(), names.len()));
    }
    Ok(())
}

/// Fixed-width table, metrics to three decimals.
pub fn render_report(report: &ClassReport, summary: &SummaryReport, names: &[String]) -> Result<String> {
    check_names(report, names)?;
    let width = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(12);
    let mut s = String::new();
    let row = |s: &mut String, label: &str, p: &Prf, support: u64| {
        writeln!(
            s,
            "{label:<width$}  {:>9.3}  {:>9.3}  {:>9.3}  {support:>7}",
            p.precision, p.recall, p.f1
        )
        .unwrap();
    };
    writeln!(s, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "Class", "Precision", "Recall", "F1-Score", "Support").unwrap();
    writeln!(s, "{}", "-".repeat(width + 44)).unwrap();
    for (name, m) in names.iter().zip(&report.classes) {
        row(&mut s, name, &m.prf, m.support);
    }
    writeln!(s, "{}", "-".repeat(width + 44)).unwrap();
    row(&mut s, "Micro Avg", &summary.micro, summary.total);
    row(&mut s, "Macro Avg", &summary.macro_avg, summary.total);
    writeln!(s, "{:<width$}  {:>9.3}", "Hamming Loss", summary.hamming_loss).unwrap();
    Ok(s)
}

/// `class,precision,recall,f1,support` rows, then `micro_avg` and
/// `macro_avg`, then `hamming_loss` with its value in the precision column.
pub fn report_csv(report: &ClassReport, summary: &SummaryReport, names: &[String]) -> Result<String> {
    check_names(report, names)?;
    let mut s = String::from("class,precision,recall,f1,support\n");
    let row = |s: &mut String, label: &str, p: &Prf, support: u64| {
        writeln!(s, "{label},{:.6},{:.6},{:.6},{support}", p.precision, p.recall, p.f1).unwrap();
    };
    for (name, m) in names.iter().zip(&report.classes) {
        row(&mut s, name, &m.prf, m.support);
    }
    row(&mut s, "micro_avg", &summary.micro, summary.total);
    row(&mut s, "macro_avg", &summary.macro_avg, summary.total);
    writeln!(s, "hamming_loss,{:.6},,,{}", summary.hamming_loss, summary.total).unwrap();
    Ok(s)
}
