use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Arch, BackboneKind};

/// Rows are the true class, columns the prediction; order (healthy, defective).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; 2]; 2]);

impl ConfusionMatrix {
    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.0[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [u64; 2] {
        [self.0[0][0] + self.0[0][1], self.0[1][0] + self.0[1][1]]
    }
}

/// Accuracy plus macro-averaged precision, recall and F1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::data("confusion matrix is empty"));
    }
    let c = &cm.0;
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for k in 0..2 {
        let p = ratio(c[k][k], c[0][k] + c[1][k]);
        let r = ratio(c[k][k], c[k][0] + c[k][1]);
        precision += p / 2.0;
        recall += r / 2.0;
        f1 += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) } / 2.0;
    }
    Ok(Metrics { accuracy: ratio(c[0][0] + c[1][1], total), precision, recall, f1 })
}

/// `argmax` over two logits; exact ties predict class 0.
pub fn predict_class<T: PartialOrd>(logits: &[T]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// Serialized result of `evaluate`, also the input row of `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arch: Arch,
    pub backbone: BackboneKind,
    pub split: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: u64,
    pub averaging: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(arch: Arch, backbone: BackboneKind, split: &str, cm: ConfusionMatrix) -> Result<Self> {
        let m = compute_metrics(&cm)?;
        Ok(EvalReport {
            arch,
            backbone,
            split: split.to_string(),
            confusion: cm,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            n: cm.total(),
            averaging: "macro".into(),
            config: serde_json::Value::Null,
        })
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { accuracy: self.accuracy, precision: self.precision, recall: self.recall, f1: self.f1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub arch: Arch,
    pub backbone: BackboneKind,
    /// Number of results averaged into this row.
    pub runs: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub backbone: BackboneKind,
    pub multi_accuracy: f64,
    pub single_accuracy: f64,
    pub multi_ge_single: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub pairs: Vec<ComparisonPair>,
    pub tolerance: f64,
    /// True when at least one multi/single pair exists and every multi-input
    /// mean accuracy is `>= single - tolerance`.
    pub multi_ge_single: bool,
    pub averaging: String,
}

/// Averages results per (arch, backbone), sorts by accuracy descending
/// (ties by arch then backbone name) and compares each backbone's
/// multi-input mean against its single-input mean.
pub fn compare_report(results: &[(Arch, BackboneKind, Metrics)], tolerance: f64) -> Result<ComparisonReport> {
    if results.len() < 2 {
        return Err(Error::invalid(format!("comparison needs at least 2 results, got {}", results.len())));
    }
    let mut groups: BTreeMap<(&str, &str), (Arch, BackboneKind, Vec<Metrics>)> = BTreeMap::new();
    for &(arch, backbone, m) in results {
        groups.entry((arch.name(), backbone.name())).or_insert((arch, backbone, Vec::new())).2.push(m);
    }
    let mut rows: Vec<ComparisonRow> = groups
        .values()
        .map(|(arch, backbone, ms)| {
            let mean = |f: fn(&Metrics) -> f64| ms.iter().map(f).sum::<f64>() / ms.len() as f64;
            ComparisonRow {
                arch: *arch,
                backbone: *backbone,
                runs: ms.len(),
                accuracy: mean(|m| m.accuracy),
                precision: mean(|m| m.precision),
                recall: mean(|m| m.recall),
                f1: mean(|m| m.f1),
            }
        })
        .collect();
    // Groups come out in name order, so a stable sort keeps that for ties.
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    let mut pairs = Vec::new();
    for multi in rows.iter().filter(|r| r.arch == Arch::Multi) {
        if let Some(single) = rows.iter().find(|r| r.arch == Arch::Single && r.backbone == multi.backbone) {
            pairs.push(ComparisonPair {
                backbone: multi.backbone,
                multi_accuracy: multi.accuracy,
                single_accuracy: single.accuracy,
                multi_ge_single: multi.accuracy >= single.accuracy - tolerance,
            });
        }
    }
    pairs.sort_by_key(|p| p.backbone.name());
    let flag = !pairs.is_empty() && pairs.iter().all(|p| p.multi_ge_single);
    Ok(ComparisonReport { rows, pairs, tolerance, multi_ge_single: flag, averaging: "macro".into() })
}

impl ComparisonReport {
    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let header = ["rank", "arch", "backbone", "runs", "accuracy", "precision", "recall", "f1"];
        let mut cells: Vec<[String; 8]> = vec![header.map(String::from)];
        for (i, r) in self.rows.iter().enumerate() {
            cells.push([
                (i + 1).to_string(),
                r.arch.name().to_string(),
                r.backbone.name().to_string(),
                r.runs.to_string(),
                format!("{:.4}", r.accuracy),
                format!("{:.4}", r.precision),
                format!("{:.4}", r.recall),
                format!("{:.4}", r.f1),
            ]);
        }
        let widths: Vec<usize> = (0..8).map(|c| cells.iter().map(|r| r[c].len()).max().unwrap()).collect();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c < 3 && c > 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{}: multi {:.4} vs single {:.4} -> {}",
                p.backbone.name(),
                p.multi_accuracy,
                p.single_accuracy,
                if p.multi_ge_single { "multi >= single" } else { "multi < single" }
            );
        }
        let _ = writeln!(
            out,
            "multi_ge_single (tolerance {}): {}  [precision/recall/f1 are macro averages]",
            self.tolerance, self.multi_ge_single
        );
        out
    }
}
