//! Confusion-matrix bookkeeping and the evaluation metrics.
//!
//! All metrics are computed from an explicit [`ConfusionMatrix`] so tests
//! can drive them with hand-built tallies. Classes that never occur in
//! the evaluated node set have no defined recall; they are excluded from
//! balanced accuracy, macro F1, and the geometric mean rather than
//! silently counted as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::{Subset, SubsetPartition};

/// Class-by-class prediction tally; rows are true classes, columns are
/// predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::contract("confusion matrix over zero classes"));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    /// Tallies aligned true/predicted label slices.
    pub fn from_labels(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::contract(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(num_classes)?;
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.num_classes || predicted >= self.num_classes {
            return Err(Error::contract(format!(
                "label pair ({truth}, {predicted}) outside {} classes",
                self.num_classes
            )));
        }
        self.counts[truth * self.num_classes + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.num_classes + predicted]
    }

    /// Number of evaluated nodes whose true class is `c`.
    pub fn support(&self, c: usize) -> usize {
        let row = &self.counts[c * self.num_classes..(c + 1) * self.num_classes];
        row.iter().sum()
    }

    /// Number of evaluated nodes predicted as `c`.
    pub fn predicted_total(&self, c: usize) -> usize {
        (0..self.num_classes).map(|t| self.count(t, c)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.num_classes).map(|c| self.count(c, c)).sum()
    }
}

/// The four reported classification metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub geometric_mean: f64,
}

/// Computes every metric from a tally.
///
/// Accuracy is correct over total. Balanced accuracy averages per-class
/// recall over the classes with support; when every supported class has
/// the same support the two collapse to the identical division, so they
/// compare equal bit for bit. Macro F1 averages per-class F1 over the
/// supported classes, scoring 0 where precision and recall are both
/// zero. The geometric mean multiplies the recalls and is exactly zero
/// whenever any supported class has zero recall.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("metrics over an empty node set"));
    }
    let included: Vec<usize> = (0..cm.num_classes()).filter(|&c| cm.support(c) > 0).collect();
    let correct = cm.correct();
    let accuracy = correct as f64 / total as f64;

    let supports: Vec<usize> = included.iter().map(|&c| cm.support(c)).collect();
    let balanced_accuracy = if supports.windows(2).all(|w| w[0] == w[1]) {
        correct as f64 / total as f64
    } else {
        let recall_sum: f64 = included
            .iter()
            .map(|&c| cm.count(c, c) as f64 / cm.support(c) as f64)
            .sum();
        recall_sum / included.len() as f64
    };

    let f1_sum: f64 = included
        .iter()
        .map(|&c| {
            let tp = cm.count(c, c) as f64;
            let recall = tp / cm.support(c) as f64;
            let predicted = cm.predicted_total(c);
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    let macro_f1 = f1_sum / included.len() as f64;

    let mut recall_product = 1.0;
    let mut any_zero = false;
    for &c in &included {
        let r = cm.count(c, c) as f64 / cm.support(c) as f64;
        if r == 0.0 {
            any_zero = true;
            break;
        }
        recall_product *= r;
    }
    let geometric_mean = if any_zero {
        0.0
    } else {
        recall_product.powf(1.0 / included.len() as f64)
    };

    Ok(Metrics {
        accuracy,
        balanced_accuracy,
        macro_f1,
        geometric_mean,
    })
}

/// Per-class precision, recall, and F1 alongside the raw tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// The aggregate metrics together with the per-class breakdown and the
/// raw confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub per_class: Vec<ClassReport>,
    pub confusion: Vec<Vec<usize>>,
}

/// Computes the aggregate metrics plus per-class detail. Classes without
/// support still get a row (recall 0) but are excluded from the averages
/// exactly as in [`compute_metrics`].
pub fn compute_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let metrics = compute_metrics(cm)?;
    let k = cm.num_classes();
    let per_class = (0..k)
        .map(|c| {
            let support = cm.support(c);
            let predicted = cm.predicted_total(c);
            let tp = cm.count(c, c) as f64;
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let precision = if predicted == 0 {
                0.0
            } else {
                tp / predicted as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassReport {
                class: c,
                support,
                predicted,
                recall,
                precision,
                f1,
            }
        })
        .collect();
    let confusion = (0..k)
        .map(|t| (0..k).map(|p| cm.count(t, p)).collect())
        .collect();
    Ok(MetricsReport {
        metrics,
        per_class,
        confusion,
    })
}

/// Accuracy of one evaluated bucket of the class-side by degree grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subset: Subset,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean recall over the classes present in this bucket.
    pub balanced_accuracy: f64,
}

/// Breaks predictions down by the evaluated nodes' true class side and
/// degree group. Buckets with no nodes are omitted.
pub fn subset_breakdown(
    g: &Graph,
    partition: &SubsetPartition,
    nodes: &[usize],
    predicted: &[usize],
) -> Result<Vec<SubsetReport>> {
    if nodes.len() != predicted.len() {
        return Err(Error::contract(format!(
            "{} nodes vs {} predictions",
            nodes.len(),
            predicted.len()
        )));
    }
    let mut pairs: [Vec<(usize, usize)>; 4] = Default::default();
    for (&v, &p) in nodes.iter().zip(predicted) {
        let truth = g.label(v);
        let head_class = partition.is_head_class(truth);
        let low = g.degree(v)? <= partition.degree_threshold;
        let subset = match (head_class, low) {
            (true, false) => Subset::Hh,
            (true, true) => Subset::Ht,
            (false, false) => Subset::Th,
            (false, true) => Subset::Tt,
        };
        let slot = Subset::ALL.iter().position(|&s| s == subset).unwrap();
        pairs[slot].push((truth, p));
    }
    let mut reports = Vec::new();
    for (slot, &subset) in Subset::ALL.iter().enumerate() {
        if pairs[slot].is_empty() {
            continue;
        }
        let truth: Vec<usize> = pairs[slot].iter().map(|&(t, _)| t).collect();
        let pred: Vec<usize> = pairs[slot].iter().map(|&(_, p)| p).collect();
        let cm = ConfusionMatrix::from_labels(&truth, &pred, g.num_classes())?;
        let m = compute_metrics(&cm)?;
        let correct = cm.correct();
        reports.push(SubsetReport {
            subset,
            count: pairs[slot].len(),
            correct,
            accuracy: correct as f64 / pairs[slot].len() as f64,
            balanced_accuracy: m.balanced_accuracy,
        });
    }
    Ok(reports)
}

/// Renders a report as `key,value` CSV: one row per aggregate metric,
/// then per-class support/recall/precision/F1 rows in class order.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("key,value\n");
    let m = &report.metrics;
    out.push_str(&format!("accuracy,{}\n", m.accuracy));
    out.push_str(&format!("balanced_accuracy,{}\n", m.balanced_accuracy));
    out.push_str(&format!("macro_f1,{}\n", m.macro_f1));
    out.push_str(&format!("geometric_mean,{}\n", m.geometric_mean));
    for c in &report.per_class {
        out.push_str(&format!("support_{},{}\n", c.class, c.support));
        out.push_str(&format!("recall_{},{}\n", c.class, c.recall));
        out.push_str(&format!("precision_{},{}\n", c.class, c.precision));
        out.push_str(&format!("f1_{},{}\n", c.class, c.f1));
    }
    out
}
