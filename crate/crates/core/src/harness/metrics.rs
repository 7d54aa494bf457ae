use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{GraphContext, Model};
use crate::error::{Error, Result};
use crate::evidential::UncertaintyTable;

/// Class bucket by training uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Certain,
    Middle,
    Uncertain,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Certain, Group::Middle, Group::Uncertain];

    pub fn name(self) -> &'static str {
        match self {
            Group::Certain => "certain",
            Group::Middle => "middle",
            Group::Uncertain => "uncertain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    /// Recall on the evaluation split.
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    /// Class uncertainty from the training table.
    pub uncertainty: f64,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub classes: Vec<usize>,
    /// Mean per-class accuracy; `None` for an empty group.
    pub accuracy: Option<f64>,
    /// Mean per-class F1; `None` for an empty group.
    pub f1: Option<f64>,
}

/// Accuracy crossed with certainty, thresholded at the median sample
/// uncertainty (ties count as certain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub accurate_certain: usize,
    pub accurate_uncertain: usize,
    pub inaccurate_certain: usize,
    pub inaccurate_uncertain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub mean_class_accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub groups: Vec<GroupMetrics>,
    pub calibration: Calibration,
    pub mean_uncertainty_correct: Option<f64>,
    pub mean_uncertainty_wrong: Option<f64>,
}

impl MetricsReport {
    pub fn group(&self, group: Group) -> &GroupMetrics {
        &self.groups[group as usize]
    }
}

/// Buckets classes into equal thirds of `[min, max]` of their
/// uncertainties; a value on a boundary goes to the lower group.
pub fn uncertainty_groups(values: &[f64]) -> Vec<Group> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (b1, b2) = group_bounds(lo, hi);
    values
        .iter()
        .map(|&u| {
            if u <= b1 {
                Group::Certain
            } else if u <= b2 {
                Group::Middle
            } else {
                Group::Uncertain
            }
        })
        .collect()
}

/// Boundaries `min + (max - min)/3` and `min + 2(max - min)/3`.
pub fn group_bounds(min: f64, max: f64) -> (f64, f64) {
    let width = (max - min) / 3.0;
    (min + width, min + 2.0 * width)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics over the nodes in `indices`. `preds`, `uncertainty` and `labels`
/// cover every node; `class_uncertainty` drives the grouping.
pub fn compute_metrics(
    preds: &[usize],
    uncertainty: &[f64],
    labels: &[usize],
    indices: &[usize],
    class_uncertainty: &[f64],
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::EmptySplit);
    }
    let classes = class_uncertainty.len();
    if preds.len() != labels.len() || uncertainty.len() != labels.len() {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!(
                "{} predictions, {} uncertainties, {} labels",
                preds.len(),
                uncertainty.len(),
                labels.len()
            ),
        });
    }
    let mut tp = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    for &i in indices {
        let (y, p) = (labels[i], preds[i]);
        if y >= classes || p >= classes {
            return Err(Error::LabelOutOfRange {
                label: y.max(p),
                classes,
            });
        }
        support[y] += 1;
        predicted[p] += 1;
        if y == p {
            tp[y] += 1;
        }
    }
    let groups = uncertainty_groups(class_uncertainty);
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let recall = ratio(tp[c], support[c]);
            let precision = ratio(tp[c], predicted[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: c,
                support: support[c],
                accuracy: recall,
                precision,
                f1,
                uncertainty: class_uncertainty[c],
                group: groups[c],
            }
        })
        .collect();
    let present = || per_class.iter().filter(|m| m.support > 0);
    let group_metrics = Group::ALL
        .iter()
        .map(|&g| {
            let members = || present().filter(move |m| m.group == g);
            GroupMetrics {
                group: g,
                classes: per_class.iter().filter(|m| m.group == g).map(|m| m.class).collect(),
                accuracy: mean(members().map(|m| m.accuracy)),
                f1: mean(members().map(|m| m.f1)),
            }
        })
        .collect();

    let eval_u: Vec<f64> = indices.iter().map(|&i| uncertainty[i]).collect();
    let threshold = median(&eval_u);
    let mut cal = Calibration {
        threshold,
        accurate_certain: 0,
        accurate_uncertain: 0,
        inaccurate_certain: 0,
        inaccurate_uncertain: 0,
    };
    for &i in indices {
        let certain = uncertainty[i] <= threshold;
        match (preds[i] == labels[i], certain) {
            (true, true) => cal.accurate_certain += 1,
            (true, false) => cal.accurate_uncertain += 1,
            (false, true) => cal.inaccurate_certain += 1,
            (false, false) => cal.inaccurate_uncertain += 1,
        }
    }
    let correct = tp.iter().sum::<usize>();
    Ok(MetricsReport {
        samples: indices.len(),
        accuracy: correct as f64 / indices.len() as f64,
        mean_class_accuracy: mean(present().map(|m| m.accuracy)).unwrap_or(0.0),
        macro_f1: mean(present().map(|m| m.f1)).unwrap_or(0.0),
        per_class,
        groups: group_metrics,
        calibration: cal,
        mean_uncertainty_correct: mean(
            indices.iter().filter(|&&i| preds[i] == labels[i]).map(|&i| uncertainty[i]),
        ),
        mean_uncertainty_wrong: mean(
            indices.iter().filter(|&&i| preds[i] != labels[i]).map(|&i| uncertainty[i]),
        ),
    })
}

/// Evaluates `model` on the nodes in `indices`, grouping classes by
/// `table` (usually `model.table`).
pub fn evaluate(
    model: &Model,
    ctx: &GraphContext,
    indices: &[usize],
    table: &UncertaintyTable,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::EmptySplit);
    }
    let p = model.predict(ctx)?;
    compute_metrics(&p.preds, &p.uncertainty, &ctx.labels, indices, &table.values)
}
