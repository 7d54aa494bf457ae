use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use ucl_core::graphs::View;
use ucl_core::harness::{EpochRecord, MetricsReport, Predictions};

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    scope: &'a str,
    key: String,
    support: Option<usize>,
    accuracy: Option<f64>,
    precision: Option<f64>,
    f1: Option<f64>,
    uncertainty: Option<f64>,
    group: Option<&'a str>,
}

/// Flat view of a report: one overall row, one row per class, one per
/// uncertainty group and one per calibration cell.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = writer(path)?;
    let empty = |scope: &'static str, key: String| MetricsRow {
        scope,
        key,
        support: None,
        accuracy: None,
        precision: None,
        f1: None,
        uncertainty: None,
        group: None,
    };
    w.serialize(MetricsRow {
        support: Some(report.samples),
        accuracy: Some(report.accuracy),
        f1: Some(report.macro_f1),
        ..empty("overall", "all".into())
    })?;
    w.serialize(MetricsRow {
        accuracy: Some(report.mean_class_accuracy),
        ..empty("overall", "mean_class".into())
    })?;
    for c in &report.per_class {
        w.serialize(MetricsRow {
            support: Some(c.support),
            accuracy: Some(c.accuracy),
            precision: Some(c.precision),
            f1: Some(c.f1),
            uncertainty: Some(c.uncertainty),
            group: Some(c.group.name()),
            ..empty("class", c.class.to_string())
        })?;
    }
    for g in &report.groups {
        w.serialize(MetricsRow {
            support: Some(g.classes.len()),
            accuracy: g.accuracy,
            f1: g.f1,
            ..empty("group", g.group.name().into())
        })?;
    }
    let cal = &report.calibration;
    for (key, n) in [
        ("AC", cal.accurate_certain),
        ("AU", cal.accurate_uncertain),
        ("IC", cal.inaccurate_certain),
        ("IU", cal.inaccurate_uncertain),
    ] {
        w.serialize(MetricsRow {
            support: Some(n),
            uncertainty: Some(cal.threshold),
            ..empty("calibration", key.into())
        })?;
    }
    for (key, u) in [
        ("correct", report.mean_uncertainty_correct),
        ("wrong", report.mean_uncertainty_wrong),
    ] {
        w.serialize(MetricsRow {
            uncertainty: u,
            ..empty("mean_uncertainty", key.into())
        })?;
    }
    w.flush()?;
    Ok(())
}

/// `view,node_id,label,u,d0..` rows for every view and every node in
/// `nodes`.
pub fn write_embeddings_csv(
    path: &Path,
    predictions: &Predictions,
    ids: &[u64],
    labels: &[usize],
    nodes: &[usize],
) -> Result<()> {
    let mut w = writer(path)?;
    let dim = predictions.embeddings.first().map_or(0, |m| m.cols());
    let mut header = vec!["view".to_string(), "node_id".into(), "label".into(), "u".into()];
    header.extend((0..dim).map(|k| format!("d{k}")));
    w.write_record(&header)?;
    for (view, emb) in View::ALL.iter().zip(&predictions.embeddings) {
        for &i in nodes {
            let mut row = vec![
                view.name().to_string(),
                ids[i].to_string(),
                labels[i].to_string(),
                predictions.uncertainty[i].to_string(),
            ];
            row.extend(emb.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
