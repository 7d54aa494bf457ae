//! Finite-difference checks of every loss term and of the full objective on
//! a small random instance.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::{objective, Batch, GraphContext, Model};
use crate::boundary::{
    tape_common_loss, tape_ucl_loss, update_centroids, CommonNormalization, MarginPolicy,
    PrototypeMode,
};
use crate::error::Result;
use crate::evidential::{tape_error_loss, tape_euc_loss, UncertaintyTable};
use crate::graphs::{MessageRecord, SplitDataset, Splits};
use crate::numkit::{grad_check, GradCheckOptions, GradCheckReport, Matrix};

pub const SUITE_NODES: usize = 16;
pub const SUITE_CLASSES: usize = 3;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Random 16-node, 3-class dataset with all three views populated.
pub fn suite_dataset(seed: u64, d_in: usize) -> Result<SplitDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let token = |rng: &mut ChaCha8Rng, prefix: &str| format!("{prefix}{}", rng.random_range(0..5));
    let records: Vec<MessageRecord> = (0..SUITE_NODES)
        .map(|i| MessageRecord {
            id: 100 + i as u64,
            label: i % SUITE_CLASSES,
            timestamp: rng.random_range(0.0..6.0),
            hashtags: vec![token(&mut rng, "#")],
            entities: vec![token(&mut rng, "e"), token(&mut rng, "e")],
            users: if i % 4 == 0 { Vec::new() } else { vec![token(&mut rng, "@")] },
            features: (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let splits = Splits {
        train: (0..10).collect(),
        val: (10..13).collect(),
        test: (13..16).collect(),
    };
    SplitDataset::from_records(&records, SUITE_CLASSES, splits)
}

/// Small model configuration used by the suite.
pub fn suite_config(mode: PrototypeMode) -> TrainConfig {
    TrainConfig {
        gnn_layers: 2,
        embed_dim: 8,
        edl_hidden: 4,
        prototype_mode: mode,
        apply_edl_per_view: true,
        ..TrainConfig::default()
    }
}

/// Runs every check; an entry passes when its report has no flagged entry.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let opts = GradCheckOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let batch = 6;
    let labels: Vec<usize> = (0..batch).map(|i| i % SUITE_CLASSES).collect();

    let table = UncertaintyTable {
        values: (0..SUITE_CLASSES).map(|_| rng.random_range(0.05..0.95)).collect(),
        epoch: 1,
    };
    let error_rates: Vec<f64> = (0..SUITE_CLASSES).map(|_| rng.random_range(0.0..1.0)).collect();
    let z = random_matrix(&mut rng, batch, 4, 1.0);
    let protos = random_matrix(&mut rng, SUITE_CLASSES, 4, 1.0);
    for policy in [
        MarginPolicy::None,
        MarginPolicy::Fixed { margin: 0.2 },
        MarginPolicy::ErrorRate { scale: 0.5 },
        MarginPolicy::Uncertainty { beta: 0.1 },
    ] {
        let margins = policy.margins(&table, &error_rates);
        let report = grad_check(
            |t, v| {
                let zn = t.row_normalize(v[0]);
                let pn = t.row_normalize(v[1]);
                tape_ucl_loss(t, zn, pn, &labels, &margins, 1.0)
            },
            &[z.clone(), protos.clone()],
            opts,
        )?;
        let kind = match policy {
            MarginPolicy::None => "none",
            MarginPolicy::Fixed { .. } => "fixed",
            MarginPolicy::ErrorRate { .. } => "error_rate",
            MarginPolicy::Uncertainty { .. } => "uncertainty",
        };
        out.push(SuiteEntry {
            name: format!("ucl/{kind}"),
            report,
        });
    }

    // evidence = softplus(x) keeps α > 1 for any probe
    let logits = random_matrix(&mut rng, batch, SUITE_CLASSES, 2.0);
    let dirichlet = |t: &mut crate::numkit::Tape, x| {
        let e = t.softplus(x);
        let alpha = t.add_scalar(e, 1.0);
        let s = t.sum_rows(alpha);
        (alpha, s)
    };
    let report = grad_check(
        |t, v| {
            let (alpha, s) = dirichlet(t, v[0]);
            tape_error_loss(t, alpha, s, &labels)
        },
        core::slice::from_ref(&logits),
        opts,
    )?;
    out.push(SuiteEntry {
        name: "error".to_string(),
        report,
    });
    let report = grad_check(
        |t, v| {
            let (alpha, s) = dirichlet(t, v[0]);
            tape_euc_loss(t, alpha, s, &labels, 10)
        },
        &[logits],
        opts,
    )?;
    out.push(SuiteEntry {
        name: "euc".to_string(),
        report,
    });

    let views: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, batch, 4, 1.0)).collect();
    for (norm, name) in [
        (CommonNormalization::EntryMean, "common/entry_mean"),
        (CommonNormalization::Frobenius, "common/frobenius"),
    ] {
        let report = grad_check(
            |t, v| {
                let hs: Vec<_> = v.iter().map(|&h| t.row_normalize(h)).collect();
                tape_common_loss(t, &hs, norm)
            },
            &views,
            opts,
        )?;
        out.push(SuiteEntry {
            name: name.to_string(),
            report,
        });
    }

    let d_in = 4;
    let dataset = suite_dataset(seed, d_in)?;
    let ctx = GraphContext::new(&dataset);
    for (mode, name) in [
        (PrototypeMode::Learned, "total/learned"),
        (PrototypeMode::Centroid, "total/centroid"),
    ] {
        let config = suite_config(mode);
        // redraw until no node's embedding vanishes (all hidden units dead)
        let mut model = loop {
            let m = Model::new(&mut rng, &config, d_in, SUITE_CLASSES)?;
            let emb = m.predict(&ctx)?.embeddings;
            if emb.iter().all(|e| (0..e.rows()).all(|r| e.row(r).iter().any(|&x| x != 0.0))) {
                break m;
            }
        };
        model.table = table.clone();
        // random biases avoid exact evidence ties, where the calibration
        // loss switches branches
        for head in &mut model.heads {
            head.b1 = random_matrix(&mut rng, 1, head.b1.cols(), 0.5);
            head.b2 = random_matrix(&mut rng, 1, head.b2.cols(), 0.5);
        }
        if mode == PrototypeMode::Centroid {
            let emb = model.predict(&ctx)?.embeddings;
            for (v, e) in emb.iter().enumerate() {
                model.prototypes.views[v] =
                    update_centroids(e, &dataset.labels, &dataset.splits.train, SUITE_CLASSES, None)?
                        .centroids;
            }
        }
        let margins = config.margin_policy.margins(&model.table, &model.error_rates);
        let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
        let nodes: Vec<usize> = dataset.splits.train.clone();
        let report = grad_check(
            |t, v| {
                let vars = model.bind_vars(t, v)?;
                let batch = Batch {
                    nodes: &nodes,
                    epoch: 10,
                    margins: &margins,
                };
                objective(t, &model, &vars, &ctx, batch, &config).map(|(total, _)| total)
            },
            &params,
            opts,
        )?;
        out.push(SuiteEntry {
            name: name.to_string(),
            report,
        });
    }
    Ok(out)
}
