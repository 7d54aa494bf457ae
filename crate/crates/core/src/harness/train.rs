use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{objective, Batch, GraphContext, Model, ModelVars, Predictions, StepTerms};
use super::optim::Adam;
use crate::boundary::{error_rate_table, update_centroids, PrototypeMode};
use crate::error::{Error, Result};
use crate::evidential::annealing;
use crate::graphs::SplitDataset;
use crate::numkit::{Tape, Var};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda_e: f64,
    pub error: f64,
    pub euc: f64,
    /// Contrastive loss per view.
    pub ucl: Vec<f64>,
    pub common: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub mean_class_uncertainty: f64,
    pub class_uncertainty: Vec<f64>,
    /// Classes whose centroid was carried over from the previous epoch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_centroids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation accuracy.
    pub best: Model,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: Model,
    pub log: Vec<EpochRecord>,
}

/// Signature of a per-batch objective, see [`objective`].
pub trait Objective:
    Fn(&mut Tape, &Model, &ModelVars, &GraphContext, Batch<'_>, &TrainConfig) -> Result<(Var, StepTerms)>
{
}

impl<F> Objective for F where
    F: Fn(&mut Tape, &Model, &ModelVars, &GraphContext, Batch<'_>, &TrainConfig) -> Result<(Var, StepTerms)>
{
}

pub fn train(dataset: &SplitDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, objective, |_| {})
}

/// Runs the training loop with a custom objective; `on_epoch` sees every log
/// record as it is produced.
pub fn train_with(
    dataset: &SplitDataset,
    config: &TrainConfig,
    loss: impl Objective,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    if dataset.splits.val.is_empty() {
        return Err(Error::EmptySplit);
    }
    let ctx = GraphContext::new(dataset);
    let train_labels = dataset.labels_of(&dataset.splits.train);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(&mut rng, config, dataset.input_dim(), dataset.classes)?;
    let mut adam = Adam::new(config.adam, config.learning_rate);
    let mut order = dataset.splits.train.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut snapshot: Option<Predictions> = None;

    for epoch in 1..=config.epochs {
        let mut degenerate_centroids = Vec::new();
        if model.prototypes.mode == PrototypeMode::Centroid {
            let embeddings = match snapshot.take() {
                Some(p) => p.embeddings,
                None => model.predict(&ctx)?.embeddings,
            };
            let first = epoch == 1;
            for (v, emb) in embeddings.iter().enumerate() {
                let prev = (!first).then(|| model.prototypes.views[v].clone());
                let up = update_centroids(
                    emb,
                    &dataset.labels,
                    &dataset.splits.train,
                    dataset.classes,
                    prev.as_ref(),
                )?;
                model.prototypes.views[v] = up.centroids;
                degenerate_centroids.extend(up.degenerate);
            }
            model.prototypes.epoch = epoch;
        }
        let margins = config.margin_policy.margins(&model.table, &model.error_rates);

        order.shuffle(&mut rng);
        let mut sums = StepTerms {
            error: 0.0,
            euc: 0.0,
            ucl: alloc::vec![0.0; model.encoders.len()],
            common: 0.0,
            total: 0.0,
            lambda_e: annealing(epoch),
        };
        for nodes in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true)?;
            let batch = Batch {
                nodes,
                epoch,
                margins: &margins,
            };
            let (total, terms) = loss(&mut tape, &model, &vars, &ctx, batch, config)?;
            let mut grads = tape.backward(total)?;
            let flat: Vec<Var> = vars
                .encoders
                .iter()
                .flat_map(|e| e.vars())
                .chain(vars.heads.iter().flatten().copied())
                .chain(match model.prototypes.mode {
                    PrototypeMode::Learned => vars.prototypes.clone(),
                    PrototypeMode::Centroid => Vec::new(),
                })
                .collect();
            let grads: Vec<_> = flat.into_iter().map(|v| grads.take(v)).collect();
            adam.step(model.params_mut(), &grads)?;
            if model.prototypes.mode == PrototypeMode::Learned {
                model.prototypes.renormalize();
            }
            let w = nodes.len() as f64 / order.len() as f64;
            sums.error += w * terms.error;
            sums.euc += w * terms.euc;
            for (s, u) in sums.ucl.iter_mut().zip(&terms.ucl) {
                *s += w * u;
            }
            sums.common += w * terms.common;
            sums.total += w * terms.total;
        }

        let pred = model.predict(&ctx)?;
        let train_u: Vec<f64> = dataset.splits.train.iter().map(|&i| pred.uncertainty[i]).collect();
        model.table.update(&train_u, &train_labels, epoch)?;
        model.error_rates =
            error_rate_table(&pred.preds, &dataset.labels, &dataset.splits.train, dataset.classes)?;
        model.epoch = epoch;
        let val = &dataset.splits.val;
        let hits = val.iter().filter(|&&i| pred.preds[i] == dataset.labels[i]).count();
        let val_accuracy = hits as f64 / val.len() as f64;
        snapshot = Some(pred);

        let record = EpochRecord {
            epoch,
            lambda_e: sums.lambda_e,
            error: sums.error,
            euc: sums.euc,
            ucl: sums.ucl,
            common: sums.common,
            total: sums.total,
            val_accuracy,
            mean_class_uncertainty: model.table.values.iter().sum::<f64>() / model.classes() as f64,
            class_uncertainty: model.table.values.clone(),
            degenerate_centroids,
        };
        log::info!(
            "epoch {epoch}: total {:.6} error {:.6} euc {:.6} common {:.6} val_acc {:.4}",
            record.total,
            record.error,
            record.euc,
            record.common,
            record.val_accuracy
        );
        on_epoch(&record);
        log.push(record);
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        log,
    })
}
