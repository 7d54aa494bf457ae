use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::boundary::{tape_common_loss, tape_ucl_loss, PrototypeBank, PrototypeMode};
use crate::encoder::{BoundEncoder, ViewEncoder};
use crate::error::{Error, Result};
use crate::evidential::{
    annealing, degenerate_rows, tape_error_loss, tape_euc_loss, tape_fuse, tape_opinion, EdlHead,
    UncertaintyTable,
};
use crate::graphs::{SplitDataset, View};
use crate::numkit::{Matrix, Tape, TemporalNeighborhood, Var};

const HEAD_PARAMS: usize = 4;

/// Graph structure and features shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub neighborhoods: Vec<Arc<TemporalNeighborhood>>,
    pub features: Matrix,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
}

impl GraphContext {
    pub fn new(dataset: &SplitDataset) -> Self {
        Self {
            neighborhoods: View::ALL
                .iter()
                .map(|&v| Arc::new(dataset.graph(v).neighborhood()))
                .collect(),
            features: dataset.features.clone(),
            ids: dataset.ids.clone(),
            labels: dataset.labels.clone(),
        }
    }
}

/// Per-view encoders and evidence heads, prototypes and the class
/// uncertainty state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoders: Vec<ViewEncoder>,
    pub heads: Vec<EdlHead>,
    pub prototypes: PrototypeBank,
    pub table: UncertaintyTable,
    /// Per-class training error rate after the last epoch.
    pub error_rates: Vec<f64>,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        config: &TrainConfig,
        input_dim: usize,
        classes: usize,
    ) -> Result<Self> {
        let dims = vec![config.embed_dim; config.gnn_layers];
        let mut encoders = Vec::with_capacity(View::ALL.len());
        let mut heads = Vec::with_capacity(View::ALL.len());
        for _ in View::ALL {
            encoders.push(ViewEncoder::new(rng, input_dim, &dims)?);
            heads.push(EdlHead::new(rng, config.embed_dim, config.edl_hidden, classes));
        }
        let views = View::ALL
            .iter()
            .map(|_| {
                let data = (0..classes * config.embed_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Matrix::from_vec(classes, config.embed_dim, data).map(|m| m.normalize_rows())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            encoders,
            heads,
            prototypes: PrototypeBank {
                mode: config.prototype_mode,
                views,
                epoch: 0,
            },
            table: UncertaintyTable::initial(classes, config.epsilon),
            error_rates: vec![0.0; classes],
            epoch: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.table.classes()
    }

    pub fn validate(&self) -> Result<()> {
        let n = View::ALL.len();
        if self.encoders.len() != n || self.heads.len() != n || self.prototypes.views.len() != n {
            return Err(Error::Shape {
                op: "model",
                detail: format!("expected {n} views"),
            });
        }
        for ((enc, head), protos) in self.encoders.iter().zip(&self.heads).zip(&self.prototypes.views) {
            enc.validate()?;
            let d = enc.output_dim();
            if head.w1.rows() != d
                || head.classes() != self.classes()
                || protos.shape() != (self.classes(), d)
            {
                return Err(Error::Shape {
                    op: "model",
                    detail: "encoder, head and prototype dimensions disagree".into(),
                });
            }
        }
        Ok(())
    }

    /// Trainable tensors: encoders, heads, then learned prototypes.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.encoders.iter().flat_map(ViewEncoder::params).collect();
        out.extend(self.heads.iter().flat_map(EdlHead::params));
        if self.prototypes.mode == PrototypeMode::Learned {
            out.extend(self.prototypes.views.iter());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let learned = self.prototypes.mode == PrototypeMode::Learned;
        let mut out: Vec<&mut Matrix> =
            self.encoders.iter_mut().flat_map(ViewEncoder::params_mut).collect();
        out.extend(self.heads.iter_mut().flat_map(EdlHead::params_mut));
        if learned {
            out.extend(self.prototypes.views.iter_mut());
        }
        out
    }

    /// Places every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars> {
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        self.bind_vars(tape, &vars)
    }

    /// Interprets `vars` (laid out as [`Model::params`]) as this model's
    /// parameters. Centroid prototypes are added as constants.
    pub fn bind_vars(&self, tape: &mut Tape, vars: &[Var]) -> Result<ModelVars> {
        let expected = self.params().len();
        if vars.len() != expected {
            return Err(Error::Shape {
                op: "bind model",
                detail: format!("{} vars, model has {expected} parameters", vars.len()),
            });
        }
        let mut rest = vars;
        let mut encoders = Vec::new();
        for enc in &self.encoders {
            let (head, tail) = rest.split_at(enc.params().len());
            encoders.push(BoundEncoder::from_vars(head)?);
            rest = tail;
        }
        let mut heads = Vec::new();
        for _ in &self.heads {
            let (head, tail) = rest.split_at(HEAD_PARAMS);
            heads.push(head.to_vec());
            rest = tail;
        }
        let prototypes = match self.prototypes.mode {
            PrototypeMode::Learned => rest.to_vec(),
            PrototypeMode::Centroid => self
                .prototypes
                .views
                .iter()
                .map(|p| tape.constant(p.clone()))
                .collect(),
        };
        Ok(ModelVars {
            encoders,
            heads,
            prototypes,
        })
    }

    /// Records every view's full-graph embeddings.
    pub fn embed(&self, tape: &mut Tape, vars: &ModelVars, ctx: &GraphContext) -> Result<Vec<Var>> {
        let x = tape.constant(ctx.features.clone());
        self.encoders
            .iter()
            .zip(&vars.encoders)
            .zip(&ctx.neighborhoods)
            .map(|((enc, bound), graph)| enc.forward(tape, bound, graph, x))
            .collect()
    }

    /// Fused predictions and per-view embeddings for every node.
    pub fn predict(&self, ctx: &GraphContext) -> Result<Predictions> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let raw = self.embed(&mut tape, &vars, ctx)?;
        let mut evidence = Vec::with_capacity(raw.len());
        let mut normalized = Vec::with_capacity(raw.len());
        for ((&h, head), hv) in raw.iter().zip(&self.heads).zip(&vars.heads) {
            if !tape.value(h).is_finite() {
                return Err(Error::NonFinite("encoder output".into()));
            }
            normalized.push(tape.value(h).normalize_rows());
            evidence.push(head.forward(&mut tape, hv, h)?);
        }
        let fused = fuse_or_report(&mut tape, &evidence, &ctx.ids, None)?;
        let beliefs = tape.value(fused.beliefs).clone();
        let uncertainty = tape.value(fused.uncertainty).as_slice().to_vec();
        let preds = (0..beliefs.rows())
            .map(|r| crate::numkit::tape::argmax(beliefs.row(r)).0)
            .collect();
        Ok(Predictions {
            preds,
            uncertainty,
            beliefs,
            embeddings: normalized,
        })
    }
}

/// Tape handles of a bound [`Model`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoders: Vec<BoundEncoder>,
    pub heads: Vec<Vec<Var>>,
    pub prototypes: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub preds: Vec<usize>,
    /// Fused uncertainty per node.
    pub uncertainty: Vec<f64>,
    pub beliefs: Matrix,
    /// Row-normalized embeddings, one matrix per view.
    pub embeddings: Vec<Matrix>,
}

fn fuse_or_report(
    tape: &mut Tape,
    evidence: &[Var],
    ids: &[u64],
    batch: Option<&[usize]>,
) -> Result<crate::evidential::FusedVars> {
    match tape_fuse(tape, evidence) {
        Err(Error::FusionDegenerate { .. }) => {
            let values: Vec<&Matrix> = evidence.iter().map(|&e| tape.value(e)).collect();
            let rows = degenerate_rows(&values);
            let sample_ids = rows
                .into_iter()
                .map(|r| ids[batch.map_or(r, |b| b[r])])
                .collect();
            Err(Error::DegenerateSamples(sample_ids))
        }
        other => other,
    }
}

/// Values of every objective term for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTerms {
    pub error: f64,
    /// Calibration loss including the annealing factor.
    pub euc: f64,
    /// Contrastive loss per view.
    pub ucl: Vec<f64>,
    pub common: f64,
    pub total: f64,
    pub lambda_e: f64,
}

impl StepTerms {
    /// `error + λ1·euc + λ2·Σ ucl + λ3·common` computed from the term values.
    pub fn weighted_sum(&self, lambda1: f64, lambda2: f64, lambda3: f64) -> f64 {
        self.error + lambda1 * self.euc + lambda2 * self.ucl.iter().sum::<f64>() + lambda3 * self.common
    }
}

/// Inputs of one objective evaluation beyond the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    /// Node indices of the batch.
    pub nodes: &'a [usize],
    pub epoch: usize,
    /// Class margins for the contrastive loss.
    pub margins: &'a [f64],
}

fn finite(tape: &Tape, v: Var, term: &str, epoch: usize) -> Result<f64> {
    let x = tape.scalar(v);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("loss term {term} at epoch {epoch}")))
    }
}

/// Records the total objective on `tape` and returns it with the term
/// values.
pub fn objective(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    ctx: &GraphContext,
    batch: Batch<'_>,
    config: &TrainConfig,
) -> Result<(Var, StepTerms)> {
    let labels: Vec<usize> = batch.nodes.iter().map(|&i| ctx.labels[i]).collect();
    let epoch = batch.epoch;
    let full = model.embed(tape, vars, ctx)?;
    let mut normalized = Vec::with_capacity(full.len());
    let mut evidence = Vec::with_capacity(full.len());
    let mut ucl_vars = Vec::with_capacity(full.len());
    for (v, &h) in full.iter().enumerate() {
        let hb = tape.gather_rows(h, batch.nodes)?;
        let z = tape.row_normalize(hb);
        let protos = match model.prototypes.mode {
            PrototypeMode::Learned => tape.row_normalize(vars.prototypes[v]),
            PrototypeMode::Centroid => vars.prototypes[v],
        };
        ucl_vars.push(tape_ucl_loss(tape, z, protos, &labels, batch.margins, config.tau)?);
        evidence.push(model.heads[v].forward(tape, &vars.heads[v], hb)?);
        normalized.push(z);
    }

    let fused = fuse_or_report(tape, &evidence, &ctx.ids, Some(batch.nodes))?;
    let mut error = tape_error_loss(tape, fused.alpha, fused.strength, &labels)?;
    let mut euc = tape_euc_loss(tape, fused.alpha, fused.strength, &labels, epoch)?;
    if config.apply_edl_per_view {
        let classes = model.classes() as f64;
        for &e in &evidence {
            let (_, u) = tape_opinion(tape, e)?;
            let alpha = tape.add_scalar(e, 1.0);
            let inv = tape.recip(u);
            let strength = tape.scale(inv, classes);
            let ev = tape_error_loss(tape, alpha, strength, &labels)?;
            error = tape.add(error, ev)?;
            let cv = tape_euc_loss(tape, alpha, strength, &labels, epoch)?;
            euc = tape.add(euc, cv)?;
        }
    }
    let common = tape_common_loss(tape, &normalized, config.common_normalization)?;

    let terms = StepTerms {
        error: finite(tape, error, "error", epoch)?,
        euc: finite(tape, euc, "euc", epoch)?,
        ucl: ucl_vars
            .iter()
            .zip(View::ALL)
            .map(|(&u, view)| finite(tape, u, &format!("ucl[{}]", view.name()), epoch))
            .collect::<Result<_>>()?,
        common: finite(tape, common, "common", epoch)?,
        total: 0.0,
        lambda_e: annealing(epoch),
    };

    let lambda1 = config.effective_lambda1();
    let mut total = error;
    let weighted = tape.scale(euc, lambda1);
    total = tape.add(total, weighted)?;
    for &u in &ucl_vars {
        let weighted = tape.scale(u, config.lambda2);
        total = tape.add(total, weighted)?;
    }
    let weighted = tape.scale(common, config.lambda3);
    total = tape.add(total, weighted)?;
    let value = finite(tape, total, "total", epoch)?;
    Ok((total, StepTerms { total: value, ..terms }))
}
