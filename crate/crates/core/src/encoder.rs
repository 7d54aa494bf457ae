//! Temporal-attention GNN encoder.
//!
//! Each layer transforms node states with a shared linear map, aggregates the
//! transformed neighbor states with attention weights that decay with the
//! publication-time gap, and applies an activation:
//!
//! `h_i' = σ(Σ_j a_ij W h_j)`, `a_ij = softmax_j(-r_i |t_j - t_i|)`,
//! `r_i = softplus(fc(W h_i))`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::special::softplus;
use crate::numkit::{Matrix, Tape, TemporalNeighborhood, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalGnnLayer {
    /// `d_in × d_out` transformation.
    pub weight: Matrix,
    /// `d_out × 1` decay projector weights.
    pub decay_weight: Matrix,
    /// `1 × 1` decay projector bias.
    pub decay_bias: Matrix,
    pub activation: Activation,
}

/// Glorot-uniform `rows × cols` matrix.
pub(crate) fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let limit = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl TemporalGnnLayer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_out: usize, activation: Activation) -> Self {
        Self {
            weight: glorot(rng, d_in, d_out),
            decay_weight: glorot(rng, d_out, 1),
            decay_bias: Matrix::zeros(1, 1),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Nonnegative decay rate for a node with input state `h`.
    pub fn decay_rate(&self, h: &[f64]) -> Result<f64> {
        let row = Matrix::from_vec(1, h.len(), h.to_vec())?;
        let transformed = row.matmul(&self.weight)?;
        let logit = transformed.matmul(&self.decay_weight)?.as_slice()[0] + self.decay_bias.as_slice()[0];
        Ok(softplus(logit))
    }

    /// Attention weights of node `i` (state `h`, time `t`) over neighbors
    /// published at `neighbor_times`.
    pub fn attention(&self, h: &[f64], t: f64, neighbor_times: &[f64]) -> Result<Vec<f64>> {
        Ok(temporal_attention(self.decay_rate(h)?, t, neighbor_times))
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        let mut leaf = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        LayerVars {
            weight: leaf(&self.weight),
            decay_weight: leaf(&self.decay_weight),
            decay_bias: leaf(&self.decay_bias),
        }
    }
}

/// `softmax_j(-rate · |t_j - t|)`.
pub fn temporal_attention(rate: f64, t: f64, neighbor_times: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = neighbor_times.iter().map(|&tj| -rate * (tj - t).abs()).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - top)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy)]
struct LayerVars {
    weight: Var,
    decay_weight: Var,
    decay_bias: Var,
}

/// Tape handles of a bound encoder, in [`ViewEncoder::params`] order.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    layers: Vec<LayerVars>,
}

impl BoundEncoder {
    /// Inverse of [`BoundEncoder::vars`]; `vars.len()` must be a multiple of 3.
    pub fn from_vars(vars: &[Var]) -> Result<Self> {
        if vars.is_empty() || !vars.len().is_multiple_of(3) {
            return Err(Error::Shape {
                op: "bind encoder",
                detail: format!("{} vars, expected 3 per layer", vars.len()),
            });
        }
        let layers = vars
            .chunks(3)
            .map(|c| LayerVars {
                weight: c[0],
                decay_weight: c[1],
                decay_bias: c[2],
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.decay_weight, l.decay_bias])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEncoder {
    pub layers: Vec<TemporalGnnLayer>,
}

impl ViewEncoder {
    /// Stacks layers `d_in → dims[0] → … → dims[last]`; ReLU on hidden layers
    /// and identity on the last.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, d_in: usize, dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) || d_in == 0 {
            return Err(Error::Config(format!("invalid encoder dims {d_in} -> {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = d_in;
        for (k, &d) in dims.iter().enumerate() {
            let act = if k + 1 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(TemporalGnnLayer::new(rng, prev, d, act));
            prev = d;
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, TemporalGnnLayer::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape {
                    op: "encoder",
                    detail: format!(
                        "layer dims do not chain: {} -> {}",
                        pair[0].output_dim(),
                        pair[1].input_dim()
                    ),
                });
            }
        }
        for l in &self.layers {
            if l.decay_weight.shape() != (l.output_dim(), 1) || l.decay_bias.shape() != (1, 1) {
                return Err(Error::Shape {
                    op: "encoder",
                    detail: "decay projector has the wrong shape".into(),
                });
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.decay_weight, &l.decay_bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.decay_weight, &mut l.decay_bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        BoundEncoder {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    /// Records the forward pass over the whole graph; returns raw `N × d`
    /// embeddings.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundEncoder,
        graph: &Arc<TemporalNeighborhood>,
        features: Var,
    ) -> Result<Var> {
        let (n, d) = tape.value(features).shape();
        if n != graph.node_count() || d != self.input_dim() {
            return Err(Error::Shape {
                op: "encode",
                detail: format!(
                    "features {n}x{d}, graph has {} nodes, encoder expects {} inputs",
                    graph.node_count(),
                    self.input_dim()
                ),
            });
        }
        let mut h = features;
        for (layer, vars) in self.layers.iter().zip(&bound.layers) {
            let xw = tape.matmul(h, vars.weight)?;
            let logit = tape.matmul(xw, vars.decay_weight)?;
            let logit = tape.add(logit, vars.decay_bias)?;
            let rate = tape.softplus(logit);
            let agg = tape.temporal_aggregate(xw, rate, graph)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(agg),
                Activation::Identity => agg,
            };
        }
        Ok(h)
    }
}

/// Raw and L2-normalized embeddings of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub raw: Matrix,
    pub normalized: Matrix,
}

/// Forward pass without gradient tracking.
pub fn encode(
    graph: &Arc<TemporalNeighborhood>,
    features: &Matrix,
    encoder: &ViewEncoder,
) -> Result<Embeddings> {
    encoder.validate()?;
    let mut tape = Tape::new();
    let bound = encoder.bind(&mut tape, false);
    let x = tape.constant(features.clone());
    let out = encoder.forward(&mut tape, &bound, graph, x)?;
    let raw = tape.value(out).clone();
    if !raw.is_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }
    let normalized = raw.normalize_rows();
    Ok(Embeddings { raw, normalized })
}
