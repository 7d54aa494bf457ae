use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::AdamConfig;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub settings: AdamConfig,
    pub learning_rate: f64,
    pub steps: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(settings: AdamConfig, learning_rate: f64) -> Self {
        Self {
            settings,
            learning_rate,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                op: "adam",
                detail: format!("{} params, {} gradients", params.len(), grads.len()),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.settings;
        let t = self.steps as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[k].shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    detail: format!("parameter {k}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            for (((x, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *x -= self.learning_rate * (*mi / c1) / (libm::sqrt(*vi / c2) + eps);
            }
        }
        Ok(())
    }
}
