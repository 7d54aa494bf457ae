use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::boundary::{CommonNormalization, MarginPolicy, PrototypeMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Every training hyperparameter. Defaults are the full uncertainty-guided
/// model with epoch-frozen centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub gnn_layers: usize,
    pub embed_dim: usize,
    pub edl_hidden: usize,
    /// Weight of the calibration loss.
    pub lambda1: f64,
    /// Weight of the summed per-view contrastive losses.
    pub lambda2: f64,
    /// Weight of the cross-view consistency loss.
    pub lambda3: f64,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub prototype_mode: PrototypeMode,
    pub margin_policy: MarginPolicy,
    /// Also apply the error and calibration losses to each view's opinion.
    pub apply_edl_per_view: bool,
    /// Initial class uncertainty is `1 - epsilon`.
    pub epsilon: f64,
    /// Similarity temperature of the contrastive loss.
    pub tau: f64,
    pub common_normalization: CommonNormalization,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1500,
            gnn_layers: 2,
            embed_dim: 256,
            edl_hidden: 128,
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.5,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            prototype_mode: PrototypeMode::Centroid,
            margin_policy: MarginPolicy::Uncertainty { beta: 0.1 },
            apply_edl_per_view: false,
            epsilon: 1e-3,
            tau: 1.0,
            common_normalization: CommonNormalization::EntryMean,
            seed: 1,
        }
    }
}

/// Named model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Learned prototypes with uncertainty margins.
    Ucl,
    /// Epoch-frozen centroids with uncertainty margins.
    UclEc,
    /// Prototype contrastive baseline: no margin, no calibration loss.
    Psc,
    /// Baseline plus a fixed margin.
    PscFixedMargin,
    /// Baseline plus a margin from per-class training error rates.
    PscErrorMargin,
    /// Full model without the calibration loss.
    NoCalibration,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Ucl,
        Variant::UclEc,
        Variant::Psc,
        Variant::PscFixedMargin,
        Variant::PscErrorMargin,
        Variant::NoCalibration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ucl => "ucl",
            Variant::UclEc => "ucl-ec",
            Variant::Psc => "psc",
            Variant::PscFixedMargin => "psc+m",
            Variant::PscErrorMargin => "psc+dm",
            Variant::NoCalibration => "no-euc",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?}")))
    }

    /// Applies the variant's switches on top of `base`.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let beta = match base.margin_policy {
            MarginPolicy::Uncertainty { beta } => beta,
            _ => 0.1,
        };
        match self {
            Variant::Ucl => {
                c.prototype_mode = PrototypeMode::Learned;
                c.margin_policy = MarginPolicy::Uncertainty { beta };
            }
            Variant::UclEc => {
                c.prototype_mode = PrototypeMode::Centroid;
                c.margin_policy = MarginPolicy::Uncertainty { beta };
            }
            Variant::Psc => {
                c.margin_policy = MarginPolicy::None;
                c.lambda1 = 0.0;
            }
            Variant::PscFixedMargin => {
                c.margin_policy = MarginPolicy::Fixed { margin: beta };
                c.lambda1 = 0.0;
            }
            Variant::PscErrorMargin => {
                c.margin_policy = MarginPolicy::ErrorRate { scale: beta };
                c.lambda1 = 0.0;
            }
            Variant::NoCalibration => {
                c.margin_policy = MarginPolicy::Uncertainty { beta };
                c.lambda1 = 0.0;
            }
        }
        c
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(self.epochs >= 1, format!("epochs must be >= 1, got {}", self.epochs))?;
        check(self.batch_size >= 2, format!("batch_size must be >= 2, got {}", self.batch_size))?;
        check(self.gnn_layers >= 1, format!("gnn_layers must be >= 1, got {}", self.gnn_layers))?;
        check(self.embed_dim >= 1, format!("embed_dim must be >= 1, got {}", self.embed_dim))?;
        check(self.edl_hidden >= 1, format!("edl_hidden must be >= 1, got {}", self.edl_hidden))?;
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("learning_rate", self.learning_rate),
        ] {
            check(v.is_finite() && v >= 0.0, format!("{name} must be finite and >= 0, got {v}"))?;
        }
        check(
            self.epsilon > 0.0 && self.epsilon < 1.0,
            format!("epsilon must lie in (0, 1), got {}", self.epsilon),
        )?;
        check(self.tau > 0.0 && self.tau.is_finite(), format!("tau must be > 0, got {}", self.tau))?;
        let a = self.adam;
        check(
            (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0,
            format!("invalid Adam settings {a:?}"),
        )?;
        self.margin_policy.validate()
    }

    /// Calibration weight actually used: the error-rate margin baseline
    /// trains without the calibration loss.
    pub fn effective_lambda1(&self) -> f64 {
        match self.margin_policy {
            MarginPolicy::ErrorRate { .. } => 0.0,
            _ => self.lambda1,
        }
    }
}
