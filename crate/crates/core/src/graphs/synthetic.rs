//! Synthetic long-tail multi-view message datasets.
//!
//! Class `k` keeps `round(n_max * gamma^k)` training messages (ties to even)
//! plus a fixed number of validation and test messages. Features come from
//! class-conditional Gaussians, timestamps cluster around a per-class event
//! day, and each view assigns every message one token drawn either from its
//! class's signal pool or from a pool shared by all classes. The share of
//! shared-pool tokens is solved per view so that the realized fraction of
//! same-class edges hits the requested target.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{MessageRecord, SplitDataset, Splits, View};
use crate::error::{Error, Result};

/// Smallest admissible training class size.
pub const MIN_CLASS_SIZE: usize = 1;

/// Accepted gap between realized and requested same-class edge ratio.
pub const EDGE_RATIO_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub n_max: usize,
    pub gamma: f64,
    pub d_in: usize,
    /// Norm of every class mean; features add unit-variance noise.
    pub mean_sep: f64,
    pub q_hashtag: f64,
    pub q_entity: f64,
    pub q_user: f64,
    pub time_delta_days: f64,
    pub time_jitter_days: f64,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    /// Expected number of messages sharing one token.
    pub token_group_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            n_max: 200,
            gamma: 0.6,
            d_in: 32,
            mean_sep: 1.0,
            q_hashtag: 0.9,
            q_entity: 0.7,
            q_user: 0.85,
            time_delta_days: 3.0,
            time_jitter_days: 1.0,
            val_per_class: 20,
            test_per_class: 30,
            seed: 1,
            token_group_size: 8,
        }
    }
}

impl SyntheticConfig {
    /// Seven-class recipe with `n_max = 989`, `gamma = 0.5` and the
    /// per-view edge qualities of the English crisis corpus.
    pub fn crisislex7() -> Self {
        Self {
            classes: 7,
            n_max: 989,
            gamma: 0.5,
            q_hashtag: 0.8778,
            q_entity: 0.9257,
            q_user: 0.8707,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "crisislex7" => Some(Self::crisislex7()),
            "default" | "longtail10" => Some(Self::default()),
            _ => None,
        }
    }

    pub fn target_quality(&self, view: View) -> f64 {
        match view {
            View::Hashtag => self.q_hashtag,
            View::Entity => self.q_entity,
            View::User => self.q_user,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("classes must be >= 2, got {}", self.classes));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.d_in == 0 {
            return fail("d_in must be positive".into());
        }
        if self.token_group_size == 0 {
            return fail("token_group_size must be positive".into());
        }
        for v in View::ALL {
            let q = self.target_quality(v);
            if !(q > 0.0 && q <= 1.0) {
                return fail(format!("target edge quality for {v} must lie in (0, 1], got {q}"));
            }
        }
        for (name, x) in [
            ("mean_sep", self.mean_sep),
            ("time_delta_days", self.time_delta_days),
            ("time_jitter_days", self.time_jitter_days),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return fail(format!("{name} must be finite and nonnegative, got {x}"));
            }
        }
        Ok(())
    }
}

/// Training split sizes `round(n_max * gamma^k)` with ties to even.
pub fn class_sizes(config: &SyntheticConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let sizes: Vec<usize> = (0..config.classes)
        .map(|k| libm::rint(config.n_max as f64 * libm::pow(config.gamma, k as f64)) as usize)
        .collect();
    if let Some(k) = sizes.iter().position(|&n| n < MIN_CLASS_SIZE) {
        return Err(Error::Infeasible(format!(
            "class {k} would have {} training messages (minimum {MIN_CLASS_SIZE})",
            sizes[k]
        )));
    }
    Ok(sizes)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    Val,
    Test,
}

/// Generates message records and their splits.
pub fn generate_synthetic_records(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<(Vec<MessageRecord>, Splits)> {
    let sizes = class_sizes(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let means: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| {
            let v: Vec<f64> = (0..config.d_in).map(|_| rng.sample(StandardNormal)).collect();
            let n = crate::numkit::matrix::norm(&v).max(1e-12);
            v.iter().map(|x| x / n * config.mean_sep).collect()
        })
        .collect();

    let mut nodes: Vec<(usize, Role)> = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        nodes.extend(core::iter::repeat_n((k, Role::Train), n));
        nodes.extend(core::iter::repeat_n((k, Role::Val), config.val_per_class));
        nodes.extend(core::iter::repeat_n((k, Role::Test), config.test_per_class));
    }
    nodes.shuffle(&mut rng);
    let labels: Vec<usize> = nodes.iter().map(|&(k, _)| k).collect();

    let mut records: Vec<MessageRecord> = nodes
        .iter()
        .enumerate()
        .map(|(i, &(k, _))| {
            let features = means[k]
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let jitter: f64 = rng.sample(StandardNormal);
            MessageRecord {
                id: i as u64,
                label: k,
                timestamp: k as f64 * config.time_delta_days + config.time_jitter_days * jitter,
                hashtags: Vec::new(),
                entities: Vec::new(),
                users: Vec::new(),
                features,
            }
        })
        .collect();

    let totals: Vec<usize> = {
        let mut t = vec![0; config.classes];
        for &k in &labels {
            t[k] += 1;
        }
        t
    };
    for (vi, view) in View::ALL.into_iter().enumerate() {
        let view_seed = seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(vi as u64 + 1));
        let plan = TokenPlan {
            labels: &labels,
            totals: &totals,
            group: config.token_group_size,
            seed: view_seed,
        };
        let rho = plan.solve(config.target_quality(view), view)?;
        let (tokens, _) = plan.assign(rho);
        let prefix = match view {
            View::Hashtag => "#t",
            View::Entity => "ent:",
            View::User => "@u",
        };
        for (r, t) in records.iter_mut().zip(tokens) {
            let token = format!("{prefix}{t}");
            match view {
                View::Hashtag => r.hashtags.push(token),
                View::Entity => r.entities.push(token),
                View::User => r.users.push(token),
            }
        }
    }

    let mut splits = Splits::default();
    for (i, &(_, role)) in nodes.iter().enumerate() {
        match role {
            Role::Train => splits.train.push(i),
            Role::Val => splits.val.push(i),
            Role::Test => splits.test.push(i),
        }
    }
    Ok((records, splits))
}

/// Generates a complete synthetic dataset with graphs built.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SplitDataset> {
    let (records, splits) = generate_synthetic_records(config, seed)?;
    SplitDataset::from_records(&records, config.classes, splits)
}

struct TokenPlan<'a> {
    labels: &'a [usize],
    totals: &'a [usize],
    group: usize,
    seed: u64,
}

impl TokenPlan<'_> {
    /// One token id per node. Every node consumes exactly two draws so that
    /// trials at different mixing rates share random numbers.
    fn assign(&self, rho: f64) -> (Vec<usize>, usize) {
        let n = self.labels.len();
        let pools: Vec<usize> = self
            .totals
            .iter()
            .map(|&m| libm::ceil((1.0 - rho) * m as f64 / self.group as f64).max(1.0) as usize)
            .collect();
        let mut offsets = Vec::with_capacity(pools.len());
        let mut next = 0;
        for &p in &pools {
            offsets.push(next);
            next += p;
        }
        let noise_pool = libm::ceil(rho * n as f64 / self.group as f64).max(1.0) as usize;
        let token_count = next + noise_pool;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let tokens = self
            .labels
            .iter()
            .map(|&k| {
                let u: f64 = rng.random();
                let j: f64 = rng.random();
                if u < rho {
                    next + (j * noise_pool as f64) as usize
                } else {
                    offsets[k] + (j * pools[k] as f64) as usize
                }
            })
            .collect();
        (tokens, token_count)
    }

    fn quality(&self, rho: f64) -> Option<f64> {
        let (tokens, token_count) = self.assign(rho);
        let classes = self.totals.len();
        let mut counts = vec![0usize; token_count * classes];
        for (&t, &k) in tokens.iter().zip(self.labels) {
            counts[t * classes + k] += 1;
        }
        let pairs = |c: usize| c * c.saturating_sub(1) / 2;
        let (mut correct, mut total) = (0usize, 0usize);
        for per_token in counts.chunks(classes) {
            let size: usize = per_token.iter().sum();
            total += pairs(size);
            correct += per_token.iter().map(|&c| pairs(c)).sum::<usize>();
        }
        (total > 0).then(|| correct as f64 / total as f64)
    }

    /// Bisection over the shared-pool rate.
    fn solve(&self, target: f64, view: View) -> Result<f64> {
        let mut best: Option<(f64, f64)> = None;
        let consider = |best: &mut Option<(f64, f64)>, rho: f64, q: Option<f64>| {
            if let Some(q) = q {
                let err = (q - target).abs();
                if best.is_none_or(|(_, e)| err < e) {
                    *best = Some((rho, err));
                }
            }
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        consider(&mut best, lo, self.quality(lo));
        consider(&mut best, hi, self.quality(hi));
        for _ in 0..60 {
            if best.is_some_and(|(_, e)| e < 1e-3) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let q = self.quality(mid);
            consider(&mut best, mid, q);
            match q {
                Some(q) if q > target => lo = mid,
                _ => hi = mid,
            }
        }
        match best {
            Some((rho, err)) if err <= EDGE_RATIO_TOLERANCE => Ok(rho),
            _ => Err(Error::Infeasible(format!(
                "cannot reach same-class edge ratio {target} in view {view} with these class sizes"
            ))),
        }
    }
}
