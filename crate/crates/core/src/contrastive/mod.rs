//! Representation learning: shared adapter, coarse and expert projection
//! heads, contrastive objectives, batch sampling and the SGD training loop.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod objective;
pub mod sampler;
pub mod schedule;
pub mod train;

use std::fmt;
use std::str::FromStr;

pub use loss::{coarse_loss, mixed_contrastive_loss, sup_contrastive_loss, supcon_on_set, unsup_contrastive_loss, Batch, LossGrad};
pub use model::{HeadCache, Linear, ModelDims, ProjectionHead, TrainableModel};
pub use objective::{coarse_objective, embed_batch, fine_loss, total_loss, FeatureBatch, LossBreakdown, LossWeights};
pub use sampler::{sample_batches, SampledStep};
pub use schedule::cosine_lr;
pub use train::{train, train_with_model, TrainStep, TrainTrace};

use crate::error::{Result, XconError};
use crate::scalar::Scalar;

/// How the two views of each image are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViewMode {
    /// Two distinct stored views from a multi-view feature file.
    StoredViews,
    /// Additive Gaussian noise and dimension dropout on the primary view,
    /// followed by renormalization.
    FeatureJitter { sigma: f64, drop_prob: f64 },
}

impl Default for ViewMode {
    fn default() -> Self {
        ViewMode::FeatureJitter {
            sigma: 0.05,
            drop_prob: 0.1,
        }
    }
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewMode::StoredViews => write!(f, "stored"),
            ViewMode::FeatureJitter { sigma, drop_prob } => write!(f, "jitter:{sigma}:{drop_prob}"),
        }
    }
}

impl FromStr for ViewMode {
    type Err = XconError;

    /// `stored`, `jitter`, or `jitter:<sigma>:<drop_prob>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || XconError::Config(format!("bad view mode {s:?}"));
        match parts.as_slice() {
            ["stored"] | ["stored_views"] => Ok(ViewMode::StoredViews),
            ["jitter"] | ["feature_jitter"] => Ok(ViewMode::default()),
            ["jitter" | "feature_jitter", sigma, p] => {
                let sigma: f64 = sigma.parse().map_err(|_| bad())?;
                let drop_prob: f64 = p.parse().map_err(|_| bad())?;
                if !(sigma >= 0.0) || !(0.0..1.0).contains(&drop_prob) {
                    return Err(bad());
                }
                Ok(ViewMode::FeatureJitter { sigma, drop_prob })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tau: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// Partition count `K`; the model carries `K + 1` heads.
    pub partitions: usize,
    pub coarse_batch: usize,
    pub fine_batch: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub view_mode: ViewMode,
    pub hidden: usize,
    pub proj: usize,
    pub use_coarse: bool,
    pub use_fine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda: 0.35,
            alpha: 0.1,
            partitions: crate::partition::DEFAULT_PARTITIONS,
            coarse_batch: 256,
            fine_batch: 32,
            epochs: 200,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            view_mode: ViewMode::default(),
            hidden: 2048,
            proj: 128,
            use_coarse: true,
            use_fine: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(XconError::Config(m.to_string()));
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0) {
            return fail("alpha must be non-negative");
        }
        if self.coarse_batch < 2 || self.fine_batch < 2 {
            return fail("batch sizes must be at least 2");
        }
        if self.partitions == 0 {
            return fail("partition count must be at least 1");
        }
        if self.hidden == 0 || self.proj == 0 {
            return fail("head widths must be positive");
        }
        if !(self.base_lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("optimizer settings must be non-negative");
        }
        if !self.use_coarse && !self.use_fine {
            return fail("at least one of the coarse and fine objectives must be enabled");
        }
        Ok(())
    }

    pub fn weights<T: Scalar>(&self) -> LossWeights<T> {
        LossWeights {
            tau: T::of(self.tau),
            lambda: T::of(self.lambda),
            alpha: T::of(self.alpha),
            use_coarse: self.use_coarse,
            use_fine: self.use_fine,
        }
    }

    pub fn dims(&self, input: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.hidden,
            proj: self.proj,
            experts: self.partitions,
        }
    }

    /// Flat `key=value` pairs, every field included.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tau", self.tau.to_string()),
            ("lambda", self.lambda.to_string()),
            ("alpha", self.alpha.to_string()),
            ("k_partitions", self.partitions.to_string()),
            ("coarse_batch", self.coarse_batch.to_string()),
            ("fine_batch", self.fine_batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("train_seed", self.seed.to_string()),
            ("view_mode", self.view_mode.to_string()),
            ("hidden", self.hidden.to_string()),
            ("proj", self.proj.to_string()),
            ("use_coarse", self.use_coarse.to_string()),
            ("use_fine", self.use_fine.to_string()),
        ]
    }

    /// Applies one `key=value` pair; returns `false` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| XconError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "tau" => self.tau = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "k_partitions" => self.partitions = parse(key, value)?,
            "coarse_batch" => self.coarse_batch = parse(key, value)?,
            "fine_batch" => self.fine_batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "train_seed" => self.seed = parse(key, value)?,
            "view_mode" => self.view_mode = value.trim().parse()?,
            "hidden" => self.hidden = parse(key, value)?,
            "proj" => self.proj = parse(key, value)?,
            "use_coarse" => self.use_coarse = parse(key, value)?,
            "use_fine" => self.use_fine = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
