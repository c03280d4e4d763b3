use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::clustering::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::contrastive::TrainConfig;
use crate::error::{Result, XconError};
use crate::seed::derive_seed;

/// Seeds of the individual pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub partition: u64,
    pub train: u64,
    pub assign: u64,
    pub estimate: u64,
}

impl StageSeeds {
    pub fn derive(root: u64) -> Self {
        Self {
            partition: derive_seed(root, "partition"),
            train: derive_seed(root, "train"),
            assign: derive_seed(root, "assign"),
            estimate: derive_seed(root, "estimate"),
        }
    }
}

/// Everything a pipeline run depends on.
///
/// Persisted as flat `key=value` lines. Setting `seed` re-derives every
/// stage seed; stage seeds set after it override the derived values, so an
/// echoed config reproduces its run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Feature file prefix (`<prefix>.bin` / `<prefix>.meta`).
    pub features: Option<PathBuf>,
    /// Metadata path overriding `<prefix>.meta`.
    pub meta: Option<PathBuf>,
    pub out: PathBuf,
    /// Name written into report CSV rows.
    pub dataset: String,
    pub seed: u64,
    pub stage_seeds: StageSeeds,
    /// Training settings; `train.seed` mirrors `stage_seeds.train`.
    pub train: TrainConfig,
    /// Cluster count for assignment; defaults to the number of classes
    /// present in the metadata.
    pub num_classes: Option<usize>,
    pub estimate_k: bool,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub estimate_restarts: usize,
    pub probe_fraction: f64,
    /// Assignment runs kept best-of by inertia.
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 0;
        let stage_seeds = StageSeeds::derive(seed);
        Self {
            features: None,
            meta: None,
            out: PathBuf::from("xcon-run"),
            dataset: "dataset".into(),
            seed,
            stage_seeds,
            train: TrainConfig {
                seed: stage_seeds.train,
                ..TrainConfig::default()
            },
            num_classes: None,
            estimate_k: false,
            k_min: None,
            k_max: None,
            estimate_restarts: 10,
            probe_fraction: 0.2,
            kmeans_restarts: 10,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_tol: DEFAULT_TOL,
        }
    }
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| XconError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_opt<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value.trim().is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.stage_seeds = StageSeeds::derive(seed);
        self.train.seed = self.stage_seeds.train;
    }

    pub fn meta_path(&self) -> Option<PathBuf> {
        self.meta
            .clone()
            .or_else(|| self.features.as_ref().map(crate::embedding_store::meta_path))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.seed != self.stage_seeds.train {
            return Err(XconError::Config("train_seed disagrees with the train stage seed".into()));
        }
        if self.num_classes == Some(0) {
            return Err(XconError::Config("num_classes must be positive".into()));
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction < 1.0) {
            return Err(XconError::Config("probe_fraction must lie in (0, 1)".into()));
        }
        if self.estimate_restarts == 0 || self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return Err(XconError::Config(
                "estimate_restarts, kmeans_restarts and kmeans_max_iter must be positive".into(),
            ));
        }
        if let (Some(lo), Some(hi)) = (self.k_min, self.k_max) {
            if hi < lo {
                return Err(XconError::Config(format!("k_max={hi} below k_min={lo}")));
            }
        }
        Ok(())
    }

    /// Every setting, defaults included, as `key=value` lines.
    pub fn to_echo(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("features", opt_path(&self.features)),
            ("meta", opt_path(&self.meta)),
            ("out", self.out.display().to_string()),
            ("dataset", self.dataset.clone()),
            ("seed", self.seed.to_string()),
            ("partition_seed", self.stage_seeds.partition.to_string()),
            ("assign_seed", self.stage_seeds.assign.to_string()),
            ("estimate_seed", self.stage_seeds.estimate.to_string()),
        ];
        pairs.extend(self.train.to_pairs());
        pairs.extend([
            ("num_classes", opt_usize(self.num_classes)),
            ("estimate_k", self.estimate_k.to_string()),
            ("k_min", opt_usize(self.k_min)),
            ("k_max", opt_usize(self.k_max)),
            ("estimate_restarts", self.estimate_restarts.to_string()),
            ("probe_fraction", self.probe_fraction.to_string()),
            ("kmeans_restarts", self.kmeans_restarts.to_string()),
            ("kmeans_max_iter", self.kmeans_max_iter.to_string()),
            ("kmeans_tol", self.kmeans_tol.to_string()),
        ]);
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k}={v}").expect("write to string");
        }
        out
    }

    /// Applies one setting; unknown keys are an error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "features" => self.features = parse_opt(key, value)?,
            "meta" => self.meta = parse_opt(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "dataset" => self.dataset = value.trim().to_string(),
            "seed" => self.set_seed(parse(key, value)?),
            "partition_seed" => self.stage_seeds.partition = parse(key, value)?,
            "assign_seed" => self.stage_seeds.assign = parse(key, value)?,
            "estimate_seed" => self.stage_seeds.estimate = parse(key, value)?,
            "train_seed" => {
                self.stage_seeds.train = parse(key, value)?;
                self.train.seed = self.stage_seeds.train;
            }
            "num_classes" => self.num_classes = parse_opt(key, value)?,
            "estimate_k" => self.estimate_k = parse(key, value)?,
            "k_min" => self.k_min = parse_opt(key, value)?,
            "k_max" => self.k_max = parse_opt(key, value)?,
            "estimate_restarts" => self.estimate_restarts = parse(key, value)?,
            "probe_fraction" => self.probe_fraction = parse(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse(key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse(key, value)?,
            _ => {
                if !self.train.apply(key, value)? {
                    return Err(XconError::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| XconError::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.apply(k, v)
                .map_err(|e| XconError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| XconError::io(path, e))?;
        Self::parse(&text)
    }
}
