//! Desk-scale datasets in which a coarse nuisance factor ("background")
//! dominates the feature geometry and fine classes are nested inside it.
//!
//! Each sample is `background + class offset + noise`, L2-normalized.
//! Background centroids have norm `background_scale`; class offsets have
//! norm `class_scale` and, when `trait_rank > 0`, all lie in one shared
//! random subspace of that rank; noise is isotropic with per-dimension
//! standard deviation `noise_sigma`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::contrastive::TrainConfig;
use crate::embedding_store::{DatasetView, FeatureMatrix};
use crate::error::{Result, XconError};
use crate::seed::{derive_indexed, derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub n_backgrounds: usize,
    /// Fine classes per background.
    pub n_fine_classes: usize,
    pub samples_per_class: usize,
    pub d: usize,
    pub background_scale: f64,
    pub class_scale: f64,
    pub noise_sigma: f64,
    /// Dimension of the shared subspace holding every class offset (0 = full space).
    pub trait_rank: usize,
    /// Fraction of each background's classes that are seen.
    pub seen_fraction: f64,
    /// Fraction of each seen class's samples that are labeled.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_backgrounds: 2,
            n_fine_classes: 4,
            samples_per_class: 50,
            d: 32,
            background_scale: 1.0,
            class_scale: 0.3,
            noise_sigma: 0.1,
            trait_rank: 4,
            seen_fraction: 0.5,
            labeled_fraction: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn num_classes(&self) -> usize {
        self.n_backgrounds * self.n_fine_classes
    }

    /// Seen classes per background.
    pub fn seen_per_background(&self) -> usize {
        (self.seen_fraction * self.n_fine_classes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(XconError::InvalidArgument(m));
        if self.num_classes() < 2 {
            return fail(format!("need at least 2 classes, spec gives {}", self.num_classes()));
        }
        if self.samples_per_class == 0 || self.d == 0 {
            return fail("samples_per_class and d must be positive".into());
        }
        if !(self.background_scale > self.class_scale && self.class_scale > self.noise_sigma && self.noise_sigma > 0.0) {
            return fail("scales must satisfy background > class > noise > 0".into());
        }
        if self.trait_rank > self.d {
            return fail(format!("trait_rank {} exceeds d {}", self.trait_rank, self.d));
        }
        if !(0.0..=1.0).contains(&self.seen_fraction) || !(0.0..=1.0).contains(&self.labeled_fraction) {
            return fail("fractions must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Ground-truth factors recorded per row.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub background: Vec<usize>,
    pub class: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub features: FeatureMatrix<f32>,
    /// Labels present on every row (held-out truth on unlabeled rows).
    pub view: DatasetView,
    pub truth: GroundTruth,
}

fn random_unit<R: rand::Rng>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng));
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Orthonormal basis (columns) of a random `rank`-dimensional subspace.
fn random_subspace<R: rand::Rng>(d: usize, rank: usize, rng: &mut R) -> Array2<f64> {
    let mut basis = Array2::<f64>::zeros((d, rank));
    for j in 0..rank {
        loop {
            let mut v = random_unit(d, rng);
            for i in 0..j {
                let b = basis.column(i);
                let proj = v.dot(&b);
                v.scaled_add(-proj, &b);
            }
            let n = v.dot(&v).sqrt();
            if n > 1e-6 {
                basis.column_mut(j).assign(&(v / n));
                break;
            }
        }
    }
    basis
}

pub fn generate(spec: &GeneratorSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = rng_from(derive_seed(spec.seed, "structure"));

    let backgrounds: Vec<Array1<f64>> = (0..spec.n_backgrounds)
        .map(|_| random_unit(d, &mut rng) * spec.background_scale)
        .collect();
    let basis = (spec.trait_rank > 0).then(|| random_subspace(d, spec.trait_rank, &mut rng));
    let offsets: Vec<Array1<f64>> = (0..spec.num_classes())
        .map(|_| {
            let dir = match &basis {
                Some(b) => b.dot(&random_unit(spec.trait_rank, &mut rng)),
                None => random_unit(d, &mut rng),
            };
            dir * spec.class_scale
        })
        .collect();

    let seen_per_bg = spec.seen_per_background();
    let mut seen = vec![false; spec.num_classes()];
    for g in 0..spec.n_backgrounds {
        let mut fine: Vec<usize> = (0..spec.n_fine_classes).collect();
        fine.shuffle(&mut rng);
        for &f in &fine[..seen_per_bg] {
            seen[g * spec.n_fine_classes + f] = true;
        }
    }
    let per_class_labeled = (spec.labeled_fraction * spec.samples_per_class as f64).round() as usize;

    let n = spec.num_classes() * spec.samples_per_class;
    let noise_seed = derive_seed(spec.seed, "noise");
    let mut rows = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut labeled = Vec::with_capacity(n);
    let mut background = Vec::with_capacity(n);
    for c in 0..spec.num_classes() {
        let g = c / spec.n_fine_classes;
        let mut order: Vec<usize> = (0..spec.samples_per_class).collect();
        order.shuffle(&mut rng);
        let mut is_labeled = vec![false; spec.samples_per_class];
        if seen[c] {
            for &s in &order[..per_class_labeled] {
                is_labeled[s] = true;
            }
        }
        for (s, &lab) in is_labeled.iter().enumerate() {
            let i = c * spec.samples_per_class + s;
            let mut sample_rng = rng_from(derive_indexed(noise_seed, i as u64));
            let mut x = &backgrounds[g] + &offsets[c];
            x.mapv_inplace(|v| {
                let z: f64 = StandardNormal.sample(&mut sample_rng);
                v + spec.noise_sigma * z
            });
            rows.row_mut(i).assign(&x);
            labels.push(Some(c));
            labeled.push(lab);
            background.push(g);
        }
    }

    let features = FeatureMatrix::from_rows(rows.mapv(|v| v as f32))?.l2_normalize()?;
    let ids = (0..n).map(|i| format!("s{i:05}")).collect();
    let view = DatasetView::new(ids, labels.clone(), labeled)?;
    Ok(SyntheticDataset {
        features,
        view,
        truth: GroundTruth {
            background,
            class: labels.into_iter().map(|l| l.expect("every synthetic row is labeled")).collect(),
        },
    })
}

impl SyntheticDataset {
    /// Factor file: metadata columns plus the background index.
    pub fn factors_string(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.view.ids().iter().enumerate() {
            let flag = if self.view.is_labeled(i) { "L" } else { "U" };
            writeln!(out, "{id}\t{}\t{flag}\t{}", self.truth.class[i], self.truth.background[i]).expect("write to string");
        }
        out
    }

    pub fn write_factors(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.factors_string()).map_err(|e| XconError::io(path, e))
    }
}

/// Training settings sized for the default generator: a narrow head and
/// small batches so that 400 rows still give several steps per epoch.
pub fn bench_train_config() -> TrainConfig {
    TrainConfig {
        partitions: 2,
        hidden: 64,
        proj: 32,
        epochs: 150,
        coarse_batch: 64,
        base_lr: 0.03,
        ..TrainConfig::default()
    }
}

/// Fraction of rows whose group agrees with the majority factor of that group.
pub fn purity(groups: &[usize], factor: &[usize]) -> f64 {
    use std::collections::HashMap;
    let mut counts: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&g, &f) in groups.iter().zip(factor) {
        *counts.entry(g).or_default().entry(f).or_default() += 1;
    }
    let majority: usize = counts.values().map(|h| h.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / groups.len().max(1) as f64
}
