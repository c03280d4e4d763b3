//! Estimates the number of classes in the unlabeled data by scoring
//! candidate cluster counts against a held-out probe of labeled rows.
//!
//! For each candidate `k`, plain k-means runs on all rows from several
//! seeds; the score is the mean Hungarian accuracy of the resulting
//! clusters on the probe rows. Averaging over restarts penalizes both
//! merged and split seen classes, whose frequency grows as `k` moves
//! away from the true count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::clustering::{kmeans, KMeansParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::embedding_store::{DatasetView, FeatureMatrix};
use crate::error::{Result, XconError};
use crate::evaluation::cluster_acc;
use crate::scalar::Scalar;
use crate::seed::{derive_indexed, derive_seed, rng_from};

pub const MIN_LABELED_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationParams {
    pub k_min: usize,
    /// Defaults to `2·|C^l| + 10`.
    pub k_max: Option<usize>,
    pub seed: u64,
    pub probe_fraction: f64,
    /// k-means restarts averaged per candidate.
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl EstimationParams {
    pub fn new(k_min: usize, k_max: Option<usize>, seed: u64) -> Self {
        Self {
            k_min,
            k_max,
            seed,
            probe_fraction: 0.2,
            restarts: 10,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSearchResult {
    pub k_hat: usize,
    /// `(k, probe accuracy)` for every evaluated candidate, ascending in `k`.
    pub scores: Vec<(usize, f64)>,
    pub probe_fraction: f64,
    pub probe_rows: Vec<usize>,
}

impl KSearchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,probe_acc\n");
        for (k, s) in &self.scores {
            writeln!(out, "{k},{s:.6}").expect("write to string");
        }
        out
    }
}

/// Stratified probe: about `fraction` of each seen class's labeled rows.
pub fn select_probe(view: &DatasetView, fraction: f64, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in view.labeled_indices() {
        let c = view.labels()[i].expect("labeled rows carry labels");
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = rng_from(seed);
    let mut probe = Vec::new();
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        let take = (fraction * rows.len() as f64).round() as usize;
        probe.extend_from_slice(&rows[..take.min(rows.len())]);
    }
    if probe.is_empty() {
        if let Some(rows) = by_class.values().next() {
            probe.push(rows[0]);
        }
    }
    probe.sort_unstable();
    probe
}

/// Coarse grid of step `max(1, (k_max − k_min)/20)`; always includes `k_max`.
fn coarse_grid(k_min: usize, k_max: usize) -> (Vec<usize>, usize) {
    let step = ((k_max - k_min) / 20).max(1);
    let mut grid: Vec<usize> = (k_min..=k_max).step_by(step).collect();
    if grid.last() != Some(&k_max) {
        grid.push(k_max);
    }
    (grid, step)
}

pub fn estimate_num_classes<T: Scalar>(
    m: &FeatureMatrix<T>,
    view: &DatasetView,
    params: &EstimationParams,
) -> Result<KSearchResult> {
    if view.len() != m.n() {
        return Err(XconError::RowCountMismatch {
            meta: view.len(),
            features: m.n(),
        });
    }
    let seen = view.seen_classes().len();
    let labeled = view.labeled_indices().len();
    if labeled < MIN_LABELED_ROWS {
        return Err(XconError::InvalidArgument(format!(
            "class-count estimation needs at least {MIN_LABELED_ROWS} labeled rows, found {labeled}"
        )));
    }
    if params.k_min < seen {
        return Err(XconError::KBelowSeenClasses {
            k: params.k_min,
            seen,
        });
    }
    let k_max = params.k_max.unwrap_or(2 * seen + 10);
    if k_max < params.k_min {
        return Err(XconError::InvalidArgument(format!(
            "k_max={k_max} below k_min={}",
            params.k_min
        )));
    }
    if k_max > m.n() {
        return Err(XconError::InvalidArgument(format!("k_max={k_max} exceeds row count {}", m.n())));
    }
    if params.restarts == 0 {
        return Err(XconError::InvalidArgument("at least one restart required".into()));
    }

    let probe = select_probe(view, params.probe_fraction, derive_seed(params.seed, "probe"));
    let probe_truth: Vec<usize> = probe.iter().map(|&i| view.labels()[i].expect("labeled")).collect();
    let points = m.primary();

    let score = |k: usize| -> Result<f64> {
        let mut sum = 0.0;
        for r in 0..params.restarts {
            let seed = derive_indexed(derive_seed(params.seed, "restart"), (k * params.restarts + r) as u64);
            let model = kmeans(
                points,
                &KMeansParams {
                    k,
                    seed,
                    max_iter: params.max_iter,
                    tol: params.tol,
                },
            )?;
            let pred: Vec<usize> = probe.iter().map(|&i| model.assignment[i]).collect();
            sum += cluster_acc(&pred, &probe_truth)?;
        }
        Ok(sum / params.restarts as f64)
    };
    let evaluate = |ks: Vec<usize>| -> Result<Vec<(usize, f64)>> {
        ks.into_par_iter().map(|k| score(k).map(|s| (k, s))).collect()
    };

    let (grid, step) = coarse_grid(params.k_min, k_max);
    let mut scores: BTreeMap<usize, f64> = evaluate(grid)?.into_iter().collect();
    if step > 1 {
        let best = argmax(&scores);
        let lo = best.saturating_sub(step - 1).max(params.k_min);
        let hi = (best + step - 1).min(k_max);
        let fine: BTreeSet<usize> = (lo..=hi).filter(|k| !scores.contains_key(k)).collect();
        scores.extend(evaluate(fine.into_iter().collect())?);
    }
    Ok(KSearchResult {
        k_hat: argmax(&scores),
        scores: scores.into_iter().collect(),
        probe_fraction: params.probe_fraction,
        probe_rows: probe,
    })
}

/// Highest score, smallest `k` on ties.
fn argmax(scores: &BTreeMap<usize, f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (&k, &s) in scores {
        if s > best.1 {
            best = (k, s);
        }
    }
    best.0
}
