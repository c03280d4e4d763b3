//! Per-step batch sampling.
//!
//! Every step draws from independent streams derived from the training seed
//! and the step index: one for the coarse batch and one per sub-dataset.
//! Skipping the fine batches therefore leaves the coarse stream unchanged.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::objective::FeatureBatch;
use super::{TrainConfig, ViewMode};
use crate::embedding_store::{DatasetView, FeatureMatrix};
use crate::error::{Result, XconError};
use crate::partition::PartitionResult;
use crate::scalar::Scalar;
use crate::seed::{derive_indexed, derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct SampledStep<T: Scalar> {
    pub coarse: FeatureBatch<T>,
    /// One batch per sub-dataset; empty when the fine path is not sampled.
    pub fine: Vec<FeatureBatch<T>>,
    /// Sub-datasets that were drawn with replacement.
    pub with_replacement: Vec<usize>,
}

fn step_rng(seed: u64, stream: &str, step: usize) -> ChaCha8Rng {
    rng_from(derive_indexed(derive_seed(seed, stream), step as u64))
}

/// Draws the coarse batch and, if `with_fine`, one batch per sub-dataset.
pub fn sample_batches<T: Scalar>(
    features: &FeatureMatrix<T>,
    view: &DatasetView,
    partition: &PartitionResult,
    config: &TrainConfig,
    step: usize,
    with_fine: bool,
) -> Result<SampledStep<T>> {
    let n = features.n();
    if view.len() != n || partition.membership.len() != n {
        return Err(XconError::RowCountMismatch {
            meta: view.len(),
            features: n,
        });
    }
    if config.view_mode == ViewMode::StoredViews && features.views() < 2 {
        return Err(XconError::InvalidArgument(
            "stored view mode needs a feature file with at least 2 views".into(),
        ));
    }

    let mut rng = step_rng(config.seed, "coarse", step);
    let take = config.coarse_batch.min(n);
    let rows = sample_indices(&mut rng, n, take).into_vec();
    let coarse = build_batch(features, view, rows, config.view_mode, &mut rng);

    let mut fine = Vec::new();
    let mut with_replacement = Vec::new();
    if with_fine {
        for (k, members) in partition.members().into_iter().enumerate() {
            let mut rng = step_rng(config.seed, "fine", step * partition.k + k);
            let rows: Vec<usize> = if members.len() >= config.fine_batch {
                sample_indices(&mut rng, members.len(), config.fine_batch)
                    .into_iter()
                    .map(|i| members[i])
                    .collect()
            } else {
                if members.is_empty() {
                    return Err(XconError::DegeneratePartition {
                        k: partition.k,
                        subset: k,
                        size: 0,
                    });
                }
                with_replacement.push(k);
                (0..config.fine_batch)
                    .map(|_| members[rng.random_range(0..members.len())])
                    .collect()
            };
            fine.push(build_batch(features, view, rows, config.view_mode, &mut rng));
        }
    }
    Ok(SampledStep {
        coarse,
        fine,
        with_replacement,
    })
}

fn build_batch<T: Scalar, R: Rng>(
    features: &FeatureMatrix<T>,
    view: &DatasetView,
    rows: Vec<usize>,
    mode: ViewMode,
    rng: &mut R,
) -> FeatureBatch<T> {
    let d = features.d();
    let b = rows.len();
    let mut view_a = Array2::zeros((b, d));
    let mut view_b = Array2::zeros((b, d));
    for (r, &i) in rows.iter().enumerate() {
        match mode {
            ViewMode::StoredViews => {
                let v = features.views();
                let first = rng.random_range(0..v);
                let mut second = rng.random_range(0..v - 1);
                if second >= first {
                    second += 1;
                }
                view_a.row_mut(r).assign(&features.row_view(i, first));
                view_b.row_mut(r).assign(&features.row_view(i, second));
            }
            ViewMode::FeatureJitter { sigma, drop_prob } => {
                let base = features.row(i);
                view_a.row_mut(r).assign(&jitter(base, sigma, drop_prob, rng));
                view_b.row_mut(r).assign(&jitter(base, sigma, drop_prob, rng));
            }
        }
    }
    let labels = rows
        .iter()
        .map(|&i| if view.is_labeled(i) { view.labels()[i] } else { None })
        .collect();
    let labeled = rows.iter().map(|&i| view.is_labeled(i)).collect();
    FeatureBatch {
        rows,
        view_a,
        view_b,
        labels,
        labeled,
    }
}

/// Gaussian noise, then dimension dropout, then renormalization. Falls back
/// to the clean row if the result degenerates to zero.
pub fn jitter<T: Scalar, R: Rng>(x: ArrayView1<'_, T>, sigma: f64, drop_prob: f64, rng: &mut R) -> Array1<T> {
    let mut out: Array1<T> = x
        .iter()
        .map(|&v| {
            let noise: f64 = StandardNormal.sample(rng);
            let kept = drop_prob <= 0.0 || rng.random::<f64>() >= drop_prob;
            if kept {
                v + T::of(sigma * noise)
            } else {
                T::zero()
            }
        })
        .collect();
    let norm = out.dot(&out).sqrt();
    if norm.as_f64() < crate::embedding_store::ZERO_NORM {
        return x.to_owned();
    }
    out.mapv_inplace(|v| v / norm);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use ndarray::Array3;

    fn setup(n: usize, labeled_all: bool) -> (FeatureMatrix<f64>, DatasetView, PartitionResult) {
        let data = Array3::from_shape_fn((n, 2, 4), |(i, v, j)| 1.0 + (i * 4 + j) as f64 * 0.1 + v as f64 * 0.01);
        let m = FeatureMatrix::new(data).unwrap().l2_normalize().unwrap();
        let labels = (0..n).map(|i| Some(i % 3)).collect();
        let labeled = (0..n).map(|i| labeled_all || i % 2 == 0).collect();
        let view = DatasetView::with_generated_ids(labels, labeled).unwrap();
        let membership: Vec<usize> = (0..n).map(|i| i % 8).collect();
        let p = PartitionResult::from_membership(8, membership).unwrap();
        (m, view, p)
    }

    #[test]
    fn eight_fine_batches_of_32() {
        let (m, view, p) = setup(400, false);
        let cfg = TrainConfig::default();
        let s = sample_batches(&m, &view, &p, &cfg, 0, true).unwrap();
        assert_eq!(s.coarse.len(), 256);
        assert_eq!(s.fine.len(), 8);
        assert!(s.fine.iter().all(|b| b.len() == 32));
        assert!(s.with_replacement.is_empty());
        for (k, b) in s.fine.iter().enumerate() {
            assert!(b.rows.iter().all(|&r| p.membership[r] == k));
        }
    }

    #[test]
    fn fully_labeled_coarse_batch() {
        let (m, view, p) = setup(40, true);
        let cfg = TrainConfig {
            coarse_batch: 16,
            ..TrainConfig::default()
        };
        let s = sample_batches(&m, &view, &p, &cfg, 3, false).unwrap();
        assert_eq!(s.coarse.labeled_count(), s.coarse.len());
    }

    #[test]
    fn unlabeled_rows_hide_labels() {
        let (m, view, p) = setup(40, false);
        let cfg = TrainConfig {
            coarse_batch: 40,
            ..TrainConfig::default()
        };
        let s = sample_batches(&m, &view, &p, &cfg, 0, false).unwrap();
        for (l, &is_l) in s.coarse.labels.iter().zip(&s.coarse.labeled) {
            assert_eq!(l.is_some(), is_l);
        }
    }

    #[test]
    fn deterministic_per_seed_and_step() {
        let (m, view, p) = setup(100, false);
        let cfg = TrainConfig {
            coarse_batch: 20,
            fine_batch: 4,
            ..TrainConfig::default()
        };
        let a = sample_batches(&m, &view, &p, &cfg, 5, true).unwrap();
        let b = sample_batches(&m, &view, &p, &cfg, 5, true).unwrap();
        assert_eq!(a, b);
        let c = sample_batches(&m, &view, &p, &cfg, 6, true).unwrap();
        assert_ne!(a.coarse.rows, c.coarse.rows);
        // the coarse draw does not depend on whether fine batches are drawn
        let d = sample_batches(&m, &view, &p, &cfg, 5, false).unwrap();
        assert_eq!(a.coarse, d.coarse);
    }

    #[test]
    fn small_subset_sampled_with_replacement() {
        let (m, view, p) = setup(40, false);
        let cfg = TrainConfig {
            coarse_batch: 8,
            fine_batch: 32,
            ..TrainConfig::default()
        };
        let s = sample_batches(&m, &view, &p, &cfg, 0, true).unwrap();
        assert_eq!(s.with_replacement.len(), 8);
        assert!(s.fine.iter().all(|b| b.len() == 32));
    }

    #[test]
    fn stored_views_are_distinct() {
        let (m, view, p) = setup(10, false);
        let cfg = TrainConfig {
            coarse_batch: 10,
            view_mode: ViewMode::StoredViews,
            ..TrainConfig::default()
        };
        let s = sample_batches(&m, &view, &p, &cfg, 0, false).unwrap();
        for r in 0..10 {
            assert_ne!(s.coarse.view_a.row(r), s.coarse.view_b.row(r));
        }
    }

    #[test]
    fn jitter_output_is_unit_norm() {
        let x = ndarray::array![0.6f64, 0.8, 0.0];
        let mut rng = rng_from(0);
        for _ in 0..20 {
            let y = jitter(x.view(), 0.05, 0.1, &mut rng);
            assert!((y.dot(&y).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
