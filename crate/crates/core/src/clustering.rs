//! Lloyd k-means with k-means++ seeding, plus the semi-supervised variant
//! in which labeled rows are pinned to the cluster bound to their class.
//!
//! The assignment step runs in parallel over rows; centroid sums are
//! accumulated sequentially in row order, so results do not depend on the
//! thread count.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use crate::embedding_store::DatasetView;
use crate::error::{Result, XconError};
use crate::scalar::Scalar;
use crate::seed::{derive_indexed, rng_from};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(XconError::InvalidArgument("k must be at least 1".into()));
        }
        if self.k > n {
            return Err(XconError::InvalidArgument(format!(
                "k={} exceeds row count {n}",
                self.k
            )));
        }
        if self.max_iter == 0 {
            return Err(XconError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(XconError::InvalidArgument("tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<T: Scalar> {
    pub k: usize,
    pub centroids: Array2<T>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, including the final one.
    pub inertia_trace: Vec<f64>,
    /// Semi-supervised mode: class bound to cluster `i` for `i < bound_classes.len()`.
    pub bound_classes: Vec<usize>,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
pub fn nearest_centroid<T: Scalar>(x: ArrayView1<'_, T>, centroids: &Array2<T>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest-centroid assignment for arbitrary rows.
pub fn predict<T: Scalar>(points: ArrayView2<'_, T>, centroids: &Array2<T>) -> Vec<usize> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| nearest_centroid(points.row(i), centroids).0)
        .collect()
}

/// k-means++ seeding: `k` rows chosen by D² weighting, deterministic in `seed`.
pub fn kmeans_pp_init<T: Scalar>(points: ArrayView2<'_, T>, k: usize, seed: u64) -> Result<Array2<T>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(XconError::InvalidArgument(format!("k={k} outside [1, {n}]")));
    }
    let candidates: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(seed);
    let chosen = kmeans_pp_extend(points, &candidates, &[], k, &mut rng)?;
    Ok(stack_rows(points, &chosen))
}

/// Picks `extra` more centers from `candidates` by D² sampling against
/// `existing` centers plus those already picked. Returns row indices.
fn kmeans_pp_extend<T: Scalar, R: Rng>(
    points: ArrayView2<'_, T>,
    candidates: &[usize],
    existing: &[Array1<T>],
    extra: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut chosen = Vec::with_capacity(extra);
    if extra == 0 {
        return Ok(chosen);
    }
    if candidates.is_empty() {
        return Err(XconError::InsufficientDistinctPoints { k: extra });
    }
    let mut min_d: Vec<f64> = if existing.is_empty() {
        let first = candidates[rng.random_range(0..candidates.len())];
        chosen.push(first);
        candidates
            .iter()
            .map(|&i| sq_dist(points.row(i), points.row(first)))
            .collect()
    } else {
        candidates
            .iter()
            .map(|&i| {
                existing
                    .iter()
                    .map(|c| sq_dist(points.row(i), c.view()))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    while chosen.len() < extra {
        let total: f64 = min_d.iter().sum();
        if !(total > 0.0) {
            return Err(XconError::InsufficientDistinctPoints {
                k: existing.len() + extra,
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (slot, &w) in min_d.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(slot);
            if acc > target {
                break;
            }
        }
        let slot = pick.expect("positive total weight implies a candidate");
        let row = candidates[slot];
        chosen.push(row);
        for (slot, &i) in candidates.iter().enumerate() {
            let d = sq_dist(points.row(i), points.row(row));
            if d < min_d[slot] {
                min_d[slot] = d;
            }
        }
    }
    Ok(chosen)
}

fn stack_rows<T: Scalar>(points: ArrayView2<'_, T>, rows: &[usize]) -> Array2<T> {
    let mut out = Array2::zeros((rows.len(), points.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&points.row(i));
    }
    out
}

/// Plain Lloyd k-means.
pub fn kmeans<T: Scalar>(points: ArrayView2<'_, T>, params: &KMeansParams) -> Result<ClusterModel<T>> {
    params.validate(points.nrows())?;
    let centroids = kmeans_pp_init(points, params.k, params.seed)?;
    let forced = vec![None; points.nrows()];
    Ok(lloyd(points, centroids, &forced, params, Vec::new()))
}

/// Semi-supervised k-means.
///
/// Cluster `i < |C^l|` is bound to the `i`-th seen class in ascending order
/// and initialized at the mean of its labeled rows; the remaining centroids
/// are seeded by k-means++ over unlabeled rows. Labeled rows are assigned to
/// their bound cluster in every iteration.
pub fn semi_supervised_kmeans<T: Scalar>(
    points: ArrayView2<'_, T>,
    view: &DatasetView,
    params: &KMeansParams,
) -> Result<ClusterModel<T>> {
    let n = points.nrows();
    if view.len() != n {
        return Err(XconError::RowCountMismatch {
            meta: view.len(),
            features: n,
        });
    }
    let seen: Vec<usize> = view.seen_classes().iter().copied().collect();
    if seen.is_empty() {
        return Err(XconError::InvalidArgument(
            "semi-supervised k-means needs labeled rows".into(),
        ));
    }
    if params.k < seen.len() {
        return Err(XconError::KBelowSeenClasses {
            k: params.k,
            seen: seen.len(),
        });
    }
    params.validate(n)?;

    let cluster_of: BTreeMap<usize, usize> = seen.iter().enumerate().map(|(j, &c)| (c, j)).collect();
    let forced: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if view.is_labeled(i) {
                view.labels()[i].map(|c| cluster_of[&c])
            } else {
                None
            }
        })
        .collect();

    let d = points.ncols();
    let mut sums = vec![vec![0.0f64; d]; seen.len()];
    let mut counts = vec![0usize; seen.len()];
    for (i, f) in forced.iter().enumerate() {
        if let Some(j) = *f {
            counts[j] += 1;
            for (s, &x) in sums[j].iter_mut().zip(points.row(i)) {
                *s += x.as_f64();
            }
        }
    }
    let seen_centroids: Vec<Array1<T>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|&v| T::of(v / c as f64)).collect())
        .collect();

    let unlabeled: Vec<usize> = (0..n).filter(|&i| forced[i].is_none()).collect();
    let mut rng = rng_from(params.seed);
    let extra_rows = kmeans_pp_extend(points, &unlabeled, &seen_centroids, params.k - seen.len(), &mut rng)?;

    let mut centroids = Array2::zeros((params.k, d));
    for (j, c) in seen_centroids.iter().enumerate() {
        centroids.row_mut(j).assign(c);
    }
    for (off, &row) in extra_rows.iter().enumerate() {
        centroids.row_mut(seen.len() + off).assign(&points.row(row));
    }
    Ok(lloyd(points, centroids, &forced, params, seen))
}

/// Best of `restarts` semi-supervised runs by final inertia, earliest on
/// ties. Run 0 uses `params.seed`, so one restart equals a single run.
pub fn semi_supervised_kmeans_restarts<T: Scalar>(
    points: ArrayView2<'_, T>,
    view: &DatasetView,
    params: &KMeansParams,
    restarts: usize,
) -> Result<ClusterModel<T>> {
    if restarts == 0 {
        return Err(XconError::InvalidArgument("at least one restart required".into()));
    }
    let mut best: Option<ClusterModel<T>> = None;
    for r in 0..restarts {
        let seed = if r == 0 {
            params.seed
        } else {
            derive_indexed(params.seed, r as u64)
        };
        let model = semi_supervised_kmeans(points, view, &KMeansParams { seed, ..*params })?;
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn assign_step<T: Scalar>(
    points: ArrayView2<'_, T>,
    centroids: &Array2<T>,
    forced: &[Option<usize>],
) -> (Vec<usize>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = (0..points.nrows())
        .into_par_iter()
        .map(|i| match forced[i] {
            Some(j) => (j, sq_dist(points.row(i), centroids.row(j))),
            None => nearest_centroid(points.row(i), centroids),
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Recomputes centroids as member means. Empty clusters are moved onto the
/// free row farthest from its current centroid.
fn update_step<T: Scalar>(
    points: ArrayView2<'_, T>,
    assignment: &[usize],
    dists: &[f64],
    forced: &[Option<usize>],
    k: usize,
) -> Array2<T> {
    let d = points.ncols();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, &x) in sums[a * d..(a + 1) * d].iter_mut().zip(points.row(i)) {
            *s += x.as_f64();
        }
    }
    let mut centroids = Array2::zeros((k, d));
    let mut taken = vec![false; points.nrows()];
    for j in 0..k {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for (c, &s) in centroids.row_mut(j).iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = T::of(s * inv);
            }
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..points.nrows() {
            if taken[i] || forced[i].is_some() {
                continue;
            }
            if best.is_none_or(|(_, bd)| dists[i] > bd) {
                best = Some((i, dists[i]));
            }
        }
        if let Some((i, _)) = best {
            taken[i] = true;
            centroids.row_mut(j).assign(&points.row(i));
        }
    }
    centroids
}

fn lloyd<T: Scalar>(
    points: ArrayView2<'_, T>,
    mut centroids: Array2<T>,
    forced: &[Option<usize>],
    params: &KMeansParams,
    bound_classes: Vec<usize>,
) -> ClusterModel<T> {
    let k = centroids.nrows();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iter {
        let (assignment, dists) = assign_step(points, &centroids, forced);
        trace.push(dists.iter().sum());
        let next = update_step(points, &assignment, &dists, forced, k);
        let shift = centroids
            .outer_iter()
            .zip(next.outer_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        if shift < params.tol || shift == 0.0 {
            break;
        }
    }
    let (assignment, dists) = assign_step(points, &centroids, forced);
    let inertia: f64 = dists.iter().sum();
    trace.push(inertia);
    ClusterModel {
        k,
        centroids,
        assignment,
        inertia,
        iterations,
        inertia_trace: trace,
        bound_classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn two_pairs_example() {
        let pts = array![[0.0f64, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let m = kmeans(pts.view(), &KMeansParams::new(2, 3)).unwrap();
        assert!((m.inertia - 1.0).abs() < 1e-12);
        let mut cs: Vec<(f64, f64)> = m.centroids.outer_iter().map(|r| (r[0], r[1])).collect();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cs, vec![(0.0, 0.5), (10.0, 0.5)]);
    }

    #[test]
    fn single_cluster_is_column_mean() {
        let pts = random_points(30, 4, 1);
        let m = kmeans(pts.view(), &KMeansParams::new(1, 9)).unwrap();
        let mean = pts.mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in m.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn inertia_trace_non_increasing() {
        let pts = random_points(200, 3, 5);
        let m = kmeans(pts.view(), &KMeansParams::new(5, 11)).unwrap();
        for w in m.inertia_trace.windows(2) {
            assert!(w[1] <= w[0], "{:?}", m.inertia_trace);
        }
    }

    #[test]
    fn init_k_equals_n_uses_every_row() {
        let pts = random_points(7, 2, 2);
        let c = kmeans_pp_init(pts.view(), 7, 4).unwrap();
        let mut rows: Vec<Vec<u64>> = c.outer_iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
        let mut expected: Vec<Vec<u64>> = pts.outer_iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
        rows.sort();
        expected.sort();
        assert_eq!(rows, expected);
    }

    #[test]
    fn init_single_center_is_a_row() {
        let pts = random_points(9, 2, 8);
        let c = kmeans_pp_init(pts.view(), 1, 0).unwrap();
        assert!(pts.outer_iter().any(|r| r == c.row(0)));
    }

    #[test]
    fn init_is_deterministic() {
        let pts = random_points(50, 3, 3);
        assert_eq!(
            kmeans_pp_init(pts.view(), 4, 17).unwrap(),
            kmeans_pp_init(pts.view(), 4, 17).unwrap()
        );
    }

    #[test]
    fn init_rejects_duplicate_rows() {
        let pts = Array2::<f32>::ones((5, 3));
        let err = kmeans_pp_init(pts.view(), 2, 0).unwrap_err();
        assert!(err.to_string().contains("insufficient distinct points"));
    }

    #[test]
    fn k_above_n_errors() {
        let pts = random_points(3, 2, 0);
        assert!(kmeans(pts.view(), &KMeansParams::new(4, 0)).is_err());
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // Centroid 2 starts far from every point and would stay empty.
        let pts = array![[0.0f64, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0], [9.0, 0.0]];
        let init = array![[0.0, 0.0], [5.0, 0.0], [100.0, 100.0]];
        let forced = vec![None; 5];
        let m = lloyd(pts.view(), init, &forced, &KMeansParams::new(3, 0), Vec::new());
        assert!(m.sizes().iter().all(|&s| s > 0), "{:?}", m.sizes());
        assert!(m.centroids.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn fully_labeled_reproduces_labels() {
        let pts = random_points(12, 3, 21);
        let labels: Vec<Option<usize>> = (0..12).map(|i| Some(i % 3)).collect();
        let view = DatasetView::with_generated_ids(labels, vec![true; 12]).unwrap();
        let m = semi_supervised_kmeans(pts.view(), &view, &KMeansParams::new(3, 0)).unwrap();
        let expected: Vec<usize> = (0..12).map(|i| i % 3).collect();
        assert_eq!(m.assignment, expected);
        assert_eq!(m.bound_classes, vec![0, 1, 2]);
    }

    #[test]
    fn labeled_outlier_stays_in_class_cluster() {
        // class 0 near the origin, class 1 near (10, 0); the last labeled 0-row
        // sits at (10, 0.2), and an identical unlabeled row follows it.
        let pts = array![
            [0.0f64, 0.0],
            [0.0, 1.0],
            [10.0, 0.0],
            [10.0, 1.0],
            [10.0, 0.2],
            [10.0, 0.2]
        ];
        let labels = vec![Some(0), Some(0), Some(1), Some(1), Some(0), None];
        let labeled = vec![true, true, true, true, true, false];
        let view = DatasetView::with_generated_ids(labels, labeled).unwrap();
        let m = semi_supervised_kmeans(pts.view(), &view, &KMeansParams::new(2, 0)).unwrap();
        assert_eq!(m.assignment[4], 0);
        assert_eq!(m.assignment[5], 1);
    }

    #[test]
    fn k_below_seen_count_errors() {
        let pts = random_points(4, 2, 0);
        let view = DatasetView::with_generated_ids(
            vec![Some(0), Some(1), Some(2), None],
            vec![true, true, true, false],
        )
        .unwrap();
        let err = semi_supervised_kmeans(pts.view(), &view, &KMeansParams::new(2, 0)).unwrap_err();
        assert!(err.to_string().contains("k below seen-class count"));
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let centroids = array![[1.0f64, 0.0], [-1.0, 0.0]];
        let (j, _) = nearest_centroid(array![0.0, 0.0].view(), &centroids);
        assert_eq!(j, 0);
    }

    #[test]
    fn restarts_never_worse_than_single_run() {
        let pts = random_points(120, 3, 4);
        let labels: Vec<Option<usize>> = (0..120).map(|i| Some(i % 6)).collect();
        let labeled: Vec<bool> = (0..120).map(|i| i < 20 && i % 6 < 2).collect();
        let view = DatasetView::with_generated_ids(labels, labeled).unwrap().without_truth();
        let params = KMeansParams::new(6, 11);
        let single = semi_supervised_kmeans(pts.view(), &view, &params).unwrap();
        let one = semi_supervised_kmeans_restarts(pts.view(), &view, &params, 1).unwrap();
        assert_eq!(single, one);
        let best = semi_supervised_kmeans_restarts(pts.view(), &view, &params, 8).unwrap();
        assert!(best.inertia <= single.inertia);
        assert!(semi_supervised_kmeans_restarts(pts.view(), &view, &params, 0).is_err());
    }
}
