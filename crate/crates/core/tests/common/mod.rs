#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xcon::contrastive::{FeatureBatch, ModelDims, TrainableModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    xcon::seed::rng_from(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = gaussian(rows, cols, rng);
    for mut r in a.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    a
}

/// Labels in `0..classes`, guaranteeing at least one repeated label.
pub fn labels_with_pair(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    if n >= 2 {
        l[1] = l[0];
    }
    l
}

/// A model whose adapter is perturbed away from the identity.
pub fn random_model(dims: ModelDims, rng: &mut ChaCha8Rng) -> TrainableModel<f64> {
    let mut m = TrainableModel::<f64>::new(dims, rng.random());
    m.adapter.weight += &(gaussian(dims.input, dims.input, rng) * 0.2);
    m.adapter.bias += &(gaussian(1, dims.input, rng).row(0).to_owned() * 0.1);
    m
}

/// Two-view batch of `b` rows; roughly half labeled, with at least one
/// labeled pair sharing a class.
pub fn random_feature_batch(b: usize, d: usize, classes: usize, rng: &mut ChaCha8Rng) -> FeatureBatch<f64> {
    let base = unit_rows(b, d, rng);
    let view_a = &base + &(gaussian(b, d, rng) * 0.05);
    let view_b = &base + &(gaussian(b, d, rng) * 0.05);
    let mut labeled: Vec<bool> = (0..b).map(|_| rng.random_bool(0.5)).collect();
    labeled[0] = true;
    labeled[1] = true;
    let classes = labels_with_pair(b, classes, rng);
    let labels = classes
        .iter()
        .zip(&labeled)
        .map(|(&c, &l)| l.then_some(c))
        .collect();
    FeatureBatch {
        rows: (0..b).collect(),
        view_a,
        view_b,
        labels,
        labeled,
    }
}

/// Scalar parameter access in `linears()` order: weights then bias.
pub fn param_len(m: &TrainableModel<f64>) -> usize {
    m.param_count()
}

pub fn param_get(m: &TrainableModel<f64>, mut idx: usize) -> f64 {
    for l in m.linears() {
        let w = l.weight.len();
        if idx < w {
            return l.weight.as_slice().unwrap()[idx];
        }
        idx -= w;
        let b = l.bias.len();
        if idx < b {
            return l.bias[idx];
        }
        idx -= b;
    }
    panic!("parameter index out of range")
}

pub fn param_set(m: &mut TrainableModel<f64>, mut idx: usize, v: f64) {
    for l in m.linears_mut() {
        let w = l.weight.len();
        if idx < w {
            l.weight.as_slice_mut().unwrap()[idx] = v;
            return;
        }
        idx -= w;
        let b = l.bias.len();
        if idx < b {
            l.bias[idx] = v;
            return;
        }
        idx -= b;
    }
    panic!("parameter index out of range")
}

pub const FD_EPS: f64 = 1e-4;
/// Magnitude below which relative error is measured against this floor.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_EPS) - f(x - FD_EPS)) / (2.0 * FD_EPS)
}

pub mod audit {
    use super::*;
    use xcon::contrastive::{
        fine_loss, coarse_objective, supcon_on_set, total_loss, unsup_contrastive_loss, Batch, LossWeights,
    };

    fn pick_tau(rng: &mut ChaCha8Rng) -> f64 {
        [0.07, 0.2, 0.5, 1.0][rng.random_range(0..4)]
    }

    /// Max relative error of `d loss / d E` for the unsupervised loss.
    pub fn unsup(seed: u64) -> f64 {
        let mut r = rng(seed);
        let b = r.random_range(2..6);
        let p = r.random_range(2..6);
        let tau = pick_tau(&mut r);
        let a = unit_rows(b, p, &mut r);
        let q = unit_rows(b, p, &mut r);
        let loss = |a: &Array2<f64>, q: &Array2<f64>| {
            unsup_contrastive_loss(&Batch::unlabeled(a.clone(), q.clone()).unwrap(), tau)
                .unwrap()
                .loss
        };
        let g = unsup_contrastive_loss(&Batch::unlabeled(a.clone(), q.clone()).unwrap(), tau).unwrap();
        let mut worst: f64 = 0.0;
        for view in 0..2 {
            for i in 0..b {
                for j in 0..p {
                    let analytic = if view == 0 { g.d_anchors[[i, j]] } else { g.d_positives[[i, j]] };
                    let x0 = if view == 0 { a[[i, j]] } else { q[[i, j]] };
                    let numeric = central_diff(
                        |x| {
                            let (mut a2, mut q2) = (a.clone(), q.clone());
                            if view == 0 {
                                a2[[i, j]] = x;
                            } else {
                                q2[[i, j]] = x;
                            }
                            loss(&a2, &q2)
                        },
                        x0,
                    );
                    worst = worst.max(rel_err(analytic, numeric));
                }
            }
        }
        worst
    }

    /// Max relative error of `d loss / d E` for the supervised loss on a set.
    pub fn sup(seed: u64) -> f64 {
        let mut r = rng(seed);
        let m = r.random_range(3..9);
        let p = r.random_range(2..6);
        let tau = pick_tau(&mut r);
        let e = unit_rows(m, p, &mut r);
        let labels = labels_with_pair(m, 3, &mut r);
        let (_, g) = supcon_on_set(e.view(), &labels, tau).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..p {
                let numeric = central_diff(
                    |x| {
                        let mut e2 = e.clone();
                        e2[[i, j]] = x;
                        supcon_on_set(e2.view(), &labels, tau).unwrap().0
                    },
                    e[[i, j]],
                );
                worst = worst.max(rel_err(g[[i, j]], numeric));
            }
        }
        worst
    }

    fn dims(r: &mut ChaCha8Rng) -> ModelDims {
        ModelDims {
            input: r.random_range(3..7),
            hidden: r.random_range(3..9),
            proj: r.random_range(2..6),
            experts: r.random_range(1..3),
        }
    }

    /// Max relative error of parameter gradients through one head, for the
    /// scalar `Σ C ⊙ head(V)` with random `C`.
    pub fn head(seed: u64) -> f64 {
        let mut r = rng(seed);
        let dims = dims(&mut r);
        let model = random_model(dims, &mut r);
        let head = r.random_range(0..=dims.experts);
        let v = unit_rows(r.random_range(2..6), dims.input, &mut r);
        let (z, cache) = model.forward_head(head, v.view()).unwrap();
        let c = gaussian(z.nrows(), z.ncols(), &mut r);
        let mut grads = model.zeros_like();
        model.backward_head(&cache, &c, &mut grads);
        let objective = |m: &TrainableModel<f64>| (&m.forward_head(head, v.view()).unwrap().0 * &c).sum();
        compare_params(&model, &grads, objective)
    }

    /// Max relative error of parameter gradients of the total objective.
    pub fn total(seed: u64) -> f64 {
        let mut r = rng(seed);
        let dims = dims(&mut r);
        let model = random_model(dims, &mut r);
        let w = LossWeights {
            tau: pick_tau(&mut r),
            lambda: r.random_range(0.0..1.0),
            alpha: r.random_range(0.05..0.5),
            use_coarse: true,
            use_fine: true,
        };
        let coarse = random_feature_batch(r.random_range(4..8), dims.input, 3, &mut r);
        let fine: Vec<_> = (0..dims.experts)
            .map(|_| random_feature_batch(r.random_range(3..6), dims.input, 3, &mut r))
            .collect();
        let (_, grads) = total_loss(&model, &coarse, &fine, &w).unwrap();
        let objective = |m: &TrainableModel<f64>| {
            let c = coarse_objective(m, &coarse, w.tau, w.lambda, None).unwrap();
            let f = fine_loss(m, &fine, w.tau, w.lambda, None).unwrap();
            c + w.alpha * f
        };
        compare_params(&model, &grads, objective)
    }

    fn compare_params(
        model: &TrainableModel<f64>,
        grads: &TrainableModel<f64>,
        objective: impl Fn(&TrainableModel<f64>) -> f64,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        let mut probe = model.clone();
        for idx in 0..param_len(model) {
            let x0 = param_get(model, idx);
            let numeric = central_diff(
                |x| {
                    param_set(&mut probe, idx, x);
                    objective(&probe)
                },
                x0,
            );
            param_set(&mut probe, idx, x0);
            worst = worst.max(rel_err(param_get(grads, idx), numeric));
        }
        worst
    }
}
