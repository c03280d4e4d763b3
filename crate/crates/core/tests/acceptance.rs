//! Acceptance checks. Each test prints one `PASS`/`FAIL` line and asserts it.
//! Run with `cargo test --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use xcon::clustering::{kmeans, semi_supervised_kmeans, KMeansParams};
use xcon::contrastive::{supcon_on_set, unsup_contrastive_loss, Batch};
use xcon::embedding_store::{save_features, DatasetView};
use xcon::estimation::{estimate_num_classes, EstimationParams};
use xcon::evaluation::{clustering_accuracy, hungarian};
use xcon::pipeline::{execute, run_pipeline, RunConfig};
use xcon::synthetic::{bench_train_config, generate, GeneratorSpec};

fn verdict(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn brute_force(cost: &[i64], n: usize) -> i64 {
    (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r * n + c]).sum())
        .min()
        .expect("n >= 1")
}

#[test]
fn hungarian_matches_brute_force() {
    let t = Instant::now();
    let mut rng = common::rng(11);
    let mut mismatches = 0;
    for n in 2..=6 {
        for _ in 0..100 {
            let cost: Vec<i64> = (0..n * n).map(|_| rng.random_range(-50..100)).collect();
            if hungarian(&cost, n, n).unwrap().total != brute_force(&cost, n) {
                mismatches += 1;
            }
        }
    }
    let el = t.elapsed();
    verdict(
        "hungarian_oracle",
        mismatches == 0 && el < Duration::from_secs(10),
        format!("{mismatches} mismatches over 500 matrices in {el:.2?}"),
    );
}

fn unlabeled_masks(n: usize, old: &[bool]) -> xcon::SubsetMasks {
    xcon::SubsetMasks {
        all: vec![true; n],
        old: old.to_vec(),
        new: old.iter().map(|o| !o).collect(),
    }
}

#[test]
fn accuracy_correctness() {
    let mut rng = common::rng(12);
    let mut problems = Vec::new();

    let truth: Vec<usize> = (0..60).map(|i| i % 6).collect();
    let some: Vec<Option<usize>> = truth.iter().copied().map(Some).collect();
    let old: Vec<bool> = truth.iter().map(|&c| c < 3).collect();
    let masks = unlabeled_masks(truth.len(), &old);
    if clustering_accuracy(&truth, &some, &masks).unwrap().acc_all != 1.0 {
        problems.push("perfect prediction".to_string());
    }

    let pred: Vec<usize> = (0..60).map(|_| rng.random_range(0..6)).collect();
    let base = clustering_accuracy(&pred, &some, &masks).unwrap().acc_all;
    for _ in 0..50 {
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        if clustering_accuracy(&relabeled, &some, &masks).unwrap().acc_all != base {
            problems.push("relabeling changed acc".into());
            break;
        }
    }

    let worked = clustering_accuracy(
        &[0, 0, 1, 2],
        &[Some(0), Some(1), Some(1), Some(2)],
        &unlabeled_masks(4, &[true; 4]),
    )
    .unwrap()
    .acc_all;
    if worked != 0.75 {
        problems.push(format!("worked example gave {worked}"));
    }

    for _ in 0..20 {
        let n = rng.random_range(5..80);
        let classes = rng.random_range(2..7);
        let truth: Vec<Option<usize>> = (0..n).map(|_| Some(rng.random_range(0..classes))).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes + 1)).collect();
        let old: Vec<bool> = truth.iter().map(|t| t.unwrap() < classes / 2).collect();
        let r = clustering_accuracy(&pred, &truth, &unlabeled_masks(n, &old)).unwrap();
        if r.matched_all != r.matched_old + r.matched_new || r.n_all != r.n_old + r.n_new {
            problems.push("decomposition identity".into());
            break;
        }
        let lhs = r.acc_all * r.n_all as f64;
        let rhs = r.acc_old * r.n_old as f64 + r.acc_new * r.n_new as f64;
        if (lhs - rhs).abs() > 1e-9 {
            problems.push(format!("weighted accuracies {lhs} vs {rhs}"));
            break;
        }
    }
    verdict(
        "acc_correctness",
        problems.is_empty(),
        if problems.is_empty() { "all four checks hold".into() } else { problems.join("; ") },
    );
}

#[test]
fn kmeans_properties() {
    let mut problems = Vec::new();
    for run in 0..50u64 {
        let mut rng = common::rng(1000 + run);
        let pts = common::gaussian(120, 4, &mut rng).mapv(|v| v as f32);
        let plain = kmeans(pts.view(), &KMeansParams::new(5, run)).unwrap();
        if plain.inertia_trace.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
            problems.push(format!("run {run}: plain trace increases"));
        }
        let labels: Vec<Option<usize>> = (0..120).map(|i| Some(i % 5)).collect();
        let labeled: Vec<bool> = (0..120).map(|i| i % 5 < 3 && i < 60).collect();
        let view = DatasetView::with_generated_ids(labels, labeled.clone()).unwrap().without_truth();
        let ss = semi_supervised_kmeans(pts.view(), &view, &KMeansParams::new(5, run)).unwrap();
        if ss.inertia_trace.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12)) {
            problems.push(format!("run {run}: semi-supervised trace increases"));
        }
        if (0..120).any(|i| labeled[i] && ss.assignment[i] != i % 5) {
            problems.push(format!("run {run}: labeled row left its class cluster"));
        }
    }
    let mut rng = common::rng(77);
    let pts = common::gaussian(40, 3, &mut rng).mapv(|v| v as f32);
    let classes: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let view = DatasetView::with_generated_ids(classes.iter().copied().map(Some).collect(), vec![true; 40])
        .unwrap()
        .without_truth();
    let full = semi_supervised_kmeans(pts.view(), &view, &KMeansParams::new(4, 3)).unwrap();
    if full.assignment != classes {
        problems.push("fully labeled case differs from labels".into());
    }
    verdict(
        "kmeans_properties",
        problems.is_empty(),
        if problems.is_empty() { "50 runs monotone and bound, fully labeled exact".into() } else { problems.join("; ") },
    );
}

#[test]
fn gradient_audit() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        worst = worst
            .max(common::audit::unsup(500 + seed))
            .max(common::audit::sup(500 + seed))
            .max(common::audit::head(500 + seed))
            .max(common::audit::total(500 + seed));
    }
    let el = t.elapsed();
    verdict(
        "gradient_audit",
        worst < 1e-4 && el < Duration::from_secs(60),
        format!("max relative error {worst:.2e} over 20 configurations in {el:.2?}"),
    );
}

#[test]
fn loss_unit_values() {
    use ndarray::array;
    let same = array![[1.0f64, 0.0], [1.0, 0.0]];
    let ln3 = unsup_contrastive_loss(&Batch::unlabeled(same.clone(), same).unwrap(), 1.0).unwrap().loss;
    let ortho = array![[1.0f64, 0.0], [0.0, 1.0]];
    let two_pair = unsup_contrastive_loss(&Batch::unlabeled(ortho.clone(), ortho).unwrap(), 1.0).unwrap().loss;
    let e = std::f64::consts::E;
    let oracle = ((e + 2.0) / e).ln();
    let lone = supcon_on_set(array![[0.6f64, 0.8], [0.6, 0.8]].view(), &[2, 2], 1.0).unwrap().0;
    let ok = (ln3 - 3f64.ln()).abs() < 1e-6
        && (two_pair - oracle).abs() < 1e-4
        && (two_pair - 0.5514).abs() < 1e-4
        && lone.abs() < 1e-9;
    verdict(
        "loss_unit_values",
        ok,
        format!("identical {ln3:.8} (ln3 {:.8}), orthogonal {two_pair:.6}, lone positive {lone:e}", 3f64.ln()),
    );
}

/// `acc_all` of the full pipeline on the default synthetic benchmark.
fn bench_acc(seed: u64, alpha: f64, lambda: f64) -> f64 {
    let ds = generate(&GeneratorSpec {
        seed,
        ..GeneratorSpec::default()
    })
    .unwrap();
    let mut cfg = RunConfig {
        train: bench_train_config(),
        ..RunConfig::default()
    }
    .with_seed(seed);
    cfg.train.alpha = alpha;
    cfg.train.lambda = lambda;
    execute(&ds.features, &ds.view, &cfg).unwrap().report.unwrap().acc_all
}

fn mean_over_seeds(alpha: f64, lambda: f64) -> (f64, Vec<f64>) {
    let accs: Vec<f64> = (0..5).map(|s| bench_acc(s, alpha, lambda)).collect();
    (accs.iter().sum::<f64>() / accs.len() as f64, accs)
}

fn fmt_accs(a: &[f64]) -> String {
    a.iter().map(|x| format!("{:.3}", x)).join(",")
}

#[test]
fn fine_loss_beats_coarse_only() {
    let t = Instant::now();
    let (full, full_runs) = mean_over_seeds(0.1, 0.35);
    let (coarse, coarse_runs) = mean_over_seeds(0.0, 0.35);
    let el = t.elapsed();
    let gain = 100.0 * (full - coarse);
    verdict(
        "fine_plus_coarse_vs_coarse_only",
        gain >= 3.0 && el < Duration::from_secs(300),
        format!(
            "alpha=0.1 {full:.4} [{}] vs alpha=0 {coarse:.4} [{}], gain {gain:+.1} points (need +3), {el:.1?}",
            fmt_accs(&full_runs),
            fmt_accs(&coarse_runs)
        ),
    );
}

#[test]
fn supervision_weight_matters() {
    let (mixed, mixed_runs) = mean_over_seeds(0.1, 0.35);
    let (unsup, unsup_runs) = mean_over_seeds(0.1, 0.0);
    let gain = 100.0 * (mixed - unsup);
    verdict(
        "lambda_0.35_vs_0",
        gain >= 5.0,
        format!(
            "lambda=0.35 {mixed:.4} [{}] vs lambda=0 {unsup:.4} [{}], gain {gain:+.1} points (need +5)",
            fmt_accs(&mixed_runs),
            fmt_accs(&unsup_runs)
        ),
    );
}

#[test]
fn class_count_estimation() {
    let t = Instant::now();
    let mut hats = Vec::new();
    for seed in 0..5 {
        let ds = generate(&GeneratorSpec {
            n_backgrounds: 1,
            n_fine_classes: 5,
            samples_per_class: 40,
            d: 16,
            class_scale: 0.8,
            noise_sigma: 0.05,
            trait_rank: 0,
            seen_fraction: 0.6,
            seed,
            ..GeneratorSpec::default()
        })
        .unwrap();
        let view = ds.view.without_truth();
        assert_eq!(view.seen_classes().len(), 3);
        let r = estimate_num_classes(&ds.features, &view, &EstimationParams::new(3, Some(10), seed)).unwrap();
        hats.push(r.k_hat);
    }
    let el = t.elapsed();
    let close = hats.iter().filter(|&&k| k.abs_diff(5) <= 1).count();
    verdict(
        "class_count_estimation",
        close >= 4 && el < Duration::from_secs(120),
        format!("k_hat {hats:?}, {close}/5 within 1 of 5, {el:.2?}"),
    );
}

#[test]
fn end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&GeneratorSpec::default()).unwrap();
    let prefix = dir.path().join("synth");
    save_features(&prefix, &ds.features, &ds.view).unwrap();
    let mut cfg = RunConfig {
        features: Some(prefix),
        out: dir.path().join("first"),
        train: bench_train_config(),
        ..RunConfig::default()
    }
    .with_seed(5);
    cfg.train.epochs = 20;
    let first = run_pipeline(&cfg).unwrap().report.unwrap();

    let echoed = std::fs::read_to_string(dir.path().join("first/config.txt")).unwrap();
    let mut again = RunConfig::parse(&echoed).unwrap();
    again.out = dir.path().join("second");
    let second = run_pipeline(&again).unwrap().report.unwrap();
    let same_bits = first.acc_all.to_bits() == second.acc_all.to_bits()
        && first.acc_old.to_bits() == second.acc_old.to_bits()
        && first.acc_new.to_bits() == second.acc_new.to_bits();
    let preds_a = std::fs::read(dir.path().join("first/predictions.txt")).unwrap();
    let preds_b = std::fs::read(dir.path().join("second/predictions.txt")).unwrap();
    verdict(
        "end_to_end_determinism",
        first == second && same_bits && preds_a == preds_b,
        format!("acc_all {} on both runs, reports identical: {}", first.acc_all, first == second),
    );
}
