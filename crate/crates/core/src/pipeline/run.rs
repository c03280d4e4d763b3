use std::fs;
use std::path::Path;

use log::info;

use super::config::RunConfig;
use super::pca::pca_2d;
use crate::clustering::{semi_supervised_kmeans_restarts, ClusterModel, KMeansParams};
use crate::contrastive::checkpoint::write_checkpoint;
use crate::contrastive::{train, TrainTrace, TrainableModel};
use crate::embedding_store::{build_subset_masks, load_feature_pair, write_index_file, DatasetView, FeatureMatrix};
use crate::error::{Result, StageContext, XconError};
use crate::estimation::{estimate_num_classes, EstimationParams, KSearchResult};
use crate::evaluation::EvalReport;
use crate::partition::{partition_dataset, partition_report, PartitionResult};

pub const CONFIG_FILE: &str = "config.txt";
pub const PARTITION_FILE: &str = "partition.txt";
pub const PARTITION_REPORT_FILE: &str = "partition_report.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const PREDICTIONS_FILE: &str = "predictions.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const PCA_FILE: &str = "embedding_pca.csv";
pub const K_SCORES_FILE: &str = "k_scores.csv";
pub const ERROR_FILE: &str = "error.txt";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub partition: PartitionResult,
    pub model: TrainableModel<f32>,
    pub trace: TrainTrace,
    /// L2-normalized adapter output, the space clustered for assignment.
    pub embeddings: FeatureMatrix<f32>,
    pub k_search: Option<KSearchResult>,
    pub clusters: ClusterModel<f32>,
    /// `None` when some unlabeled row has no ground-truth label.
    pub report: Option<EvalReport>,
}

impl RunOutcome {
    pub fn k(&self) -> usize {
        self.clusters.k
    }
}

/// Reads and normalizes the configured feature pair.
pub fn load_inputs(config: &RunConfig) -> Result<(FeatureMatrix<f32>, DatasetView)> {
    let features = config
        .features
        .as_ref()
        .ok_or_else(|| XconError::Config("no feature file configured".into()))?;
    let meta = config.meta_path().expect("features set");
    let (m, view) = load_feature_pair(crate::embedding_store::bin_path(features), meta)?;
    Ok((m.l2_normalize()?, view))
}

/// Adapter output with rows renormalized.
pub fn assignment_space(model: &TrainableModel<f32>, features: &FeatureMatrix<f32>) -> Result<FeatureMatrix<f32>> {
    FeatureMatrix::from_rows(model.adapt(features.primary())?)?.l2_normalize()
}

pub fn assign_classes(
    embeddings: &FeatureMatrix<f32>,
    view: &DatasetView,
    k: usize,
    config: &RunConfig,
) -> Result<ClusterModel<f32>> {
    semi_supervised_kmeans_restarts(
        embeddings.primary(),
        &view.without_truth(),
        &KMeansParams {
            k,
            seed: config.stage_seeds.assign,
            max_iter: config.kmeans_max_iter,
            tol: config.kmeans_tol,
        },
        config.kmeans_restarts,
    )
}

/// Scores predictions on the unlabeled rows, or `None` without ground truth.
pub fn evaluate(pred: &[usize], view: &DatasetView) -> Result<Option<EvalReport>> {
    if view.unlabeled_indices().iter().any(|&i| view.labels()[i].is_none()) {
        return Ok(None);
    }
    let masks = build_subset_masks(view)?;
    crate::evaluation::clustering_accuracy(pred, view.labels(), &masks).map(Some)
}

/// Number of clusters used for assignment when not estimated.
fn target_k(view: &DatasetView, config: &RunConfig) -> Result<usize> {
    if let Some(k) = config.num_classes {
        return Ok(k);
    }
    if view.labels().iter().any(Option::is_none) {
        return Err(XconError::Config(
            "metadata lacks ground truth; set num_classes or enable estimate_k".into(),
        ));
    }
    Ok(view.all_classes().len())
}

/// Runs every stage in memory. `view` may carry held-out labels on
/// unlabeled rows; they are used only for evaluation.
pub fn execute(features: &FeatureMatrix<f32>, view: &DatasetView, config: &RunConfig) -> Result<RunOutcome> {
    config.validate().stage("config")?;
    let features = if features.is_normalized() {
        features.clone()
    } else {
        features.clone().l2_normalize().stage("load")?
    };
    let train_view = view.without_truth();

    info!("partitioning {} rows into K={}", features.n(), config.train.partitions);
    let partition = partition_dataset(&features, config.train.partitions, config.stage_seeds.partition).stage("partition")?;

    info!("training for {} epochs", config.train.epochs);
    let (model, trace) = train(&features, &train_view, &partition, &config.train).stage("train")?;

    let embeddings = assignment_space(&model, &features).stage("embed")?;

    let (k, k_search) = if config.estimate_k {
        let seen = train_view.seen_classes().len();
        let params = EstimationParams {
            probe_fraction: config.probe_fraction,
            restarts: config.estimate_restarts,
            max_iter: config.kmeans_max_iter,
            tol: config.kmeans_tol,
            ..EstimationParams::new(config.k_min.unwrap_or(seen), config.k_max, config.stage_seeds.estimate)
        };
        let search = estimate_num_classes(&embeddings, &train_view, &params).stage("estimate")?;
        info!("estimated k = {}", search.k_hat);
        (search.k_hat, Some(search))
    } else {
        (target_k(view, config).stage("assign")?, None)
    };

    let clusters = assign_classes(&embeddings, &train_view, k, config).stage("assign")?;
    let report = evaluate(&clusters.assignment, view).stage("evaluate")?;
    Ok(RunOutcome {
        partition,
        model,
        trace,
        embeddings,
        k_search,
        clusters,
        report,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| XconError::io(path, e))
}

pub fn pca_csv(outcome: &RunOutcome, view: &DatasetView) -> Result<String> {
    use std::fmt::Write as _;
    let proj = pca_2d(outcome.embeddings.primary())?;
    let mut out = String::from("id,pc1,pc2,cluster,label,labeled\n");
    for (i, id) in view.ids().iter().enumerate() {
        let label = view.labels()[i].map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{id},{},{},{},{label},{}",
            proj[[i, 0]],
            proj[[i, 1]],
            outcome.clusters.assignment[i],
            view.is_labeled(i) as u8
        )
        .expect("write to string");
    }
    Ok(out)
}

pub fn write_artifacts(outcome: &RunOutcome, view: &DatasetView, config: &RunConfig) -> Result<()> {
    let out = &config.out;
    let echo = config.to_echo();
    write_checkpoint(out.join(CHECKPOINT_FILE), &outcome.model, &echo)?;
    write_index_file(out.join(PARTITION_FILE), view.ids(), &outcome.partition.membership)?;
    write(&out.join(PARTITION_REPORT_FILE), &partition_report(&outcome.partition, view).to_string())?;
    write(&out.join(TRACE_FILE), &outcome.trace.to_csv())?;
    write_index_file(out.join(PREDICTIONS_FILE), view.ids(), &outcome.clusters.assignment)?;
    write(&out.join(PCA_FILE), &pca_csv(outcome, view)?)?;
    if let Some(search) = &outcome.k_search {
        write(&out.join(K_SCORES_FILE), &search.to_csv())?;
    }
    let k_line = format!("k={}\nk_estimated={}\n", outcome.k(), outcome.k_search.is_some());
    match &outcome.report {
        Some(report) => {
            write(&out.join(REPORT_FILE), &format!("{k_line}{report}"))?;
            write(
                &out.join(REPORT_CSV_FILE),
                &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(&config.dataset, config.seed)),
            )?;
        }
        None => write(&out.join(REPORT_FILE), &format!("{k_line}evaluation=skipped (no ground truth)\n"))?,
    }
    Ok(())
}

/// Loads inputs, runs every stage and writes the artifacts into
/// `config.out`. On failure `error.txt` names the failing stage.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome> {
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| XconError::io(out, e))?;
    let error_path = out.join(ERROR_FILE);
    if error_path.exists() {
        fs::remove_file(&error_path).map_err(|e| XconError::io(&error_path, e))?;
    }
    let result = (|| -> Result<RunOutcome> {
        write(&out.join(CONFIG_FILE), &config.to_echo()).stage("config")?;
        let (features, view) = load_inputs(config).stage("load")?;
        let outcome = execute(&features, &view, config)?;
        write_artifacts(&outcome, &view, config).stage("write")?;
        Ok(outcome)
    })();
    if let Err(e) = &result {
        let stage = e.stage().unwrap_or("pipeline");
        let _ = fs::write(&error_path, format!("stage={stage}\nerror={e}\n"));
    }
    result
}
