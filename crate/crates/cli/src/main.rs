use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use xcon::contrastive::checkpoint::{read_checkpoint, write_checkpoint};
use xcon::embedding_store::{read_index_file, save_features, write_index_file, DatasetView};
use xcon::estimation::{estimate_num_classes, EstimationParams};
use xcon::evaluation::EvalReport;
use xcon::partition::{partition_dataset, partition_report, PartitionResult};
use xcon::pipeline::{self, run, RunConfig, SweepAxis};
use xcon::synthetic::{generate, GeneratorSpec};

#[derive(Parser)]
#[command(name = "xcon", version, about = "Generalized category discovery on precomputed embeddings")]
struct Cli {
    /// Feature file prefix: reads <prefix>.bin and <prefix>.meta.
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    /// Metadata file overriding <prefix>.meta.
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    /// Output directory (or file prefix for gen-synth).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for clustering and estimation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic feature/metadata pair plus a factors file.
    GenSynth(GenSynthArgs),
    /// Split the dataset into K expert sub-datasets.
    Partition(TrainArgs),
    /// Train the adapter and projection heads.
    Train(TrainCmd),
    /// Assign classes with semi-supervised k-means in the adapter space.
    Assign(AssignCmd),
    /// Score predictions against ground truth.
    Eval(EvalCmd),
    /// Estimate the number of classes.
    EstimateK(EstimateCmd),
    /// Run the full pipeline.
    Run(RunCmd),
    /// Run the pipeline over a grid of values and seeds.
    Sweep(SweepCmd),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 2)]
    backgrounds: usize,
    #[arg(long, default_value_t = 4)]
    classes_per_background: usize,
    #[arg(long, default_value_t = 50)]
    samples_per_class: usize,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    background_scale: Option<f64>,
    #[arg(long)]
    class_scale: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    trait_rank: Option<usize>,
    #[arg(long)]
    seen_fraction: Option<f64>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k_partitions: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    coarse_batch: Option<usize>,
    #[arg(long)]
    fine_batch: Option<usize>,
    /// stored | jitter | jitter:<sigma>:<drop_prob>
    #[arg(long)]
    view_mode: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    proj: Option<usize>,
}

#[derive(Args, Default)]
struct AssignArgs {
    /// Cluster count; defaults to the number of classes in the metadata.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Estimate the cluster count from the labeled rows.
    #[arg(long)]
    estimate_k: bool,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Assignment k-means runs; the lowest-inertia run is kept.
    #[arg(long)]
    kmeans_restarts: Option<usize>,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    train: TrainArgs,
    /// Partition file from `xcon partition`; computed when absent.
    #[arg(long)]
    partition: Option<PathBuf>,
}

#[derive(Args)]
struct AssignCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    assign: AssignArgs,
}

#[derive(Args)]
struct EvalCmd {
    /// Predictions file (id<TAB>cluster).
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value = "dataset")]
    dataset: String,
}

#[derive(Args)]
struct EstimateCmd {
    /// Estimate in the adapter space of this checkpoint instead of the raw features.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    assign: AssignArgs,
}

#[derive(Args)]
struct SweepCmd {
    /// alpha | lambda | K
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    assign: AssignArgs,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        push("tau", self.tau.map(|x| x.to_string()));
        push("lambda", self.lambda.map(|x| x.to_string()));
        push("alpha", self.alpha.map(|x| x.to_string()));
        push("k_partitions", self.k_partitions.map(|x| x.to_string()));
        push("epochs", self.epochs.map(|x| x.to_string()));
        push("base_lr", self.base_lr.map(|x| x.to_string()));
        push("coarse_batch", self.coarse_batch.map(|x| x.to_string()));
        push("fine_batch", self.fine_batch.map(|x| x.to_string()));
        push("view_mode", self.view_mode.clone());
        push("hidden", self.hidden.map(|x| x.to_string()));
        push("proj", self.proj.map(|x| x.to_string()));
        v
    }
}

impl AssignArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        if let Some(k) = self.num_classes {
            v.push(("num_classes", k.to_string()));
        }
        if self.estimate_k {
            v.push(("estimate_k", "true".into()));
        }
        if let Some(k) = self.k_min {
            v.push(("k_min", k.to_string()));
        }
        if let Some(k) = self.k_max {
            v.push(("k_max", k.to_string()));
        }
        if let Some(r) = self.kmeans_restarts {
            v.push(("kmeans_restarts", r.to_string()));
        }
        v
    }
}

impl Cli {
    /// Config file, then global flags, then subcommand flags.
    fn run_config(&self, extra: &[(&'static str, String)]) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(f) = &self.features {
            cfg.features = Some(f.clone());
            if let Some(name) = f.file_name() {
                cfg.dataset = name.to_string_lossy().into_owned();
            }
        }
        if let Some(m) = &self.meta {
            cfg.meta = Some(m.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        for (k, v) in extra {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self.out.clone().context("--out is required")?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_synth(cli: &Cli, a: &GenSynthArgs) -> Result<()> {
    let d = GeneratorSpec::default();
    let spec = GeneratorSpec {
        n_backgrounds: a.backgrounds,
        n_fine_classes: a.classes_per_background,
        samples_per_class: a.samples_per_class,
        d: a.dim.unwrap_or(d.d),
        background_scale: a.background_scale.unwrap_or(d.background_scale),
        class_scale: a.class_scale.unwrap_or(d.class_scale),
        noise_sigma: a.noise_sigma.unwrap_or(d.noise_sigma),
        trait_rank: a.trait_rank.unwrap_or(d.trait_rank),
        seen_fraction: a.seen_fraction.unwrap_or(d.seen_fraction),
        labeled_fraction: a.labeled_fraction.unwrap_or(d.labeled_fraction),
        seed: cli.seed.unwrap_or(0),
    };
    let prefix = cli.out.clone().context("--out <prefix> is required")?;
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let ds = generate(&spec)?;
    save_features(&prefix, &ds.features, &ds.view)?;
    let factors = xcon::embedding_store::meta_path(&prefix).with_extension("factors");
    ds.write_factors(&factors)?;
    info!(
        "wrote {} rows, d={}, {} classes ({} seen) to {}",
        ds.features.n(),
        ds.features.d(),
        spec.num_classes(),
        ds.view.seen_classes().len(),
        prefix.display()
    );
    Ok(())
}

fn partition_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = cli.run_config(&a.overrides())?;
    let (m, view) = run::load_inputs(&cfg)?;
    let p = partition_dataset(&m, cfg.train.partitions, cfg.stage_seeds.partition)?;
    let out = cli.out_dir()?;
    write_index_file(out.join(run::PARTITION_FILE), view.ids(), &p.membership)?;
    let report = partition_report(&p, &view).to_string();
    write_text(&out.join(run::PARTITION_REPORT_FILE), &report)?;
    print!("{report}");
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainCmd) -> Result<()> {
    let cfg = cli.run_config(&a.train.overrides())?;
    let (m, view) = run::load_inputs(&cfg)?;
    let partition = match &a.partition {
        Some(path) => {
            let membership = read_index_file(path, view.ids())?;
            PartitionResult::from_membership(cfg.train.partitions, membership)?
        }
        None => partition_dataset(&m, cfg.train.partitions, cfg.stage_seeds.partition)?,
    };
    let (model, trace) = xcon::train(&m, &view.without_truth(), &partition, &cfg.train)?;
    let out = cli.out_dir()?;
    let echo = cfg.to_echo();
    write_text(&out.join(run::CONFIG_FILE), &echo)?;
    write_checkpoint(out.join(run::CHECKPOINT_FILE), &model, &echo)?;
    write_text(&out.join(run::TRACE_FILE), &trace.to_csv())?;
    write_index_file(out.join(run::PARTITION_FILE), view.ids(), &partition.membership)?;
    println!(
        "steps={} first_loss={:.6} last_loss={:.6}",
        trace.steps.len(),
        trace.first_total().unwrap_or(f64::NAN),
        trace.last_total().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn assign_cmd(cli: &Cli, a: &AssignCmd) -> Result<()> {
    let cfg = cli.run_config(&a.assign.overrides())?;
    let (m, view) = run::load_inputs(&cfg)?;
    let (model, _) = read_checkpoint(&a.checkpoint)?;
    let emb = pipeline::assignment_space(&model, &m)?;
    let unlabeled_view = view.without_truth();
    let k = if cfg.estimate_k {
        let search = estimate(&emb, &unlabeled_view, &cfg, cfg.k_min, cfg.k_max)?;
        write_text(&cli.out_dir()?.join(run::K_SCORES_FILE), &search.to_csv())?;
        search.k_hat
    } else {
        match cfg.num_classes {
            Some(k) => k,
            None if view.labels().iter().all(Option::is_some) => view.all_classes().len(),
            None => bail!("metadata lacks ground truth; pass --num-classes or --estimate-k"),
        }
    };
    let clusters = pipeline::assign_classes(&emb, &view, k, &cfg)?;
    let out = cli.out_dir()?;
    write_index_file(out.join(run::PREDICTIONS_FILE), view.ids(), &clusters.assignment)?;
    println!("k={k} inertia={:.6} iterations={}", clusters.inertia, clusters.iterations);
    Ok(())
}

fn eval_cmd(cli: &Cli, a: &EvalCmd) -> Result<()> {
    let meta = cli
        .meta
        .clone()
        .or_else(|| cli.features.as_ref().map(xcon::embedding_store::meta_path))
        .context("--meta or --features is required")?;
    let view = DatasetView::read_meta(&meta)?;
    let pred = read_index_file(&a.predictions, view.ids())?;
    let report = pipeline::evaluate(&pred, &view)?.context("metadata has unlabeled rows without ground truth")?;
    print!("{report}");
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        write_text(&out.join(run::REPORT_FILE), &report.to_string())?;
        write_text(
            &out.join(run::REPORT_CSV_FILE),
            &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(&a.dataset, cli.seed.unwrap_or(0))),
        )?;
    }
    Ok(())
}

fn estimate(
    m: &xcon::Features,
    view: &DatasetView,
    cfg: &RunConfig,
    k_min: Option<usize>,
    k_max: Option<usize>,
) -> Result<xcon::KSearchResult> {
    let params = EstimationParams {
        probe_fraction: cfg.probe_fraction,
        restarts: cfg.estimate_restarts,
        max_iter: cfg.kmeans_max_iter,
        tol: cfg.kmeans_tol,
        ..EstimationParams::new(k_min.unwrap_or(view.seen_classes().len()), k_max, cfg.stage_seeds.estimate)
    };
    Ok(estimate_num_classes(m, view, &params)?)
}

fn estimate_cmd(cli: &Cli, a: &EstimateCmd) -> Result<()> {
    let cfg = cli.run_config(&[])?;
    let (m, view) = run::load_inputs(&cfg)?;
    let m = match &a.checkpoint {
        Some(path) => pipeline::assignment_space(&read_checkpoint(path)?.0, &m)?,
        None => m,
    };
    let search = estimate(&m, &view.without_truth(), &cfg, a.k_min, a.k_max)?;
    print!("{}", search.to_csv());
    println!("k_hat={}", search.k_hat);
    if cli.out.is_some() {
        write_text(&cli.out_dir()?.join(run::K_SCORES_FILE), &search.to_csv())?;
    }
    Ok(())
}

fn run_cmd(cli: &Cli, a: &RunCmd) -> Result<()> {
    let mut extra = a.train.overrides();
    extra.extend(a.assign.overrides());
    let cfg = match cli.run_config(&extra) {
        Ok(cfg) => cfg,
        Err(e) => {
            if let Some(out) = &cli.out {
                fs::create_dir_all(out)?;
                write_text(&out.join(run::ERROR_FILE), &format!("stage=config\nerror={e:#}\n"))?;
            }
            return Err(e);
        }
    };
    let outcome = pipeline::run_pipeline(&cfg)?;
    match &outcome.report {
        Some(r) => println!("{}", r.csv_row(&cfg.dataset, cfg.seed)),
        None => println!("k={} (no ground truth, evaluation skipped)", outcome.k()),
    }
    Ok(())
}

fn sweep_cmd(cli: &Cli, a: &SweepCmd) -> Result<bool> {
    let mut extra = a.train.overrides();
    extra.extend(a.assign.overrides());
    let cfg = cli.run_config(&extra)?;
    let axis: SweepAxis = a.axis.parse()?;
    let table = pipeline::run_sweep(&cfg, axis, &a.values, &a.seeds)?;
    print!("{}", table.to_csv());
    let failed: Vec<String> = table
        .runs
        .iter()
        .filter_map(|r| r.result.as_ref().err().map(|e| format!("{axis}={} seed={}: {e}", r.value, r.seed)))
        .collect();
    if !failed.is_empty() {
        write_text(&cfg.out.join(run::ERROR_FILE), &(failed.join("\n") + "\n"))?;
    }
    Ok(failed.is_empty())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(cli, a)?,
        Command::Partition(a) => partition_cmd(cli, a)?,
        Command::Train(a) => train_cmd(cli, a)?,
        Command::Assign(a) => assign_cmd(cli, a)?,
        Command::Eval(a) => eval_cmd(cli, a)?,
        Command::EstimateK(a) => estimate_cmd(cli, a)?,
        Command::Run(a) => run_cmd(cli, a)?,
        Command::Sweep(a) => return sweep_cmd(cli, a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("could not configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
