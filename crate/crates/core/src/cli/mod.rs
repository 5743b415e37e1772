//! Command-line pipeline. Each subcommand reads the run config, consumes
//! the artifacts of the earlier stages from `output_dir` and writes its own.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::{
    AblationConfig, AblationModel, DataConfig, EmbedConfig, EvalConfig, InferConfig,
    PreprocessConfig, RunConfig, SplitConfig, TaskConfig, UnsupConfig, CONFIG_HELP,
};

use crate::error::{Error, ErrorKind, Result};
use crate::evalkit::experiment::{prepare, train_and_evaluate, ExperimentConfig, Prepared};
use crate::evalkit::export_embeddings;
use crate::evalkit::MetricReport;
use crate::evalkit::{apply_split, evaluate, random_baseline, Labels, Part, SplitPlan, Task};
use crate::fusion::checkpoint::Checkpoint;
use crate::fusion::{forward_cached, SubgraphStack};
use crate::hetgraph::{default_features, load_dataset_dir, HeteroGraph};
use crate::metapath::{build_subgraphs, read_triplets, write_triplets, MetaPath, Normalization};
use crate::quickinfer::{quick_infer, TestBatch, TrainedModel};
use crate::synthgen::{generate, write_generated, PlantedTruth};
use crate::training::{train, LossKind, Objective};

#[derive(Debug, Parser)]
#[command(
    name = "simgraph",
    version,
    about = "Meta-path similarity subgraphs and learned graph fusion for diagnosis prediction",
    after_long_help = CONFIG_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset to <output_dir>/data (or [data].dir).
    Generate(Args),
    /// Split the targets and build one similarity subgraph per meta-path.
    Preprocess(Args),
    /// Train on the preprocessed split; writes checkpoint.txt and train_log.csv.
    Train(Args),
    /// Score the checkpoint on the test part; writes metrics.csv and metrics.txt.
    Eval(Args),
    /// Quick inference for new nodes; writes predictions.csv.
    Infer {
        #[command(flatten)]
        args: Args,
        /// Batch edge files, overriding [infer].batch.
        #[arg(long, num_args = 1..)]
        batch: Vec<PathBuf>,
    },
    /// Export final-layer vectors of [embed].node_type to embeddings.tsv.
    Embed(Args),
    /// Repeated split/train/eval of every [[ablation.models]] entry.
    Ablate(Args),
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Run config (TOML); see `simgraph --help` for every key.
    #[arg(short, long)]
    pub config: PathBuf,
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(&RunConfig::load(&a.config)?),
        Command::Preprocess(a) => cmd_preprocess(&RunConfig::load(&a.config)?),
        Command::Train(a) => cmd_train(&RunConfig::load(&a.config)?),
        Command::Eval(a) => cmd_eval(&RunConfig::load(&a.config)?),
        Command::Infer { args, batch } => {
            let mut cfg = RunConfig::load(&args.config)?;
            if !batch.is_empty() {
                cfg.infer.batch = batch.clone();
            }
            cmd_infer(&cfg)
        }
        Command::Embed(a) => cmd_embed(&RunConfig::load(&a.config)?),
        Command::Ablate(a) => cmd_ablate(&RunConfig::load(&a.config)?),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(config::hex(&Sha256::digest(&bytes)))
}

/// `manifest_<stage>.toml`: seed, config hash and the hash of every
/// deterministic artifact of the stage, keyed by path relative to `root`.
fn write_manifest(
    cfg: &RunConfig,
    stage: &str,
    seed: u64,
    root: &Path,
    files: &[PathBuf],
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for f in files {
        let rel = f
            .strip_prefix(root)
            .unwrap_or(f)
            .to_string_lossy()
            .replace('\\', "/");
        hashes.insert(rel, file_sha256(f)?);
    }
    let mut out = format!(
        "stage = \"{stage}\"\nseed = {seed}\nconfig_sha256 = \"{}\"\n\n[files]\n",
        cfg.sha256()
    );
    for (k, v) in hashes {
        let _ = writeln!(out, "\"{k}\" = \"{v}\"");
    }
    write(&cfg.output_dir.join(format!("manifest_{stage}.toml")), &out)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let (graph, labels, truth) = generate(&cfg.generate)?;
    let dir = cfg.data_dir();
    write_generated(&graph, &labels, &truth, &dir)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    write_manifest(cfg, "generate", cfg.generate.seed, &cfg.output_dir, &files)?;
    println!(
        "generated {} nodes, {} edges into {}",
        graph.n_nodes(),
        graph.n_edges(),
        dir.display()
    );
    Ok(())
}

/// Graph, task and labels named by the config.
pub struct Dataset {
    pub graph: HeteroGraph,
    pub task: Task,
    pub labels: Labels,
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    let graph = load_dataset_dir(&dir)?;
    let t = &cfg.task;
    let task = Task::from_names(
        graph.schema(),
        &t.target,
        &t.label,
        t.patient.as_deref(),
        &t.removed,
    )?;
    let labels_path = cfg
        .data
        .labels
        .clone()
        .unwrap_or_else(|| dir.join("labels.csv"));
    let labels = if cfg.data.labels.is_some() || labels_path.exists() {
        Labels::read_csv(&labels_path, &graph, &task)?
    } else {
        Labels::from_graph(&graph, &task)
    };
    Ok(Dataset {
        graph,
        task,
        labels,
    })
}

pub fn meta_paths(cfg: &RunConfig, graph: &HeteroGraph) -> Result<Vec<MetaPath>> {
    if cfg.preprocess.paths.is_empty() {
        return Err(Error::config(
            "preprocess.paths",
            "at least one meta-path is required",
        ));
    }
    cfg.preprocess
        .paths
        .iter()
        .map(|p| MetaPath::parse(p, graph.schema()))
        .collect()
}

fn subgraph_file(out: &Path, k: usize, path: &MetaPath) -> PathBuf {
    out.join("subgraphs")
        .join(format!("{k:02}_{}.tsv", path.label()))
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let exec = cfg.exec();
    let data = load_data(cfg)?;
    let paths = meta_paths(cfg, &data.graph)?;
    let (plan, pruned) =
        crate::evalkit::split(&data.graph, &data.labels, &data.task, cfg.split.seed);
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let split_csv = out.join("split.csv");
    let removed_csv = out.join("removed_edges.csv");
    plan.write_csv(&data.graph, &data.task, &split_csv)?;
    plan.write_removed_csv(&data.graph, &removed_csv)?;
    let subgraphs = build_subgraphs(&pruned, &paths, cfg.preprocess.normalization, exec)?;
    let dir = out.join("subgraphs");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = vec![split_csv, removed_csv];
    for (k, s) in subgraphs.iter().enumerate() {
        let f = subgraph_file(out, k, &s.path);
        write_triplets(s, &f)?;
        files.push(f);
    }
    write_manifest(cfg, "preprocess", cfg.split.seed, out, &files)?;
    let (tr, va, te) = plan.counts();
    println!(
        "split {tr}/{va}/{te}, removed {} edges, {} subgraphs",
        plan.removed.len(),
        subgraphs.len()
    );
    Ok(())
}

/// The library-level experiment described by `cfg`.
pub fn experiment_config(cfg: &RunConfig, task: &Task, paths: Vec<MetaPath>) -> ExperimentConfig {
    ExperimentConfig {
        task: task.clone(),
        paths,
        normalization: cfg.preprocess.normalization,
        features: cfg.preprocess.features,
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        split_seed: cfg.split.seed,
        ks: cfg.eval.ks.clone(),
        denominator: cfg.eval.denominator,
    }
}

/// Split and subgraphs as written by `preprocess`.
pub fn load_prepared(cfg: &RunConfig, data: &Dataset) -> Result<Prepared> {
    let out = &cfg.output_dir;
    let paths = meta_paths(cfg, &data.graph)?;
    let split_csv = out.join("split.csv");
    if !split_csv.exists() {
        return Err(Error::io(
            &split_csv,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "missing; run `preprocess` first",
            ),
        ));
    }
    let parts = SplitPlan::read_csv(&split_csv, &data.graph, &data.task)?;
    let (plan, graph) = apply_split(&data.graph, &data.task, parts);
    let mut subgraphs = Vec::with_capacity(paths.len());
    for (k, p) in paths.iter().enumerate() {
        let s = read_triplets(&subgraph_file(out, k, p), graph.schema())?;
        if s.path != *p
            || s.normalization != cfg.preprocess.normalization
            || s.n() != graph.n_nodes()
        {
            return Err(Error::config(
                "preprocess",
                format!("subgraph {k} on disk does not match the config; rerun `preprocess`"),
            ));
        }
        subgraphs.push(s);
    }
    let stack = SubgraphStack::new(&subgraphs)?;
    let features = default_features(&graph, cfg.preprocess.features)?;
    Ok(Prepared {
        plan,
        graph,
        subgraphs,
        stack,
        features,
    })
}

fn truth_path(cfg: &RunConfig) -> PathBuf {
    cfg.data
        .truth
        .clone()
        .unwrap_or_else(|| cfg.data_dir().join("truth.csv"))
}

/// Nodes of `[unsup].node_type` with a planted category, and the categories.
fn unsup_targets(cfg: &RunConfig, graph: &HeteroGraph) -> Result<(Vec<usize>, Vec<usize>)> {
    let t = graph.schema().require_type(&cfg.unsup.node_type)?;
    let conditions = PlantedTruth::read_conditions(&truth_path(cfg), graph)?;
    let (nodes, cats): (Vec<usize>, Vec<usize>) = graph
        .type_range(t)
        .filter_map(|g| conditions[g].map(|c| (g, c)))
        .unzip();
    if nodes.len() < 2 {
        return Err(Error::config(
            "unsup.node_type",
            "needs at least two nodes with a category",
        ));
    }
    Ok((nodes, cats))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let exec = cfg.exec();
    let data = load_data(cfg)?;
    let prepared = load_prepared(cfg, &data)?;
    let mut model = prepared.model_config(&cfg.model, &data.labels);
    let (objective, val) = match cfg.train.loss {
        LossKind::MultilabelBce => {
            let (o, v) = prepared.supervised(&data.labels, &data.task);
            (o, Some(v))
        }
        LossKind::UnsupDotproduct => {
            if cfg.model.label_dim == 0 {
                model.label_dim = model.hidden_dim;
            }
            let (nodes, categories) = unsup_targets(cfg, &prepared.graph)?;
            (Objective::UnsupDotproduct { nodes, categories }, None)
        }
    };
    let init = prepared.init_params(&model)?;
    let start = Instant::now();
    let outcome = train(
        &prepared.stack,
        &prepared.features,
        init,
        &model,
        &cfg.train,
        &objective,
        val.as_ref(),
        exec,
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let ckpt = Checkpoint {
        config: model,
        params: outcome.params.clone(),
        extra: vec![
            ("paths".into(), cfg.preprocess.paths.join(",")),
            (
                "normalization".into(),
                cfg.preprocess.normalization.as_str().into(),
            ),
            ("features".into(), cfg.preprocess.features.as_str().into()),
            ("split_seed".into(), cfg.split.seed.to_string()),
            ("loss".into(), cfg.train.loss.as_str().into()),
            ("best_epoch".into(), outcome.best_epoch.to_string()),
        ],
    };
    let out = &cfg.output_dir;
    let ckpt_path = out.join("checkpoint.txt");
    ckpt.write(&ckpt_path)?;
    write(&out.join("train_log.csv"), &outcome.log_csv())?;
    write_manifest(cfg, "train", cfg.model.seed, out, &[ckpt_path])?;
    println!(
        "trained {} epochs in {seconds:.1}s, best epoch {}",
        outcome.log.len(),
        outcome.best_epoch
    );
    Ok(())
}

/// Reads `checkpoint.txt` and checks it was trained on this preprocessing.
pub fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let ckpt = Checkpoint::read(&cfg.output_dir.join("checkpoint.txt"))?;
    let expect = [
        ("paths", cfg.preprocess.paths.join(",")),
        (
            "normalization",
            cfg.preprocess.normalization.as_str().to_string(),
        ),
        ("features", cfg.preprocess.features.as_str().to_string()),
    ];
    for (key, want) in expect {
        if let Some(have) = ckpt.extra(key) {
            if have != want {
                return Err(Error::config(
                    format!("preprocess.{key}"),
                    format!("checkpoint was trained with `{have}`, config says `{want}`"),
                ));
            }
        }
    }
    Ok(ckpt)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let exec = cfg.exec();
    let data = load_data(cfg)?;
    let prepared = load_prepared(cfg, &data)?;
    let ckpt = load_checkpoint(cfg)?;
    let logits = prepared.logits(&ckpt.params, &ckpt.config, exec)?;
    let ks = &cfg.eval.ks;
    let scores = evaluate(
        &logits,
        &prepared.graph,
        &data.labels,
        &data.task,
        &prepared.plan,
        Part::Test,
        ks,
        cfg.eval.denominator,
    );
    let mut report = MetricReport::new(ks);
    let name = ckpt.config.variant.as_str();
    report.add(name, scores.clone());
    let nodes = prepared.plan.nodes(&prepared.graph, &data.task, Part::Test);
    let truth = data.labels.truth_of(&prepared.graph, &data.task, &nodes);
    let mut table = report.to_table();
    let _ = write!(table, "random-guess visit baseline:");
    for &k in ks {
        let _ = write!(
            table,
            " @{k} {:.4}",
            random_baseline(&truth, k, data.labels.n_labels, cfg.eval.denominator)
        );
    }
    let _ = writeln!(
        table,
        "\n{} test visits, {} test patients",
        scores.n_visits, scores.n_patients
    );
    let out = &cfg.output_dir;
    let csv = out.join("metrics.csv");
    let txt = out.join("metrics.txt");
    write(&csv, &report.to_csv())?;
    write(&txt, &table)?;
    write_manifest(cfg, "eval", cfg.split.seed, out, &[csv, txt])?;
    print!("{table}");
    Ok(())
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let exec = cfg.exec();
    let data = load_data(cfg)?;
    let prepared = load_prepared(cfg, &data)?;
    let ckpt = load_checkpoint(cfg)?;
    let batch = TestBatch::from_edge_paths(&prepared.graph, &cfg.infer.batch)?;
    let model = TrainedModel {
        graph: &prepared.graph,
        subgraphs: &prepared.subgraphs,
        stack: &prepared.stack,
        features: &prepared.features,
        feature_mode: cfg.preprocess.features,
        params: &ckpt.params,
        config: &ckpt.config,
    };
    let start = Instant::now();
    let result = quick_infer(&model, &batch, exec)?;
    let seconds = start.elapsed().as_secs_f64();
    let csv = result.predictions_csv(&prepared.graph, data.task.label_type, cfg.infer.top_k);
    let path = cfg.output_dir.join("predictions.csv");
    write(&path, &csv)?;
    write_manifest(cfg, "infer", cfg.model.seed, &cfg.output_dir, &[path])?;
    println!("predicted {} new nodes in {seconds:.3}s", batch.len());
    Ok(())
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let exec = cfg.exec();
    let data = load_data(cfg)?;
    let prepared = load_prepared(cfg, &data)?;
    let ckpt = load_checkpoint(cfg)?;
    let t = prepared.graph.schema().require_type(&cfg.embed.node_type)?;
    let cache = forward_cached(
        &prepared.stack,
        &prepared.features,
        &ckpt.params,
        &ckpt.config,
        exec,
    )?;
    let tsv = export_embeddings(&prepared.graph, &cache.embeddings(&ckpt.params), t)?;
    let path = cfg.output_dir.join("embeddings.tsv");
    write(&path, &tsv)?;
    write_manifest(cfg, "embed", cfg.model.seed, &cfg.output_dir, &[path])?;
    println!(
        "wrote {} vectors of {}",
        prepared.graph.n_of_type(t),
        cfg.embed.node_type
    );
    Ok(())
}

/// Every `[[ablation.models]]` entry over `[ablation].repeats` seeds; repeat
/// `r` shifts both the split and the model seed by `r`.
pub fn run_ablation(cfg: &RunConfig, data: &Dataset) -> Result<MetricReport> {
    let exec = cfg.exec();
    if cfg.ablation.models.is_empty() {
        return Err(Error::config("ablation.models", "list at least one model"));
    }
    if cfg.ablation.repeats == 0 {
        return Err(Error::config("ablation.repeats", "must be positive"));
    }
    let paths = meta_paths(cfg, &data.graph)?;
    let base = experiment_config(cfg, &data.task, paths);
    let mut report = MetricReport::new(&cfg.eval.ks);
    for r in 0..cfg.ablation.repeats as u64 {
        let mut cache: Vec<(Normalization, Prepared)> = Vec::new();
        for m in &cfg.ablation.models {
            let mut ec = base.clone();
            ec.split_seed = cfg.split.seed + r;
            ec.model.seed = cfg.model.seed + r;
            if let Some(v) = m.variant {
                ec.model.variant = v;
            }
            if let Some(a) = m.aggregator {
                ec.model.aggregator = a;
            }
            if let Some(n) = m.normalization {
                ec.normalization = n;
            }
            if !cache.iter().any(|(n, _)| *n == ec.normalization) {
                cache.push((
                    ec.normalization,
                    prepare(&data.graph, &data.labels, &ec, exec)?,
                ));
            }
            let prepared = &cache
                .iter()
                .find(|(n, _)| *n == ec.normalization)
                .expect("cached")
                .1;
            let run = train_and_evaluate(prepared, &data.labels, &ec, exec)?;
            log::info!("{} repeat {r}: {:?}", m.name, run.test.visit);
            report.add(&m.name, run.test);
        }
    }
    Ok(report)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let report = run_ablation(cfg, &data)?;
    let out = &cfg.output_dir;
    let csv = out.join("ablation.csv");
    let txt = out.join("ablation.txt");
    write(&csv, &report.to_csv())?;
    write(&txt, &report.to_table())?;
    write_manifest(cfg, "ablate", cfg.split.seed, out, &[csv, txt])?;
    print!("{}", report.to_table());
    Ok(())
}
