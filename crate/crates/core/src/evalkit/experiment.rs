//! Split → subgraphs → train → score, shared by the CLI and the tests.

use std::time::Instant;

use ndarray::Array2;

use super::{evaluate, precision_at_k, split, Denominator, Labels, Part, Scores, SplitPlan, Task};
use crate::error::Result;
use crate::exec::Exec;
use crate::fusion::{forward_cached, predict_topk, ModelConfig, ModelParams, SubgraphStack};
use crate::hetgraph::{default_features, FeatureMatrix, FeatureMode, HeteroGraph};
use crate::metapath::{build_subgraphs, MetaPath, Normalization, SimilaritySubgraph};
use crate::quickinfer::{quick_infer, TestBatch, TrainedModel};
use crate::training::{train, Objective, TrainConfig, TrainOutcome, ValSet};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub paths: Vec<MetaPath>,
    pub normalization: Normalization,
    pub features: FeatureMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub ks: Vec<usize>,
    pub denominator: Denominator,
}

/// Everything derived from the data before training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub plan: SplitPlan,
    /// The graph after removing held-out label edges.
    pub graph: HeteroGraph,
    pub subgraphs: Vec<SimilaritySubgraph>,
    pub stack: SubgraphStack,
    pub features: FeatureMatrix,
}

pub fn prepare(
    full: &HeteroGraph,
    labels: &Labels,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<Prepared> {
    let (plan, graph) = split(full, labels, &cfg.task, cfg.split_seed);
    prepare_with_plan(plan, graph, cfg, exec)
}

/// Same as [`prepare`] for a split computed elsewhere.
pub fn prepare_with_plan(
    plan: SplitPlan,
    graph: HeteroGraph,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<Prepared> {
    let subgraphs = build_subgraphs(&graph, &cfg.paths, cfg.normalization, exec)?;
    let stack = SubgraphStack::new(&subgraphs)?;
    let features = default_features(&graph, cfg.features)?;
    Ok(Prepared {
        plan,
        graph,
        subgraphs,
        stack,
        features,
    })
}

impl Prepared {
    pub fn supervised(&self, labels: &Labels, task: &Task) -> (Objective, ValSet) {
        let train_nodes = self.plan.nodes(&self.graph, task, Part::Train);
        let val_nodes = self.plan.nodes(&self.graph, task, Part::Val);
        let objective = Objective::MultilabelBce {
            labels: labels.matrix(&self.graph, task, &train_nodes),
            mask: train_nodes,
        };
        let val = ValSet {
            truth: labels.truth_of(&self.graph, task, &val_nodes),
            nodes: val_nodes,
        };
        (objective, val)
    }

    /// Model config with the label width filled in from the data.
    pub fn model_config(&self, cfg: &ModelConfig, labels: &Labels) -> ModelConfig {
        let mut m = cfg.clone();
        if m.label_dim == 0 {
            m.label_dim = labels.n_labels;
        }
        m
    }

    pub fn init_params(&self, model: &ModelConfig) -> Result<ModelParams> {
        ModelParams::init(model, self.stack.k(), self.features.cols())
    }

    pub fn logits(
        &self,
        params: &ModelParams,
        model: &ModelConfig,
        exec: Exec,
    ) -> Result<Array2<f64>> {
        Ok(
            forward_cached(&self.stack, &self.features, params, model, exec)?
                .logits()
                .clone(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: ModelConfig,
    pub outcome: TrainOutcome,
    pub logits: Array2<f64>,
    pub test: Scores,
    pub train_seconds: f64,
}

/// Supervised training on the train part with early stopping on the val
/// part, scored on the test part.
pub fn train_and_evaluate(
    prepared: &Prepared,
    labels: &Labels,
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<RunResult> {
    let model = prepared.model_config(&cfg.model, labels);
    let (objective, val) = prepared.supervised(labels, &cfg.task);
    let init = prepared.init_params(&model)?;
    let start = Instant::now();
    let outcome = train(
        &prepared.stack,
        &prepared.features,
        init,
        &model,
        &cfg.train,
        &objective,
        Some(&val),
        exec,
    )?;
    let train_seconds = start.elapsed().as_secs_f64();
    let logits = prepared.logits(&outcome.params, &model, exec)?;
    let test = evaluate(
        &logits,
        &prepared.graph,
        labels,
        &cfg.task,
        &prepared.plan,
        Part::Test,
        &cfg.ks,
        cfg.denominator,
    );
    Ok(RunResult {
        model,
        outcome,
        logits,
        test,
        train_seconds,
    })
}

/// Paired comparison of quick inference against transductive training on
/// the same held-out targets.
#[derive(Debug, Clone)]
pub struct FidelityReport {
    pub n_nodes: usize,
    pub k: usize,
    /// Test precision@k of the model trained with the test targets present.
    pub conventional: f64,
    /// Precision@k of quick inference from a model that never saw them.
    pub quick: f64,
    pub retrain_seconds: f64,
    pub quick_seconds: f64,
}

/// Runs both paths at visit level with precision@`k`.
pub fn quick_fidelity(
    full: &HeteroGraph,
    labels: &Labels,
    cfg: &ExperimentConfig,
    k: usize,
    exec: Exec,
) -> Result<FidelityReport> {
    let task = &cfg.task;
    let prepared = prepare(full, labels, cfg, exec)?;
    let conventional_run = train_and_evaluate(&prepared, labels, cfg, exec)?;
    let test_nodes = prepared.plan.nodes(&prepared.graph, task, Part::Test);
    let truth = labels.truth_of(&prepared.graph, task, &test_nodes);
    let ranked = predict_topk(&conventional_run.logits, k, &test_nodes);
    let conventional = precision_at_k(&ranked, &truth, k, cfg.denominator);

    // Inductive side: the same split with the test targets deleted.
    let off = prepared.graph.offset(task.target_type);
    let is_test = |g: usize| {
        prepared.graph.node_type(g) == task.target_type
            && prepared.plan.parts[g - off] == Some(Part::Test)
    };
    let reduced = prepared.graph.induced(|g| !is_test(g));
    let keep: Vec<usize> = (0..prepared.plan.parts.len())
        .filter(|&l| prepared.plan.parts[l] != Some(Part::Test))
        .collect();
    let plan = SplitPlan {
        parts: keep.iter().map(|&l| prepared.plan.parts[l]).collect(),
        // Only the parts matter for training.
        removed: Vec::new(),
    };
    let reduced_labels = Labels {
        n_labels: labels.n_labels,
        per_target: keep.iter().map(|&l| labels.per_target[l].clone()).collect(),
    };
    let inductive = prepare_with_plan(plan, reduced, cfg, exec)?;
    let model = inductive.model_config(&cfg.model, &reduced_labels);
    let (objective, val) = inductive.supervised(&reduced_labels, task);
    let init = inductive.init_params(&model)?;
    let start = Instant::now();
    let outcome = train(
        &inductive.stack,
        &inductive.features,
        init,
        &model,
        &cfg.train,
        &objective,
        Some(&val),
        exec,
    )?;
    let retrain_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let batch = TestBatch::from_nodes(&prepared.graph, &test_nodes, &inductive.graph)?;
    let trained = TrainedModel {
        graph: &inductive.graph,
        subgraphs: &inductive.subgraphs,
        stack: &inductive.stack,
        features: &inductive.features,
        feature_mode: cfg.features,
        params: &outcome.params,
        config: &model,
    };
    let qi = quick_infer(&trained, &batch, exec)?;
    let quick_seconds = start.elapsed().as_secs_f64();
    let rows: Vec<usize> = (0..qi.nodes.len()).collect();
    let ranked = predict_topk(&qi.logits, k, &rows);
    // Batch order follows `test_nodes`, so `truth` lines up.
    let quick = precision_at_k(&ranked, &truth, k, cfg.denominator);
    Ok(FidelityReport {
        n_nodes: test_nodes.len(),
        k,
        conventional,
        quick,
        retrain_seconds,
        quick_seconds,
    })
}
