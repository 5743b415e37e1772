//! Loss, reverse pass, Adam and finite-difference gradient checking.

mod backward;
mod loss;

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use backward::backward;
pub use loss::{loss, LossKind, Objective};

use crate::error::{Error, Result};
use crate::evalkit::{precision_at_k, Denominator};
use crate::exec::Exec;
use crate::fusion::{forward_cached, predict_topk, ModelConfig, ModelParams, SubgraphStack};
use crate::hetgraph::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty on the per-path GNN and head weight matrices only.
    pub weight_decay: f64,
    /// Epochs without a new best validation precision@10 before stopping.
    pub patience: usize,
    pub loss: LossKind,
    pub grad_check: bool,
    pub grad_check_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            patience: 30,
            loss: LossKind::MultilabelBce,
            grad_check: false,
            grad_check_tolerance: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "train.learning_rate",
                "must be finite and nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must lie in [0, 1)"));
        }
        if !pos(self.eps) {
            return Err(Error::config("train.eps", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(
                "train.weight_decay",
                "must be finite and nonnegative",
            ));
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience", "must be at least 1"));
        }
        if !pos(self.grad_check_tolerance) {
            return Err(Error::config(
                "train.grad_check_tolerance",
                "must be positive",
            ));
        }
        Ok(())
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let lr = cfg.learning_rate;
        let blocks = params.blocks_mut();
        let gs = grads.blocks();
        let ms = self.m.blocks_mut();
        let vs = self.v.blocks_mut();
        for ((((name, p), (_, g)), (_, m)), (_, v)) in blocks.into_iter().zip(gs).zip(ms).zip(vs) {
            let decay = if ModelParams::is_weight_matrix(&name) {
                cfg.weight_decay
            } else {
                0.0
            };
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + decay * *p;
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
                });
        }
    }
}

/// Loss and analytic gradients at `params`.
pub fn loss_and_gradients(
    stack: &SubgraphStack,
    features: &FeatureMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    objective: &Objective,
    exec: Exec,
) -> Result<(f64, ModelParams)> {
    let cache = forward_cached(stack, features, params, config, exec)?;
    let (value, g) = objective.evaluate(cache.logits())?;
    Ok((
        value,
        backward(stack, features, params, config, &cache, &g, exec),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(block, max relative error)` in parameter order.
    pub blocks: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares every analytic gradient entry with a central difference of step
/// `h`.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    stack: &SubgraphStack,
    features: &FeatureMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    objective: &Objective,
    h: f64,
    tolerance: f64,
    exec: Exec,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(stack, features, params, config, objective, exec)?;
    let eval = |p: &ModelParams| -> Result<f64> {
        let cache = forward_cached(stack, features, p, config, exec)?;
        Ok(objective.evaluate(cache.logits())?.0)
    };
    let mut work = params.clone();
    let mut blocks = Vec::new();
    for (bi, (name, grad)) in analytic.blocks().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in 0..grad.len() {
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let orig = params.blocks()[bi].1[[r, c]];
            work.blocks_mut()[bi].1[[r, c]] = orig + h;
            let up = eval(&work)?;
            work.blocks_mut()[bi].1[[r, c]] = orig - h;
            let dn = eval(&work)?;
            work.blocks_mut()[bi].1[[r, c]] = orig;
            let numeric = (up - dn) / (2.0 * h);
            worst = worst.max(relative_error(grad[[r, c]], numeric));
        }
        blocks.push((name, worst));
    }
    let passed = blocks.iter().all(|(_, e)| *e < tolerance);
    Ok(GradCheckReport {
        blocks,
        tolerance,
        passed,
    })
}

/// Validation targets: node ids and their true label sets.
#[derive(Debug, Clone, Default)]
pub struct ValSet {
    pub nodes: Vec<usize>,
    pub truth: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// NaN when there is no validation set.
    pub val_p5: f64,
    pub val_p10: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without
    /// validation).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_p@5,val_p@10,seconds\n");
        for e in &self.log {
            out.push_str(&format!(
                "{},{:.16e},{},{},{:.6}\n",
                e.epoch,
                e.loss,
                fmt_metric(e.val_p5),
                fmt_metric(e.val_p10),
                e.seconds
            ));
        }
        out
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

fn val_precision(logits: &Array2<f64>, val: &ValSet, k: usize) -> f64 {
    let ranked = predict_topk(logits, k, &val.nodes);
    precision_at_k(&ranked, &val.truth, k, Denominator::Capped)
}

/// Full-graph training from `init`. Each epoch evaluates validation
/// precision on the same forward pass that produces the gradient.
#[allow(clippy::too_many_arguments)]
pub fn train(
    stack: &SubgraphStack,
    features: &FeatureMatrix,
    init: ModelParams,
    config: &ModelConfig,
    cfg: &TrainConfig,
    objective: &Objective,
    val: Option<&ValSet>,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let val = val.filter(|v| !v.nodes.is_empty());
    if cfg.grad_check {
        let report = grad_check(
            stack,
            features,
            &init,
            config,
            objective,
            1e-4,
            cfg.grad_check_tolerance,
            exec,
        )?;
        if !report.passed {
            return Err(Error::NonFinite(format!(
                "gradient check failed: max relative error {:.3e}",
                report.max_error()
            )));
        }
    }
    let start = Instant::now();
    let mut params = init;
    let mut adam = Adam::new(&params);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        let cache = forward_cached(stack, features, &params, config, exec)?;
        let (value, g) = objective.evaluate(cache.logits()).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence(epoch),
            other => other,
        })?;
        let (p5, p10) = match val {
            Some(v) => (
                val_precision(cache.logits(), v, 5),
                val_precision(cache.logits(), v, 10),
            ),
            None => (f64::NAN, f64::NAN),
        };
        log.push(EpochLog {
            epoch,
            loss: value,
            val_p5: p5,
            val_p10: p10,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch} loss {value:.6} val p@10 {p10:.4}");
        if val.is_some() {
            match &best {
                Some((b, _, _)) if p10 <= *b => {}
                _ => best = Some((p10, epoch, params.clone())),
            }
            if let Some((_, be, _)) = &best {
                if epoch - be >= cfg.patience {
                    break;
                }
            }
        }
        let grads = backward(stack, features, &params, config, &cache, &g, exec);
        drop(cache);
        adam.step(&mut params, &grads, cfg);
        if params.check_finite().is_err() {
            return Err(Error::Divergence(epoch));
        }
    }
    Ok(match best {
        Some((_, best_epoch, p)) => TrainOutcome {
            params: p,
            best_epoch,
            log,
        },
        None => TrainOutcome {
            params,
            best_epoch: cfg.epochs,
            log,
        },
    })
}
