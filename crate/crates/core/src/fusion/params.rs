use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Softmax-weighted sum of the subgraphs.
    Sum,
    /// Per-pair attention from the input features.
    Attention,
    /// Per-path GNN features, aggregated, then per-pair attention.
    AggAttention,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sum => "sum",
            Variant::Attention => "attention",
            Variant::AggAttention => "agg_attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sum" => Variant::Sum,
            "attention" => Variant::Attention,
            "agg_attention" => Variant::AggAttention,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Concat,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean" => Aggregator::Mean,
            "concat" => Aggregator::Concat,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub aggregator: Aggregator,
    pub hidden_dim: usize,
    /// σ on attention logits.
    pub attention_activation: Activation,
    /// σ on the per-path GNN layers.
    pub gnn_activation: Activation,
    pub leaky_slope: f64,
    /// Filled from the data when left at 0.
    pub label_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::AggAttention,
            aggregator: Aggregator::Mean,
            hidden_dim: 16,
            attention_activation: Activation::LeakyRelu,
            gnn_activation: Activation::Relu,
            leaky_slope: 0.2,
            label_dim: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be positive"));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::config(
                "model.leaky_slope",
                "must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    /// Width of `F_meta`, which is also the head input and half the attention
    /// vector length.
    pub fn meta_dim(&self, k: usize, feature_dim: usize) -> usize {
        match (self.variant, self.aggregator) {
            (Variant::AggAttention, Aggregator::Mean) => self.hidden_dim,
            (Variant::AggAttention, Aggregator::Concat) => k * self.hidden_dim,
            _ => feature_dim,
        }
    }
}

/// Every trainable tensor. All blocks exist for every variant; blocks a
/// variant does not use simply receive zero gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// 1 × K fusion logits.
    pub w: Array2<f64>,
    /// K × 2m attention vectors, `[ω_left ‖ ω_right]` per row.
    pub omega: Array2<f64>,
    /// K matrices d × hidden.
    pub meta_gnn: Vec<Array2<f64>>,
    /// m × L
    pub head_weight: Array2<f64>,
    /// 1 × L
    pub head_bias: Array2<f64>,
}

fn glorot(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Array2<f64> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-s..=s))
}

impl ModelParams {
    /// Glorot-uniform weights, zero fusion logits and zero bias.
    pub fn init(config: &ModelConfig, k: usize, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if k == 0 {
            return Err(Error::config(
                "preprocess.paths",
                "at least one meta-path is required",
            ));
        }
        if config.label_dim == 0 {
            return Err(Error::config("model.label_dim", "must be positive"));
        }
        let m = config.meta_dim(k, feature_dim);
        let h = config.hidden_dim;
        let l = config.label_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let omega = glorot(&mut rng, k, 2 * m, 2 * m, 1);
        let meta_gnn = (0..k)
            .map(|_| glorot(&mut rng, feature_dim, h, feature_dim, h))
            .collect();
        let head_weight = glorot(&mut rng, m, l, m, l);
        Ok(ModelParams {
            w: Array2::zeros((1, k)),
            omega,
            meta_gnn,
            head_weight,
            head_bias: Array2::zeros((1, l)),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            w: Array2::zeros(self.w.raw_dim()),
            omega: Array2::zeros(self.omega.raw_dim()),
            meta_gnn: self
                .meta_gnn
                .iter()
                .map(|m| Array2::zeros(m.raw_dim()))
                .collect(),
            head_weight: Array2::zeros(self.head_weight.raw_dim()),
            head_bias: Array2::zeros(self.head_bias.raw_dim()),
        }
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.meta_gnn.first().map_or(0, |m| m.nrows())
    }

    pub fn meta_dim(&self) -> usize {
        self.head_weight.nrows()
    }

    pub fn label_dim(&self) -> usize {
        self.head_weight.ncols()
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = vec!["w".to_string(), "omega".to_string()];
        names.extend((0..self.meta_gnn.len()).map(|k| format!("meta_gnn.{k}")));
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    /// `(name, tensor)` in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<&Array2<f64>> = vec![&self.w, &self.omega];
        out.extend(self.meta_gnn.iter());
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        self.block_names().into_iter().zip(out).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let names = self.block_names();
        let mut out: Vec<&mut Array2<f64>> = vec![&mut self.w, &mut self.omega];
        out.extend(self.meta_gnn.iter_mut());
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        names.into_iter().zip(out).collect()
    }

    /// Blocks subject to weight decay.
    pub fn is_weight_matrix(name: &str) -> bool {
        name.starts_with("meta_gnn.") || name == "head.weight"
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, b) in self.blocks() {
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter block {name}")));
            }
        }
        Ok(())
    }

    /// `softmax(w)`
    pub fn fusion_weights(&self) -> Vec<f64> {
        softmax(self.w.row(0).as_slice().expect("contiguous"))
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
