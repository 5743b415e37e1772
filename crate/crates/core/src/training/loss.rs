use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MultilabelBce,
    UnsupDotproduct,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::MultilabelBce => "multilabel_bce",
            LossKind::UnsupDotproduct => "unsup_dotproduct",
        }
    }
}

/// What the head output is trained against.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Mean sigmoid cross-entropy over `mask` rows and every label column.
    MultilabelBce {
        labels: Array2<f64>,
        mask: Vec<usize>,
    },
    /// Pairwise dot products of the `nodes` rows: pulled together within a
    /// category, pushed apart across categories.
    UnsupDotproduct {
        nodes: Vec<usize>,
        categories: Vec<usize>,
    },
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(z) + (1 - y) ln(1 - σ(z))]`
fn bce(z: f64, y: f64) -> f64 {
    -(y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z))
}

/// Mean masked sigmoid cross-entropy.
pub fn loss(logits: &Array2<f64>, labels: &Array2<f64>, mask: &[usize]) -> Result<f64> {
    Ok(Objective::MultilabelBce {
        labels: labels.clone(),
        mask: mask.to_vec(),
    }
    .evaluate(logits)?
    .0)
}

impl Objective {
    /// Loss and its gradient with respect to the logits.
    pub fn evaluate(&self, logits: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let mut grad = Array2::zeros(logits.raw_dim());
        let value = match self {
            Objective::MultilabelBce { labels, mask } => {
                if mask.is_empty() {
                    return Err(Error::EmptyMask);
                }
                if labels.dim() != logits.dim() {
                    return Err(Error::Dimension(format!(
                        "labels {:?} vs logits {:?}",
                        labels.dim(),
                        logits.dim()
                    )));
                }
                let scale = 1.0 / (mask.len() * logits.ncols()) as f64;
                let mut total = 0.0;
                for &i in mask {
                    for c in 0..logits.ncols() {
                        let (z, y) = (logits[[i, c]], labels[[i, c]]);
                        total += bce(z, y);
                        grad[[i, c]] += (sigmoid(z) - y) * scale;
                    }
                }
                total * scale
            }
            Objective::UnsupDotproduct { nodes, categories } => {
                if nodes.len() < 2 {
                    return Err(Error::EmptyMask);
                }
                let (mut same, mut diff) = (0usize, 0usize);
                for a in 0..nodes.len() {
                    for b in a + 1..nodes.len() {
                        if categories[a] == categories[b] {
                            same += 1;
                        } else {
                            diff += 1;
                        }
                    }
                }
                let mut total = 0.0;
                for a in 0..nodes.len() {
                    for b in a + 1..nodes.len() {
                        let (i, j) = (nodes[a], nodes[b]);
                        let s = logits.row(i).dot(&logits.row(j));
                        // d/ds of -ln σ(s) is σ(s) - 1, of -ln σ(-s) is σ(s).
                        let (term, ds) = if categories[a] == categories[b] {
                            (
                                -log_sigmoid(s) / same as f64,
                                (sigmoid(s) - 1.0) / same as f64,
                            )
                        } else {
                            (-log_sigmoid(-s) / diff as f64, sigmoid(s) / diff as f64)
                        };
                        total += term;
                        for c in 0..logits.ncols() {
                            let (zi, zj) = (logits[[i, c]], logits[[j, c]]);
                            grad[[i, c]] += ds * zj;
                            grad[[j, c]] += ds * zi;
                        }
                    }
                }
                total
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((value, grad))
    }
}
