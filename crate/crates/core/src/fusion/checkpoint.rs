//! Plain-text checkpoints.
//!
//! ```text
//! # simgraph checkpoint v1
//! variant=agg_attention
//! ...                      (config echo, one key=value per line)
//! block head.weight 16 203
//! 1.2345678901234567e-2 ... (one line per row, 17 significant digits)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{Activation, Aggregator, ModelConfig, ModelParams, Variant};
use crate::error::{Error, Result};

const HEADER: &str = "# simgraph checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Extra `key=value` lines echoed after the model config (paths,
    /// normalization, feature mode, ...), in order.
    pub extra: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "variant={}", c.variant.as_str());
        let _ = writeln!(out, "aggregator={}", c.aggregator.as_str());
        let _ = writeln!(out, "hidden_dim={}", c.hidden_dim);
        let _ = writeln!(
            out,
            "attention_activation={}",
            c.attention_activation.as_str()
        );
        let _ = writeln!(out, "gnn_activation={}", c.gnn_activation.as_str());
        let _ = writeln!(out, "leaky_slope={:?}", c.leaky_slope);
        let _ = writeln!(out, "label_dim={}", c.label_dim);
        let _ = writeln!(out, "seed={}", c.seed);
        let _ = writeln!(out, "k={}", self.params.k());
        let _ = writeln!(out, "feature_dim={}", self.params.feature_dim());
        for (k, v) in &self.extra {
            let _ = writeln!(out, "{k}={v}");
        }
        for (name, b) in self.params.blocks() {
            let _ = writeln!(out, "block {name} {} {}", b.nrows(), b.ncols());
            for row in b.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&HEADER) {
            return Err(perr(1, format!("expected `{HEADER}`")));
        }
        let mut config = ModelConfig::default();
        let mut k = None;
        let mut feature_dim = None;
        let mut extra = Vec::new();
        let mut blocks: Vec<(String, Array2<f64>)> = Vec::new();
        let mut i = 1;
        while i < lines.len() {
            let no = i + 1;
            let line = lines[i];
            i += 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("block ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(perr(no, "expected `block <name> <rows> <cols>`".into()));
                }
                let rows: usize = f[1].parse().map_err(|e| perr(no, format!("{e}")))?;
                let cols: usize = f[2].parse().map_err(|e| perr(no, format!("{e}")))?;
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let row_no = i + 1;
                    let row = lines.get(i).ok_or_else(|| {
                        perr(row_no, format!("block {} truncated at row {r}", f[0]))
                    })?;
                    i += 1;
                    let before = data.len();
                    for tok in row.split_whitespace() {
                        data.push(
                            tok.parse::<f64>()
                                .map_err(|e| perr(row_no, format!("{e}")))?,
                        );
                    }
                    if data.len() - before != cols {
                        return Err(perr(row_no, format!("expected {cols} values")));
                    }
                }
                let arr = Array2::from_shape_vec((rows, cols), data).expect("shape checked");
                blocks.push((f[0].to_string(), arr));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(no, format!("expected key=value, got `{line}`")))?;
            let bad = |what: &str| perr(no, format!("invalid {what} `{value}`"));
            match key {
                "variant" => {
                    config.variant = Variant::parse(value).ok_or_else(|| bad("variant"))?
                }
                "aggregator" => {
                    config.aggregator = Aggregator::parse(value).ok_or_else(|| bad("aggregator"))?
                }
                "hidden_dim" => config.hidden_dim = value.parse().map_err(|_| bad("hidden_dim"))?,
                "attention_activation" => {
                    config.attention_activation =
                        Activation::parse(value).ok_or_else(|| bad("activation"))?
                }
                "gnn_activation" => {
                    config.gnn_activation =
                        Activation::parse(value).ok_or_else(|| bad("activation"))?
                }
                "leaky_slope" => {
                    config.leaky_slope = value.parse().map_err(|_| bad("leaky_slope"))?
                }
                "label_dim" => config.label_dim = value.parse().map_err(|_| bad("label_dim"))?,
                "seed" => config.seed = value.parse().map_err(|_| bad("seed"))?,
                "k" => k = Some(value.parse::<usize>().map_err(|_| bad("k"))?),
                "feature_dim" => {
                    feature_dim = Some(value.parse::<usize>().map_err(|_| bad("feature_dim"))?)
                }
                _ => extra.push((key.to_string(), value.to_string())),
            }
        }
        let (k, feature_dim) = match (k, feature_dim) {
            (Some(k), Some(d)) => (k, d),
            _ => return Err(perr(1, "checkpoint lacks k or feature_dim".into())),
        };
        let mut params = ModelParams::init(&config, k, feature_dim)?;
        let expected = params.block_names();
        let got: Vec<&String> = blocks.iter().map(|(n, _)| n).collect();
        if got.len() != expected.len() || got.iter().zip(&expected).any(|(a, b)| *a != b) {
            return Err(perr(
                1,
                format!("blocks {got:?} do not match model layout {expected:?}"),
            ));
        }
        for ((name, dst), (_, src)) in params.blocks_mut().into_iter().zip(blocks) {
            if dst.dim() != src.dim() {
                return Err(perr(
                    1,
                    format!(
                        "block {name} is {:?}, model expects {:?}",
                        src.dim(),
                        dst.dim()
                    ),
                ));
            }
            *dst = src;
        }
        params.check_finite()?;
        Ok(Checkpoint {
            config,
            params,
            extra,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let config = ModelConfig {
            label_dim: 3,
            hidden_dim: 4,
            seed: 11,
            ..ModelConfig::default()
        };
        let mut params = ModelParams::init(&config, 2, 5).unwrap();
        params.w[[0, 1]] = 0.1 + 0.2;
        params.head_bias[[0, 2]] = -1.0 / 3.0;
        let ck = Checkpoint {
            config,
            params,
            extra: vec![("paths".into(), "V-L,V-S".into())],
        };
        let text = ck.to_text();
        let back = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.extra("paths"), Some("V-L,V-S"));
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn truncated_block_is_rejected() {
        let config = ModelConfig {
            label_dim: 2,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 1, 2).unwrap();
        let text = Checkpoint {
            config,
            params,
            extra: vec![],
        }
        .to_text();
        let cut: String = text.lines().take(14).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&cut, Path::new("mem")).is_err());
    }
}
