use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalkit::Denominator;
use crate::exec::Exec;
use crate::fusion::{Aggregator, ModelConfig, Variant};
use crate::hetgraph::FeatureMode;
use crate::metapath::Normalization;
use crate::synthgen::GenConfig;
use crate::training::TrainConfig;

/// Every key of the run config, shown by `--help`.
pub const CONFIG_HELP: &str = "\
CONFIG FILE (TOML; unknown keys are errors; relative paths are resolved
against the directory of the config file)

  output_dir = \"out\"          directory for every artifact
  parallel = true             data-parallel kernels (needs the `parallel` feature)

  [data]
  dir = <path>                dataset directory (schema.toml, nodes_<T>.csv,
                              edges_<A>_<B>.csv); default <output_dir>/data,
                              where `generate` writes
  labels = <path>             target,label CSV; default <dir>/labels.csv if it
                              exists, else the target-label edges
  truth = <path>              planted categories for the unsupervised loss;
                              default <dir>/truth.csv

  [generate]                  synthetic dataset (`generate` only)
  patients, visits, diagnoses, procedures, medications, labs,
  microbiology, symptoms      node counts (465 590 203 157 304 480 258 324)
  mean_diagnoses, mean_procedures, mean_medications, mean_labs,
  mean_microbiology, mean_symptoms
                              Poisson means per visit
                              (11.20 4.65 23.18 27.55 0.94 19.06)
  n_latent_conditions = 9     planted categories
  affinity_weight = 0.8       weight of the condition affinity vs uniform
  zipf_exponent = 1.0         skew of the affinity within a condition
  hub_attribute = false       adds hub nodes G0, G1 linked to all patients
  seed = 7

  [task]
  target = \"V\"                node type whose labels are predicted
  label = \"D\"                 node type forming the label space
  patient = \"C\"               groups targets for patient-level scores
                              (omit for visit level only)
  removed = [\"D\", \"M\", \"P\"]   edge types dropped from val/test targets

  [preprocess]
  paths = [\"V-L\", ...]        meta-paths, type names joined by '-' (required)
  normalization = \"sps\"       sps | raw_pathcount
  features = \"onehot-code\"    onehot-code | onehot-node | onehot-type | provided

  [split]
  seed = 7                    seed of the 7:1:2 split

  [model]
  variant = \"agg_attention\"   sum | attention | agg_attention
  aggregator = \"mean\"         mean | concat
  hidden_dim = 16
  attention_activation = \"leaky_relu\"   relu | leaky_relu | tanh | identity
  gnn_activation = \"relu\"
  leaky_slope = 0.2
  label_dim = 0               0 takes the label count from the data
  seed = 0                    parameter initialisation seed

  [train]
  epochs = 200
  learning_rate = 0.01
  beta1 = 0.9
  beta2 = 0.999
  eps = 1e-8
  weight_decay = 5e-4         L2 on the per-path GNN and head weights
  patience = 30               epochs without a better val precision@10
  loss = \"multilabel_bce\"     multilabel_bce | unsup_dotproduct
  grad_check = false          finite-difference check before training
  grad_check_tolerance = 1e-4

  [eval]
  ks = [5, 10, 15, 20]
  denominator = \"capped\"      capped (min(k, |truth|)) | plain (k)

  [infer]
  batch = [<path>, ...]       edge CSVs linking new human nodes to known codes
  top_k = 10                  predictions written per new node

  [unsup]
  node_type = \"D\"             nodes trained with unsup_dotproduct

  [embed]
  node_type = \"D\"             node type exported by `embed`

  [ablation]
  repeats = 5                 split and model seeds seed, seed+1, ...
  [[ablation.models]]         one table per compared model; unset keys
  name = \"hsgnn\"              fall back to [model] and [preprocess]
  variant = \"agg_attention\"
  aggregator = \"mean\"
  normalization = \"sps\"
";

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Hash of the config as written, before path resolution, so moving a
    /// checkout does not change it.
    #[serde(skip)]
    written_sha256: Option<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub parallel: bool,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub generate: GenConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub unsup: UnsupConfig,
    #[serde(default)]
    pub embed: EmbedConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub target: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient: Option<String>,
    pub removed: Vec<String>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            target: "V".into(),
            label: "D".into(),
            patient: Some("C".into()),
            removed: vec!["D".into(), "M".into(), "P".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub paths: Vec<String>,
    pub normalization: Normalization,
    pub features: FeatureMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            paths: Vec::new(),
            normalization: Normalization::Sps,
            features: FeatureMode::OnehotCode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub denominator: Denominator,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 10, 15, 20],
            denominator: Denominator::Capped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub batch: Vec<PathBuf>,
    pub top_k: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            batch: Vec::new(),
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsupConfig {
    pub node_type: String,
}

impl Default for UnsupConfig {
    fn default() -> Self {
        UnsupConfig {
            node_type: "D".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub node_type: String,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            node_type: "D".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub repeats: usize,
    pub models: Vec<AblationModel>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            repeats: 5,
            models: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationModel {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<Aggregator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.written_sha256 = Some(cfg.sha256());
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        resolve(&base, &mut cfg.output_dir);
        for p in [&mut cfg.data.dir, &mut cfg.data.labels, &mut cfg.data.truth]
            .into_iter()
            .flatten()
        {
            resolve(&base, p);
        }
        for p in &mut cfg.infer.batch {
            resolve(&base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generate.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::config("eval.ks", "needs at least one positive k"));
        }
        if self.infer.top_k == 0 {
            return Err(Error::config("infer.top_k", "must be positive"));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::default()
        } else {
            Exec::Sequential
        }
    }

    /// Canonical TOML of the parsed config; equal configs give equal text
    /// regardless of key order, comments or whitespace in the file.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn sha256(&self) -> String {
        if let Some(h) = &self.written_sha256 {
            return h.clone();
        }
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.split.seed, 7);
        assert_eq!(cfg.task.removed, ["D", "M", "P"]);
        let err = RunConfig::parse("[train]\nepoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        assert!(RunConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = RunConfig::parse("[split]\nseed = 3\n[train]\nepochs = 5\n").unwrap();
        let b =
            RunConfig::parse("# comment\n[train]\nepochs   = 5\n\n[split]\nseed = 3\n").unwrap();
        assert_eq!(a.sha256(), b.sha256());
        let c = RunConfig::parse("[split]\nseed = 4\n[train]\nepochs = 5\n").unwrap();
        assert_ne!(a.sha256(), c.sha256());
    }

    #[test]
    fn canonical_round_trips() {
        let cfg = RunConfig::parse(
            "[preprocess]\npaths = [\"V-L\"]\n[[ablation.models]]\nname = \"simi\"\nnormalization = \"raw_pathcount\"\n",
        )
        .unwrap();
        assert_eq!(RunConfig::parse(&cfg.canonical()).unwrap(), cfg);
    }

    #[test]
    fn invalid_generator_field_is_named() {
        let err = RunConfig::parse("[generate]\nmean_labs = 1e9\n").unwrap_err();
        assert!(err.to_string().contains("generate.mean_labs"), "{err}");
    }
}
