//! Seeded synthetic EHR-shaped graphs with planted latent conditions.
//!
//! Each patient draws one condition; its visits inherit it. Every code type
//! is split into contiguous condition groups, and within a group a code's
//! affinity decays as `1 / rank^zipf_exponent`. A visit samples its codes
//! without replacement from `w · affinity + (1 - w) · uniform`.
//!
//! RNG streams: one ChaCha8 generator seeded from `seed`, with stream 0 for
//! patient-level draws and stream `1 + v` for visit `v`, so each visit's codes
//! do not depend on how many draws earlier visits made.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{Labels, Task};
use crate::hetgraph::{write_dataset_dir, GraphBuilder, HeteroGraph, Schema};

/// Code types in schema order, with their config field names.
pub const CODE_TYPES: [(&str, &str); 6] = [
    ("D", "diagnoses"),
    ("P", "procedures"),
    ("M", "medications"),
    ("L", "labs"),
    ("B", "microbiology"),
    ("S", "symptoms"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub patients: usize,
    pub visits: usize,
    pub diagnoses: usize,
    pub procedures: usize,
    pub medications: usize,
    pub labs: usize,
    pub microbiology: usize,
    pub symptoms: usize,
    pub mean_diagnoses: f64,
    pub mean_procedures: f64,
    pub mean_medications: f64,
    pub mean_labs: f64,
    pub mean_microbiology: f64,
    pub mean_symptoms: f64,
    pub n_latent_conditions: usize,
    /// Weight of the condition affinity in the sampling mixture.
    pub affinity_weight: f64,
    pub zipf_exponent: f64,
    /// Adds two attribute nodes `G0`, `G1`; every patient links to one.
    pub hub_attribute: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            patients: 465,
            visits: 590,
            diagnoses: 203,
            procedures: 157,
            medications: 304,
            labs: 480,
            microbiology: 258,
            symptoms: 324,
            mean_diagnoses: 11.20,
            mean_procedures: 4.65,
            mean_medications: 23.18,
            mean_labs: 27.55,
            mean_microbiology: 0.94,
            mean_symptoms: 19.06,
            n_latent_conditions: 9,
            affinity_weight: 0.8,
            zipf_exponent: 1.0,
            hub_attribute: false,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn code_counts(&self) -> [usize; 6] {
        [
            self.diagnoses,
            self.procedures,
            self.medications,
            self.labs,
            self.microbiology,
            self.symptoms,
        ]
    }

    pub fn code_means(&self) -> [f64; 6] {
        [
            self.mean_diagnoses,
            self.mean_procedures,
            self.mean_medications,
            self.mean_labs,
            self.mean_microbiology,
            self.mean_symptoms,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let f = |name: &str| format!("generate.{name}");
        if self.patients == 0 {
            return Err(Error::config(f("patients"), "must be positive"));
        }
        if self.visits < self.patients {
            return Err(Error::config(
                f("visits"),
                "every patient needs at least one visit",
            ));
        }
        for ((_, name), (n, mean)) in CODE_TYPES
            .iter()
            .zip(self.code_counts().into_iter().zip(self.code_means()))
        {
            if n == 0 {
                return Err(Error::config(f(name), "must be positive"));
            }
            if !(mean.is_finite() && mean >= 0.0) || mean > n as f64 {
                return Err(Error::config(
                    f(&format!("mean_{name}")),
                    format!("mean {mean} must lie in [0, {n}]"),
                ));
            }
        }
        if self.n_latent_conditions == 0 {
            return Err(Error::config(f("n_latent_conditions"), "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.affinity_weight) {
            return Err(Error::config(f("affinity_weight"), "must lie in [0, 1]"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::config(
                f("zipf_exponent"),
                "must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let mut types = vec!["C", "V"];
        types.extend(CODE_TYPES.iter().map(|(t, _)| *t));
        let mut edges = vec![("C", "V")];
        edges.extend(CODE_TYPES.iter().map(|(t, _)| ("V", *t)));
        if self.hub_attribute {
            types.push("G");
            edges.push(("C", "G"));
        }
        Schema::new(&types, &edges, &["C", "V"]).expect("fixed schema is valid")
    }
}

/// Planted structure behind a generated graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// Condition of every node, by global id; `None` for attribute nodes.
    pub condition: Vec<Option<usize>>,
    /// Affinity of each code within its home condition (0 for humans).
    pub affinity: Vec<f64>,
}

impl PlantedTruth {
    pub fn write_csv(&self, graph: &HeteroGraph, path: &Path) -> Result<()> {
        let mut out = String::from("node_type,node_key,condition,affinity\n");
        for g in 0..graph.n_nodes() {
            let t = graph.schema().type_name(graph.node_type(g));
            let c = self.condition[g].map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{t},{},{c},{:.16e}", graph.key(g), self.affinity[g]);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads the `condition` column back, by global id of `graph`.
    pub fn read_conditions(path: &Path, graph: &HeteroGraph) -> Result<Vec<Option<usize>>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = vec![None; graph.n_nodes()];
        for (i, line) in text.lines().enumerate().skip(1) {
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(perr(
                    "expected node_type,node_key,condition,affinity".into(),
                ));
            }
            let t = graph.schema().require_type(f[0])?;
            let g = graph
                .node_id(t, f[1])
                .ok_or_else(|| perr(format!("unknown node `{}`", f[1])))?;
            if !f[2].is_empty() {
                out[g] = Some(f[2].parse().map_err(|e| perr(format!("{e}")))?);
            }
        }
        Ok(out)
    }
}

/// Home condition of local code `i` among `n` codes split into `c` groups.
pub fn home_condition(i: usize, n: usize, c: usize) -> usize {
    i * c / n
}

/// Normalized in-group affinities of the `n` codes of one type.
fn affinities(n: usize, c: usize, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for cond in 0..c {
        let members: Vec<usize> = (0..n)
            .filter(|&i| home_condition(i, n, c) == cond)
            .collect();
        let w: Vec<f64> = (0..members.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(s))
            .collect();
        let total: f64 = w.iter().sum();
        for (&i, wi) in members.iter().zip(w) {
            out[i] = wi / total;
        }
    }
    out
}

pub fn key(t: &str, i: usize) -> String {
    format!("{t}{i}")
}

/// Generates the graph, the visit → diagnosis labels and the planted truth.
pub fn generate(cfg: &GenConfig) -> Result<(HeteroGraph, Labels, PlantedTruth)> {
    cfg.validate()?;
    let schema = cfg.schema();
    let mut b = GraphBuilder::new(schema.clone());
    let n_cond = cfg.n_latent_conditions;
    let counts = cfg.code_counts();

    for i in 0..cfg.patients {
        b.add_node(0, &key("C", i), &[])?;
    }
    for i in 0..cfg.visits {
        b.add_node(1, &key("V", i), &[])?;
    }
    for (ti, (t, _)) in CODE_TYPES.iter().enumerate() {
        for i in 0..counts[ti] {
            b.add_node(2 + ti, &key(t, i), &[])?;
        }
    }
    let hub_t = schema.type_index("G");
    if let Some(gt) = hub_t {
        b.add_node(gt, "G0", &[])?;
        b.add_node(gt, "G1", &[])?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let patient_cond: Vec<usize> = (0..cfg.patients)
        .map(|_| rng.random_range(0..n_cond))
        .collect();
    // One visit per patient, the rest spread uniformly at random.
    let mut owner: Vec<usize> = (0..cfg.patients).collect();
    owner.extend((cfg.patients..cfg.visits).map(|_| rng.random_range(0..cfg.patients)));
    owner.sort_unstable();
    for (v, &p) in owner.iter().enumerate() {
        b.add_edge(0, p, 1, v)?;
    }
    if let Some(gt) = hub_t {
        for p in 0..cfg.patients {
            b.add_edge(0, p, gt, rng.random_range(0..2))?;
        }
    }

    let aff: Vec<Vec<f64>> = counts
        .iter()
        .map(|&n| affinities(n, n_cond, cfg.zipf_exponent))
        .collect();
    let w = cfg.affinity_weight;
    for (v, &p) in owner.iter().enumerate() {
        let mut vr = ChaCha8Rng::seed_from_u64(cfg.seed);
        vr.set_stream(1 + v as u64);
        let cond = patient_cond[p];
        for (ti, &n) in counts.iter().enumerate() {
            let mean = cfg.code_means()[ti];
            let draw = if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(&mut vr) as usize
            } else {
                0
            };
            let amount = draw.min(n);
            if amount == 0 {
                continue;
            }
            let a = &aff[ti];
            let weight = |i: usize| {
                let home = if home_condition(i, n, n_cond) == cond {
                    a[i]
                } else {
                    0.0
                };
                w * home + (1.0 - w) / n as f64
            };
            let mut picked: Vec<usize> = sample_weighted(&mut vr, n, weight, amount)
                .map_err(|e| Error::config("generate", format!("sampling failed: {e}")))?
                .into_vec();
            picked.sort_unstable();
            for i in picked {
                b.add_edge(1, v, 2 + ti, i)?;
            }
        }
    }
    let graph = b.build();

    let mut condition = vec![None; graph.n_nodes()];
    let mut affinity = vec![0.0; graph.n_nodes()];
    for (p, &c) in patient_cond.iter().enumerate() {
        condition[graph.offset(0) + p] = Some(c);
    }
    for (v, &p) in owner.iter().enumerate() {
        condition[graph.offset(1) + v] = Some(patient_cond[p]);
    }
    for (ti, &n) in counts.iter().enumerate() {
        let off = graph.offset(2 + ti);
        for i in 0..n {
            condition[off + i] = Some(home_condition(i, n, n_cond));
            affinity[off + i] = aff[ti][i];
        }
    }
    let task = synthetic_task(&graph)?;
    let labels = Labels::from_graph(&graph, &task);
    Ok((
        graph,
        labels,
        PlantedTruth {
            condition,
            affinity,
        },
    ))
}

/// Visits predict diagnoses; diagnosis, medication and procedure edges of
/// held-out visits are removed.
pub fn synthetic_task(graph: &HeteroGraph) -> Result<Task> {
    Task::from_names(graph.schema(), "V", "D", Some("C"), &["D", "M", "P"])
}

/// Writes the dataset directory, `labels.csv` and `truth.csv`.
pub fn write_generated(
    graph: &HeteroGraph,
    labels: &Labels,
    truth: &PlantedTruth,
    dir: &Path,
) -> Result<()> {
    write_dataset_dir(graph, dir)?;
    labels.write_csv(graph, &synthetic_task(graph)?, &dir.join("labels.csv"))?;
    truth.write_csv(graph, &dir.join("truth.csv"))
}
