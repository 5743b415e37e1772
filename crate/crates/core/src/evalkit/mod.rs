//! Leakage-safe splitting, precision@k at visit and patient level, metric
//! reports, embedding export and the experiment harness.

mod embed;
pub mod experiment;
mod report;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embed::{category_cosines, export_embeddings, mean_pairwise_cosine, smoothing_probe};
pub use report::{Level, MetricReport};

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, Schema};

/// Which node types play which role in the prediction task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    /// Nodes whose labels are predicted (visits).
    pub target_type: usize,
    /// Nodes that form the label space (diagnoses).
    pub label_type: usize,
    /// Groups targets for patient-level scores.
    pub patient_type: Option<usize>,
    /// Edge types from val/test targets removed by the split.
    pub removed_types: Vec<usize>,
}

impl Task {
    pub fn from_names<S: AsRef<str>>(
        schema: &Schema,
        target: &str,
        label: &str,
        patient: Option<&str>,
        removed: &[S],
    ) -> Result<Self> {
        let ty = |field: &str, name: &str| {
            schema
                .type_index(name)
                .ok_or_else(|| Error::config(field, format!("unknown node type `{name}`")))
        };
        let target_type = ty("preprocess.target_type", target)?;
        let label_type = ty("preprocess.label_type", label)?;
        if !schema.allows(target_type, label_type) {
            return Err(Error::config(
                "preprocess.label_type",
                format!("schema has no {target}-{label} edge type"),
            ));
        }
        let patient_type = match patient {
            Some(p) if !p.is_empty() => Some(ty("preprocess.patient_type", p)?),
            _ => None,
        };
        let removed_types = removed
            .iter()
            .map(|r| ty("preprocess.removed_types", r.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Task {
            target_type,
            label_type,
            patient_type,
            removed_types,
        })
    }
}

/// Label sets of every target node, as local ids of the label type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub n_labels: usize,
    /// Indexed by the target's local id; sorted.
    pub per_target: Vec<Vec<usize>>,
}

impl Labels {
    /// Target-label edges of `graph`.
    pub fn from_graph(graph: &HeteroGraph, task: &Task) -> Self {
        let adj = graph.adjacency(task.target_type, task.label_type);
        Labels {
            n_labels: graph.n_of_type(task.label_type),
            per_target: (0..adj.rows()).map(|i| adj.row(i).0.to_vec()).collect(),
        }
    }

    pub fn write_csv(&self, graph: &HeteroGraph, task: &Task, path: &Path) -> Result<()> {
        let mut out = String::from("target_key,label_key\n");
        let toff = graph.offset(task.target_type);
        let loff = graph.offset(task.label_type);
        for (i, labels) in self.per_target.iter().enumerate() {
            for &l in labels {
                let _ = writeln!(out, "{},{}", graph.key(toff + i), graph.key(loff + l));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, graph: &HeteroGraph, task: &Task) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut per_target = vec![BTreeSet::new(); graph.n_of_type(task.target_type)];
        for (i, line) in text.lines().enumerate() {
            let no = i + 1;
            if (no == 1 && line.trim() == "target_key,label_key") || line.trim().is_empty() {
                continue;
            }
            let (t, l) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: no,
                msg: "expected `target_key,label_key`".into(),
            })?;
            let unknown = |key: &str| Error::UnknownNode {
                path: path.to_path_buf(),
                line: no,
                key: key.to_string(),
            };
            let ti = graph
                .node_id(task.target_type, t.trim())
                .ok_or_else(|| unknown(t))?;
            let li = graph
                .node_id(task.label_type, l.trim())
                .ok_or_else(|| unknown(l))?;
            per_target[ti - graph.offset(task.target_type)]
                .insert(li - graph.offset(task.label_type));
        }
        Ok(Labels {
            n_labels: graph.n_of_type(task.label_type),
            per_target: per_target
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
        })
    }

    /// N × L 0/1 matrix with the label rows of `targets` (global ids) set.
    pub fn matrix(&self, graph: &HeteroGraph, task: &Task, targets: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((graph.n_nodes(), self.n_labels));
        let off = graph.offset(task.target_type);
        for &g in targets {
            for &l in &self.per_target[g - off] {
                m[[g, l]] = 1.0;
            }
        }
        m
    }

    pub fn truth_of(&self, graph: &HeteroGraph, task: &Task, targets: &[usize]) -> Vec<Vec<usize>> {
        let off = graph.offset(task.target_type);
        targets
            .iter()
            .map(|&g| self.per_target[g - off].clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Assignment of labeled targets to train/val/test and the edges removed
/// to keep val/test labels out of the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// Per target local id; `None` for targets without labels.
    pub parts: Vec<Option<Part>>,
    /// Removed edges as global id pairs `(target, other)`.
    pub removed: Vec<(usize, usize)>,
}

impl SplitPlan {
    /// Global ids of the targets in `part`, ascending.
    pub fn nodes(&self, graph: &HeteroGraph, task: &Task, part: Part) -> Vec<usize> {
        let off = graph.offset(task.target_type);
        self.parts
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == Some(part))
            .map(|(i, _)| off + i)
            .collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |p| self.parts.iter().filter(|x| **x == Some(p)).count();
        (c(Part::Train), c(Part::Val), c(Part::Test))
    }

    pub fn write_csv(&self, graph: &HeteroGraph, task: &Task, path: &Path) -> Result<()> {
        let mut out = String::from("key,part\n");
        let off = graph.offset(task.target_type);
        for (i, p) in self.parts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{}",
                graph.key(off + i),
                p.map_or("unlabeled", Part::as_str)
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, graph: &HeteroGraph, task: &Task) -> Result<Vec<Option<Part>>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut parts = vec![None; graph.n_of_type(task.target_type)];
        for (i, line) in text.lines().enumerate().skip(1) {
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, p) = line
                .split_once(',')
                .ok_or_else(|| perr("expected `key,part`".into()))?;
            let g = graph
                .node_id(task.target_type, k)
                .ok_or_else(|| perr(format!("unknown target `{k}`")))?;
            parts[g - graph.offset(task.target_type)] = match p {
                "train" => Some(Part::Train),
                "val" => Some(Part::Val),
                "test" => Some(Part::Test),
                "unlabeled" => None,
                _ => return Err(perr(format!("unknown part `{p}`"))),
            };
        }
        Ok(parts)
    }

    pub fn write_removed_csv(&self, graph: &HeteroGraph, path: &Path) -> Result<()> {
        let s = graph.schema();
        let mut out = String::from("type_a,key_a,type_b,key_b\n");
        for &(u, v) in &self.removed {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.type_name(graph.node_type(u)),
                graph.key(u),
                s.type_name(graph.node_type(v)),
                graph.key(v)
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Seeded 7:1:2 split of the labeled targets. The returned graph lacks every
/// edge between a val/test target and a node of a removed type.
pub fn split(
    graph: &HeteroGraph,
    labels: &Labels,
    task: &Task,
    seed: u64,
) -> (SplitPlan, HeteroGraph) {
    let mut labeled: Vec<usize> = (0..labels.per_target.len())
        .filter(|&i| !labels.per_target[i].is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);
    let n = labeled.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let mut parts = vec![None; labels.per_target.len()];
    for (r, &i) in labeled.iter().enumerate() {
        parts[i] = Some(if r < n_train {
            Part::Train
        } else if r < n_train + n_val {
            Part::Val
        } else {
            Part::Test
        });
    }
    apply_split(graph, task, parts)
}

/// Removes the held-out edges for an existing part assignment, e.g. one
/// read back with [`SplitPlan::read_csv`].
pub fn apply_split(
    graph: &HeteroGraph,
    task: &Task,
    parts: Vec<Option<Part>>,
) -> (SplitPlan, HeteroGraph) {
    let off = graph.offset(task.target_type);
    let held_out = |g: usize| {
        graph.node_type(g) == task.target_type
            && matches!(parts[g - off], Some(Part::Val | Part::Test))
    };
    let mut removed = Vec::new();
    for t in 0..parts.len() {
        let g = off + t;
        if !held_out(g) {
            continue;
        }
        for &rt in &task.removed_types {
            for nb in graph.neighbors(g, rt) {
                removed.push((g, nb));
            }
        }
    }
    let drop: BTreeSet<(usize, usize)> = removed
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    let pruned = graph.filter_edges(|u, v| !drop.contains(&(u, v)));
    (SplitPlan { parts, removed }, pruned)
}

/// Number of edges in `graph` between held-out targets and removed types.
pub fn count_leaks(graph: &HeteroGraph, task: &Task, plan: &SplitPlan) -> usize {
    let off = graph.offset(task.target_type);
    plan.parts
        .iter()
        .enumerate()
        .filter(|(_, p)| matches!(p, Some(Part::Val | Part::Test)))
        .map(|(i, _)| {
            task.removed_types
                .iter()
                .map(|&rt| graph.neighbors(off + i, rt).len())
                .sum::<usize>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// `|top-k ∩ truth| / min(k, |truth|)`
    #[default]
    Capped,
    /// `|top-k ∩ truth| / k`
    Plain,
}

/// Mean precision over nodes with a nonempty truth set. `ranked[i]` is the
/// predicted label order of node `i`, `truth[i]` its sorted true labels.
/// Returns NaN when no node has labels.
pub fn precision_at_k(
    ranked: &[Vec<usize>],
    truth: &[Vec<usize>],
    k: usize,
    denom: Denominator,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut skipped = 0usize;
    for (pred, t) in ranked.iter().zip(truth) {
        if t.is_empty() {
            skipped += 1;
            continue;
        }
        let hits = pred
            .iter()
            .take(k)
            .filter(|l| t.binary_search(l).is_ok())
            .count();
        let d = match denom {
            Denominator::Capped => k.min(t.len()),
            Denominator::Plain => k,
        };
        total += hits as f64 / d as f64;
        n += 1;
    }
    if skipped > 0 {
        log::warn!("precision@{k}: {skipped} node(s) with empty truth excluded");
    }
    if n == 0 {
        f64::NAN
    } else {
        total / n as f64
    }
}

/// Expected precision@k of a uniformly random ranking over `n_labels`.
/// With the capped denominator a node with `|T|` labels scores
/// `k |T| / (L min(k, |T|)) = max(k, |T|) / L` in expectation.
pub fn random_baseline(truth: &[Vec<usize>], k: usize, n_labels: usize, denom: Denominator) -> f64 {
    let vals: Vec<f64> = truth
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| match denom {
            Denominator::Capped => k.max(t.len()) as f64 / n_labels as f64,
            Denominator::Plain => t.len() as f64 / n_labels as f64,
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Standard deviation of the per-node precision under random ranking, for
/// a sample of `truth` (hypergeometric hit counts, independent nodes).
pub fn random_baseline_std(
    truth: &[Vec<usize>],
    k: usize,
    n_labels: usize,
    denom: Denominator,
) -> f64 {
    let l = n_labels as f64;
    let kk = k.min(n_labels) as f64;
    let mut var = 0.0;
    let mut n = 0.0;
    for t in truth.iter().filter(|t| !t.is_empty()) {
        let tt = t.len() as f64;
        let hv = if l > 1.0 {
            kk * (tt / l) * (1.0 - tt / l) * (l - kk) / (l - 1.0)
        } else {
            0.0
        };
        let d = match denom {
            Denominator::Capped => k.min(t.len()) as f64,
            Denominator::Plain => k as f64,
        };
        var += hv / (d * d);
        n += 1.0;
    }
    (var).sqrt() / n
}

/// A patient whose visits are all in the evaluated part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientGroup {
    pub patient: usize,
    pub visits: Vec<usize>,
    /// Labels present on every visit.
    pub truth: Vec<usize>,
}

/// Patients all of whose targets are in `part`. Truth is the intersection
/// of the visit truths.
pub fn patient_groups(
    graph: &HeteroGraph,
    labels: &Labels,
    task: &Task,
    parts: &[Option<Part>],
    part: Part,
) -> Vec<PatientGroup> {
    let Some(pt) = task.patient_type else {
        return Vec::new();
    };
    if !graph.schema().allows(pt, task.target_type) {
        return Vec::new();
    }
    let off = graph.offset(task.target_type);
    graph
        .type_range(pt)
        .filter_map(|p| {
            let visits = graph.neighbors(p, task.target_type);
            if visits.is_empty() || visits.iter().any(|&v| parts[v - off] != Some(part)) {
                return None;
            }
            let mut truth: BTreeSet<usize> =
                labels.per_target[visits[0] - off].iter().copied().collect();
            for &v in &visits[1..] {
                let s: BTreeSet<usize> = labels.per_target[v - off].iter().copied().collect();
                truth = truth.intersection(&s).copied().collect();
            }
            Some(PatientGroup {
                patient: p,
                visits,
                truth: truth.into_iter().collect(),
            })
        })
        .collect()
}

/// Mean of the visit logits of each group, one row per group.
pub fn patient_logits(logits: &Array2<f64>, groups: &[PatientGroup]) -> Array2<f64> {
    let mut out = Array2::zeros((groups.len(), logits.ncols()));
    for (r, g) in groups.iter().enumerate() {
        let mut row = out.row_mut(r);
        for &v in &g.visits {
            row += &logits.row(v);
        }
        row /= g.visits.len() as f64;
    }
    out
}

/// Visit- and patient-level precision for each `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub ks: Vec<usize>,
    pub visit: Vec<f64>,
    pub patient: Vec<f64>,
    pub n_visits: usize,
    pub n_patients: usize,
}

/// Scores `logits` on the targets of `part`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    logits: &Array2<f64>,
    graph: &HeteroGraph,
    labels: &Labels,
    task: &Task,
    plan: &SplitPlan,
    part: Part,
    ks: &[usize],
    denom: Denominator,
) -> Scores {
    let nodes = plan.nodes(graph, task, part);
    let truth = labels.truth_of(graph, task, &nodes);
    let groups = patient_groups(graph, labels, task, &plan.parts, part);
    let plog = patient_logits(logits, &groups);
    let ptruth: Vec<Vec<usize>> = groups.iter().map(|g| g.truth.clone()).collect();
    let all_rows: Vec<usize> = (0..groups.len()).collect();
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let ranked = crate::fusion::predict_topk(logits, kmax, &nodes);
    let pranked = crate::fusion::predict_topk(&plog, kmax, &all_rows);
    Scores {
        ks: ks.to_vec(),
        visit: ks
            .iter()
            .map(|&k| precision_at_k(&ranked, &truth, k, denom))
            .collect(),
        patient: ks
            .iter()
            .map(|&k| precision_at_k(&pranked, &ptruth, k, denom))
            .collect(),
        n_visits: nodes.len(),
        n_patients: ptruth.iter().filter(|t| !t.is_empty()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::GraphBuilder;

    fn toy() -> (HeteroGraph, Task) {
        let schema = Schema::new(
            &["C", "V", "D", "M", "P", "L"],
            &[("C", "V"), ("V", "D"), ("V", "M"), ("V", "P"), ("V", "L")],
            &["C", "V"],
        )
        .unwrap();
        let mut b = GraphBuilder::new(schema.clone());
        for (t, n) in [(0, 1), (1, 10), (2, 4), (3, 3), (4, 2), (5, 2)] {
            for i in 0..n {
                b.add_node(t, &format!("{}{i}", schema.type_name(t)), &[])
                    .unwrap();
            }
        }
        for v in 0..10 {
            b.add_edge(0, 0, 1, v).unwrap();
            for d in 0..3 {
                b.add_edge(1, v, 2, (v + d) % 4).unwrap();
            }
            b.add_edge(1, v, 3, v % 3).unwrap();
            b.add_edge(1, v, 3, (v + 1) % 3).unwrap();
            b.add_edge(1, v, 4, v % 2).unwrap();
            b.add_edge(1, v, 5, 0).unwrap();
        }
        let g = b.build();
        let task = Task::from_names(g.schema(), "V", "D", Some("C"), &["D", "M", "P"]).unwrap();
        (g, task)
    }

    #[test]
    fn split_removes_six_edges_per_heldout_visit() {
        let (g, task) = toy();
        let labels = Labels::from_graph(&g, &task);
        let (plan, pruned) = split(&g, &labels, &task, 1);
        assert_eq!(plan.counts(), (7, 1, 2));
        assert_eq!(plan.removed.len(), 3 * 6);
        assert_eq!(count_leaks(&pruned, &task, &plan), 0);
        assert_eq!(count_leaks(&g, &task, &plan), 18);
        // Labs stay attached.
        for v in plan.nodes(&g, &task, Part::Test) {
            assert_eq!(pruned.neighbors(v, 5).len(), 1);
        }
    }

    #[test]
    fn precision_cases() {
        let truth = vec![(0..10).collect::<Vec<_>>()];
        let perfect = vec![(0..10).collect::<Vec<_>>()];
        assert_eq!(
            precision_at_k(&perfect, &truth, 5, Denominator::Capped),
            1.0
        );
        let wrong = vec![(10..20).collect::<Vec<_>>()];
        assert_eq!(precision_at_k(&wrong, &truth, 5, Denominator::Capped), 0.0);
        let short = vec![vec![3]];
        assert_eq!(
            precision_at_k(&[vec![3, 1, 2, 4, 5]], &short, 5, Denominator::Capped),
            1.0
        );
        assert_eq!(
            precision_at_k(&[vec![3, 1, 2, 4, 5]], &short, 5, Denominator::Plain),
            0.2
        );
    }

    #[test]
    fn patient_truth_is_intersection() {
        let (g, task) = toy();
        let labels = Labels::from_graph(&g, &task);
        let parts = vec![Some(Part::Test); 10];
        let groups = patient_groups(&g, &labels, &task, &parts, Part::Test);
        assert_eq!(groups.len(), 1);
        assert!(groups[0].truth.is_empty());
        let mut parts2 = parts.clone();
        parts2[3] = Some(Part::Train);
        assert!(patient_groups(&g, &labels, &task, &parts2, Part::Test).is_empty());
    }

    #[test]
    fn labels_round_trip() {
        let (g, task) = toy();
        let labels = Labels::from_graph(&g, &task);
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("labels.csv");
        labels.write_csv(&g, &task, &p).unwrap();
        assert_eq!(Labels::read_csv(&p, &g, &task).unwrap(), labels);
    }

    #[test]
    fn baseline_is_exact_expectation() {
        // |T| = 2, L = 4, k = 1: a hit has probability 1/2 and the capped
        // denominator is 1.
        assert_eq!(
            random_baseline(&[vec![0, 1]], 1, 4, Denominator::Capped),
            0.5
        );
        // k = 3: E[hits] = 3/2 over min(3, 2) = 2.
        assert_eq!(
            random_baseline(&[vec![0, 1]], 3, 4, Denominator::Capped),
            0.75
        );
    }
}
