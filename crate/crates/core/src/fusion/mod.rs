//! Fusion of the K similarity subgraphs into one learned graph `A_meta`,
//! followed by a one-layer GCN head.
//!
//! Everything is evaluated on the union support of the subgraphs; the dense
//! K × N × N attention tensor is never built. Heads over the raw features
//! project first (`Â (F W) + b`) because `F` is sparse and usually wide; the
//! aggregated variant propagates first (`(Â F_meta) W + b`).

mod activation;
pub mod checkpoint;
mod params;
mod propagate;

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

pub use activation::Activation;
pub(crate) use params::softmax;
pub use params::{Aggregator, ModelConfig, ModelParams, Variant};
pub use propagate::{Pattern, Propagator};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hetgraph::FeatureMatrix;
use crate::metapath::SimilaritySubgraph;
use crate::sparse::Csr;

/// The K subgraphs laid out on their union support.
#[derive(Debug, Clone)]
pub struct SubgraphStack {
    pattern: Arc<Pattern>,
    k: usize,
    /// `stacked[e * k + kk]` is `A_kk` at support entry `e`.
    stacked: Vec<f64>,
    branches: Vec<Propagator>,
}

impl SubgraphStack {
    pub fn new(subgraphs: &[SimilaritySubgraph]) -> Result<Self> {
        let mats: Vec<Csr<f64>> = subgraphs.iter().map(|s| s.adjacency()).collect();
        Self::from_adjacencies(&mats)
    }

    /// `mats` are the model-facing symmetric N × N adjacencies.
    pub fn from_adjacencies(mats: &[Csr<f64>]) -> Result<Self> {
        let k = mats.len();
        if k == 0 {
            return Err(Error::config(
                "preprocess.paths",
                "at least one meta-path is required",
            ));
        }
        let n = mats[0].rows();
        for m in mats {
            if m.rows() != n || m.cols() != n {
                return Err(Error::Dimension(format!(
                    "subgraph is {}x{}, expected {n}x{n}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let refs: Vec<&Csr<f64>> = mats.iter().collect();
        let pattern = Pattern::union(n, &refs);
        let columns: Vec<Vec<f64>> = mats.iter().map(|m| pattern.gather(m)).collect();
        let mut stacked = vec![0.0; pattern.nnz() * k];
        for (kk, col) in columns.iter().enumerate() {
            for (e, &v) in col.iter().enumerate() {
                stacked[e * k + kk] = v;
            }
        }
        let branches = columns
            .iter()
            .map(|c| Propagator::new(&pattern, c))
            .collect();
        Ok(SubgraphStack {
            pattern: Arc::new(pattern),
            k,
            stacked,
            branches,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    /// The K values at support entry `e`.
    pub fn entry(&self, e: usize) -> &[f64] {
        &self.stacked[e * self.k..(e + 1) * self.k]
    }

    pub fn column(&self, kk: usize) -> Vec<f64> {
        (0..self.pattern.nnz())
            .map(|e| self.stacked[e * self.k + kk])
            .collect()
    }

    pub(crate) fn branch(&self, kk: usize) -> &Propagator {
        &self.branches[kk]
    }
}

/// Learned `A_meta` on the fixed union support.
#[derive(Debug, Clone)]
pub struct FusedGraph {
    pub(crate) pattern: Arc<Pattern>,
    pub(crate) values: Vec<f64>,
}

impl FusedGraph {
    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sorted `(i, j)` support pairs.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let rows = self.pattern.entry_rows();
        rows.into_iter()
            .enumerate()
            .map(|(e, i)| (i, self.pattern.col(e)))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.pattern.row_range(i);
        match self.pattern.indices[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_csr(&self) -> Csr<f64> {
        self.pattern.to_csr(&self.values)
    }
}

/// `F_meta`: the raw input features for the sum and attention variants, the
/// aggregated per-path GNN output otherwise.
#[derive(Debug, Clone)]
pub enum MetaFeatures<'a> {
    Input(&'a FeatureMatrix),
    Dense(Array2<f64>),
}

impl MetaFeatures<'_> {
    pub fn rows(&self) -> usize {
        match self {
            MetaFeatures::Input(f) => f.rows(),
            MetaFeatures::Dense(d) => d.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MetaFeatures::Input(f) => f.cols(),
            MetaFeatures::Dense(d) => d.ncols(),
        }
    }

    /// `F_meta · W`
    pub fn project(&self, w: &Array2<f64>, exec: Exec) -> Array2<f64> {
        match self {
            MetaFeatures::Input(f) => f.project(w, exec),
            MetaFeatures::Dense(d) => d.dot(w),
        }
    }

    /// `F_metaᵀ · G`
    pub fn project_transpose(&self, g: &Array2<f64>, exec: Exec) -> Array2<f64> {
        match self {
            MetaFeatures::Input(f) => f.project_transpose(g, exec),
            MetaFeatures::Dense(d) => d.t().dot(g),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            MetaFeatures::Input(f) => f.to_dense(),
            MetaFeatures::Dense(d) => d.clone(),
        }
    }
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// One GCN-style branch: `σ(Â_k F W_k)` with unit self-loops.
pub fn meta_gnn_forward(
    features: &FeatureMatrix,
    subgraph: &SimilaritySubgraph,
    weight: &Array2<f64>,
    activation: Activation,
    slope: f64,
    exec: Exec,
) -> Result<Array2<f64>> {
    if weight.nrows() != features.cols() || subgraph.n() != features.rows() {
        return Err(Error::Dimension(format!(
            "features {}x{}, weight {}x{}, subgraph N={}",
            features.rows(),
            features.cols(),
            weight.nrows(),
            weight.ncols(),
            subgraph.n()
        )));
    }
    let adj = subgraph.adjacency();
    let pattern = Pattern::from_csr(&adj);
    let prop = Propagator::new(&pattern, &pattern.gather(&adj));
    let p = prop.apply(&pattern, &features.project(weight, exec), exec);
    let out = p.mapv(|x| activation.apply(x, slope));
    check_finite(&out, "meta-path GNN output")?;
    Ok(out)
}

/// Mean or column-block concatenation of the per-path features.
pub fn aggregate_features(parts: &[Array2<f64>], aggregator: Aggregator) -> Result<Array2<f64>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dimension("no per-path features to aggregate".into()))?;
    let (n, h) = first.dim();
    for p in parts {
        if p.nrows() != n || (aggregator == Aggregator::Mean && p.ncols() != h) {
            return Err(Error::Dimension(format!(
                "per-path features {}x{} vs {n}x{h}",
                p.nrows(),
                p.ncols()
            )));
        }
    }
    Ok(match aggregator {
        Aggregator::Mean => {
            let mut acc = Array2::zeros((n, h));
            for p in parts {
                acc += p;
            }
            acc / parts.len() as f64
        }
        Aggregator::Concat => {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("row counts checked")
        }
    })
}

/// Pre-activation attention logits and simplex weights, both `nnz × K`
/// row-major.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    pub(crate) logits: Vec<f64>,
    pub(crate) weights: Vec<f64>,
}

/// Splits `omega` (K × 2m) into the left and right halves, each m × K.
pub(crate) fn omega_halves(omega: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let m = omega.ncols() / 2;
    (
        omega.slice(s![.., ..m]).t().to_owned(),
        omega.slice(s![.., m..]).t().to_owned(),
    )
}

pub(crate) fn attention(
    features: &MetaFeatures<'_>,
    omega: &Array2<f64>,
    pattern: &Pattern,
    activation: Activation,
    slope: f64,
    exec: Exec,
) -> Result<Attention> {
    let k = omega.nrows();
    if omega.ncols() != 2 * features.cols() {
        return Err(Error::Dimension(format!(
            "attention vectors have length {}, features have width {}",
            omega.ncols(),
            features.cols()
        )));
    }
    let (wl, wr) = omega_halves(omega);
    let u = features.project(&wl, exec);
    let v = features.project(&wr, exec);
    let per_row: Vec<(Vec<f64>, Vec<f64>)> = exec.map(pattern.n(), |i| {
        let r = pattern.row_range(i);
        let mut logits = Vec::with_capacity(r.len() * k);
        let mut weights = Vec::with_capacity(r.len() * k);
        for e in r {
            let j = pattern.col(e);
            let z: Vec<f64> = (0..k)
                .map(|kk| {
                    let s = u[[i, kk]] + v[[j, kk]];
                    logits.push(s);
                    activation.apply(s, slope)
                })
                .collect();
            weights.extend(softmax(&z));
        }
        (logits, weights)
    });
    let mut att = Attention {
        logits: Vec::with_capacity(pattern.nnz() * k),
        weights: Vec::with_capacity(pattern.nnz() * k),
    };
    for (l, w) in per_row {
        att.logits.extend(l);
        att.weights.extend(w);
    }
    Ok(att)
}

/// Per-pair K-simplex weights `softmax_k(σ(ω_kᵀ[f_i ‖ f_j]))` on the
/// support, `nnz × K` row-major.
pub fn attention_weights(
    features: &MetaFeatures<'_>,
    omega: &Array2<f64>,
    pattern: &Pattern,
    activation: Activation,
    slope: f64,
    exec: Exec,
) -> Result<Vec<f64>> {
    Ok(attention(features, omega, pattern, activation, slope, exec)?.weights)
}

/// Intermediate state of the fusion stage.
#[derive(Debug, Clone)]
pub(crate) struct FusionState<'a> {
    pub(crate) alpha: Vec<f64>,
    pub(crate) attention: Option<Attention>,
    /// Pre-activation `Â_k F W_k` per path (aggregated variant only).
    pub(crate) branch_pre: Vec<Array2<f64>>,
    pub(crate) fused: FusedGraph,
    pub(crate) f_meta: MetaFeatures<'a>,
}

pub(crate) fn fuse_state<'a>(
    stack: &SubgraphStack,
    params: &ModelParams,
    config: &ModelConfig,
    features: &'a FeatureMatrix,
    exec: Exec,
) -> Result<FusionState<'a>> {
    let k = stack.k();
    if params.k() != k {
        return Err(Error::Dimension(format!(
            "model has {} fusion weights but {k} subgraphs were given",
            params.k()
        )));
    }
    if features.rows() != stack.n() {
        return Err(Error::Dimension(format!(
            "feature matrix has {} rows, graph has {} nodes",
            features.rows(),
            stack.n()
        )));
    }
    let pattern = &stack.pattern;
    let slope = config.leaky_slope;
    let alpha = params.fusion_weights();
    let (attention_state, branch_pre, f_meta) = match config.variant {
        Variant::Sum => (None, Vec::new(), MetaFeatures::Input(features)),
        Variant::Attention => {
            let f = MetaFeatures::Input(features);
            let att = attention(
                &f,
                &params.omega,
                pattern,
                config.attention_activation,
                slope,
                exec,
            )?;
            (Some(att), Vec::new(), f)
        }
        Variant::AggAttention => {
            if params.feature_dim() != features.cols() {
                return Err(Error::Dimension(format!(
                    "model expects {} feature columns, got {}",
                    params.feature_dim(),
                    features.cols()
                )));
            }
            let pre: Vec<Array2<f64>> = (0..k)
                .map(|kk| {
                    let x = features.project(&params.meta_gnn[kk], exec);
                    stack.branch(kk).apply(pattern, &x, exec)
                })
                .collect();
            let act = config.gnn_activation;
            let parts: Vec<Array2<f64>> = pre
                .iter()
                .map(|p| p.mapv(|x| act.apply(x, slope)))
                .collect();
            let f_meta = aggregate_features(&parts, config.aggregator)?;
            check_finite(&f_meta, "meta-path GNN output")?;
            let f = MetaFeatures::Dense(f_meta);
            let att = attention(
                &f,
                &params.omega,
                pattern,
                config.attention_activation,
                slope,
                exec,
            )?;
            (Some(att), pre, f)
        }
    };
    let values: Vec<f64> = match &attention_state {
        None => (0..pattern.nnz())
            .map(|e| stack.entry(e).iter().zip(&alpha).map(|(a, w)| a * w).sum())
            .collect(),
        Some(att) => (0..pattern.nnz())
            .map(|e| {
                let w = &att.weights[e * k..(e + 1) * k];
                stack.entry(e).iter().zip(w).map(|(a, w)| a * w).sum()
            })
            .collect(),
    };
    Ok(FusionState {
        alpha,
        attention: attention_state,
        branch_pre,
        fused: FusedGraph {
            pattern: Arc::clone(&stack.pattern),
            values,
        },
        f_meta,
    })
}

/// Builds `A_meta` and `F_meta` for the configured variant.
pub fn fuse<'a>(
    stack: &SubgraphStack,
    params: &ModelParams,
    config: &ModelConfig,
    features: &'a FeatureMatrix,
    exec: Exec,
) -> Result<(FusedGraph, MetaFeatures<'a>)> {
    let st = fuse_state(stack, params, config, features, exec)?;
    Ok((st.fused, st.f_meta))
}

/// Cached head state for the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct HeadState {
    pub(crate) prop: Propagator,
    /// Project-first: `X = F_meta W`. Propagate-first: `H = Â F_meta`.
    pub(crate) inner: Array2<f64>,
    /// Project-first only: `Y = Â X`.
    pub(crate) outer: Option<Array2<f64>>,
    pub(crate) logits: Array2<f64>,
}

pub(crate) fn head_state(
    fused: &FusedGraph,
    f_meta: &MetaFeatures<'_>,
    params: &ModelParams,
    exec: Exec,
) -> Result<HeadState> {
    if f_meta.cols() != params.meta_dim() || f_meta.rows() != fused.n() {
        return Err(Error::Dimension(format!(
            "head expects width {}, features are {}x{} on N={}",
            params.meta_dim(),
            f_meta.rows(),
            f_meta.cols(),
            fused.n()
        )));
    }
    let pattern = &fused.pattern;
    let prop = Propagator::new(pattern, &fused.values);
    let bias = params.head_bias.row(0);
    let (inner, outer, mut logits) = match f_meta {
        MetaFeatures::Input(_) => {
            let x = f_meta.project(&params.head_weight, exec);
            let y = prop.apply(pattern, &x, exec);
            let logits = y.clone();
            (x, Some(y), logits)
        }
        MetaFeatures::Dense(d) => {
            let h = prop.apply(pattern, d, exec);
            let logits = h.dot(&params.head_weight);
            (h, None, logits)
        }
    };
    logits += &bias;
    check_finite(&logits, "logits")?;
    Ok(HeadState {
        prop,
        inner,
        outer,
        logits,
    })
}

/// One-layer GCN head: `Â_meta F_meta W + b`, with `Â_meta` the symmetric
/// normalization of `A_meta + I`.
pub fn forward(
    fused: &FusedGraph,
    f_meta: &MetaFeatures<'_>,
    params: &ModelParams,
    exec: Exec,
) -> Result<Array2<f64>> {
    Ok(head_state(fused, f_meta, params, exec)?.logits)
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache<'a> {
    pub(crate) fusion: FusionState<'a>,
    pub(crate) head: HeadState,
}

impl<'a> ForwardCache<'a> {
    pub fn logits(&self) -> &Array2<f64> {
        &self.head.logits
    }

    pub fn fused(&self) -> &FusedGraph {
        &self.fusion.fused
    }

    pub fn meta_features(&self) -> &MetaFeatures<'a> {
        &self.fusion.f_meta
    }

    /// Final-layer node representations `Â_meta F_meta W` (the logits
    /// without the bias).
    pub fn embeddings(&self, params: &ModelParams) -> Array2<f64> {
        &self.head.logits - &params.head_bias.row(0)
    }
}

pub fn forward_cached<'a>(
    stack: &SubgraphStack,
    features: &'a FeatureMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    exec: Exec,
) -> Result<ForwardCache<'a>> {
    let fusion = fuse_state(stack, params, config, features, exec)?;
    let head = head_state(&fusion.fused, &fusion.f_meta, params, exec)?;
    Ok(ForwardCache { fusion, head })
}

/// Top-`k` label indices per node, by descending logit with ties going to
/// the lower label index.
pub fn predict_topk(logits: &Array2<f64>, k: usize, nodes: &[usize]) -> Vec<Vec<usize>> {
    let l = logits.ncols();
    let k = k.min(l);
    nodes
        .iter()
        .map(|&i| {
            let row = logits.row(i);
            let mut idx: Vec<usize> = (0..l).collect();
            let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
            if k < l {
                idx.select_nth_unstable_by(k, cmp);
                idx.truncate(k);
            }
            idx.sort_by(cmp);
            idx
        })
        .collect()
}
