use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fusion::{Pattern, Propagator};
use crate::hetgraph::HeteroGraph;
use crate::metapath::SimilaritySubgraph;
use crate::sparse::Csr;

/// TSV with one line per node of type `t`: key, then the row of `emb`.
pub fn export_embeddings(graph: &HeteroGraph, emb: &Array2<f64>, t: usize) -> Result<String> {
    if emb.nrows() != graph.n_nodes() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for {} nodes",
            emb.nrows(),
            graph.n_nodes()
        )));
    }
    let mut out = String::new();
    for g in graph.type_range(t) {
        out.push_str(graph.key(g));
        for v in emb.row(g) {
            let _ = write!(out, "\t{v:.16e}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut u = x.clone();
    for mut row in u.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    u
}

/// Mean cosine similarity over all unordered pairs of distinct rows.
pub fn mean_pairwise_cosine(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return f64::NAN;
    }
    let u = unit_rows(x);
    let s = u.sum_axis(ndarray::Axis(0));
    let self_sum: f64 = u.iter().map(|v| v * v).sum();
    (s.dot(&s) - self_sum) / (n * (n - 1)) as f64
}

/// Mean cosine within and across categories over the given rows.
pub fn category_cosines(x: &Array2<f64>, rows: &[usize], categories: &[usize]) -> (f64, f64) {
    let u = unit_rows(x);
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let c = u.row(rows[a]).dot(&u.row(rows[b]));
            if categories[a] == categories[b] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni as f64, inter / nx as f64)
}

/// Mean pairwise cosine of seeded Gaussian node vectors after `layers`
/// rounds of normalized propagation over the equal-weight mean of the
/// subgraphs.
pub fn smoothing_probe(
    subgraphs: &[SimilaritySubgraph],
    layers: usize,
    dim: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    let first = subgraphs
        .first()
        .ok_or_else(|| Error::config("preprocess.paths", "at least one meta-path is required"))?;
    let n = first.n();
    let k = subgraphs.len() as f64;
    let mut trip = Vec::new();
    for s in subgraphs {
        trip.extend(s.adjacency().iter().map(|(i, j, v)| (i, j, v / k)));
    }
    let a = Csr::from_triplets(n, n, trip, |x, y| x + y);
    let pattern = Pattern::from_csr(&a);
    let prop = Propagator::new(&pattern, &pattern.gather(&a));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut rng));
    for _ in 0..layers {
        x = prop.apply(&pattern, &x, exec);
    }
    Ok(mean_pairwise_cosine(&x))
}
