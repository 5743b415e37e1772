//! Symmetric GCN normalization `Â = D^{-1/2}(A + I)D^{-1/2}` over a sparse
//! pattern with structurally symmetric support, plus its reverse-mode pass.

use ndarray::Array2;

use crate::exec::Exec;
use crate::sparse::Csr;

/// Structurally symmetric sparsity pattern with the position of every
/// entry's mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub(crate) n: usize,
    pub(crate) indptr: Vec<usize>,
    pub(crate) indices: Vec<usize>,
    /// `mirror[e]` is the entry index of `(j, i)` when `e` is `(i, j)`.
    pub(crate) mirror: Vec<usize>,
}

impl Pattern {
    /// Pattern of the union of nonzeros of `mats`, which must all be
    /// structurally symmetric and N × N.
    pub fn union(n: usize, mats: &[&Csr<f64>]) -> Pattern {
        let row_data: Vec<Vec<(usize, ())>> = (0..n)
            .map(|i| {
                let mut cols: Vec<usize> = mats
                    .iter()
                    .flat_map(|m| m.row(i).0.iter().copied())
                    .collect();
                cols.sort_unstable();
                cols.dedup();
                cols.into_iter().map(|j| (j, ())).collect()
            })
            .collect();
        let p = Csr::from_sorted_rows(n, n, row_data);
        Pattern::from_csr(&p)
    }

    pub fn from_csr<T: Copy>(m: &Csr<T>) -> Pattern {
        let n = m.rows();
        let indptr = m.indptr().to_vec();
        let indices = m.indices().to_vec();
        let mut mirror = vec![usize::MAX; indices.len()];
        for i in 0..n {
            for e in indptr[i]..indptr[i + 1] {
                let j = indices[e];
                let row = &indices[indptr[j]..indptr[j + 1]];
                let pos = row
                    .binary_search(&i)
                    .expect("pattern must be structurally symmetric");
                mirror[e] = indptr[j] + pos;
            }
        }
        Pattern {
            n,
            indptr,
            indices,
            mirror,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.indptr[i]..self.indptr[i + 1]
    }

    pub fn col(&self, e: usize) -> usize {
        self.indices[e]
    }

    /// Row index of every entry.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            rows.extend(std::iter::repeat_n(i, self.indptr[i + 1] - self.indptr[i]));
        }
        rows
    }

    /// Values of `m` laid out on this pattern (zero where `m` has no entry).
    pub fn gather(&self, m: &Csr<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (idx, vals) = m.row(i);
            let r = self.row_range(i);
            let cols = &self.indices[r.clone()];
            for (&j, &v) in idx.iter().zip(vals) {
                let p = cols.binary_search(&j).expect("matrix inside pattern");
                out[r.start + p] = v;
            }
        }
        out
    }

    pub fn to_csr(&self, values: &[f64]) -> Csr<f64> {
        let rows = (0..self.n)
            .map(|i| {
                self.row_range(i)
                    .map(|e| (self.indices[e], values[e]))
                    .collect()
            })
            .collect();
        Csr::from_sorted_rows(self.n, self.n, rows)
    }
}

/// Normalized propagation operator for one set of edge values.
#[derive(Debug, Clone)]
pub struct Propagator {
    /// Unit self-loops are added on top of `values`.
    pub(crate) degree: Vec<f64>,
    pub(crate) norm: Vec<f64>,
    pub(crate) self_loop: Vec<f64>,
}

impl Propagator {
    /// `values` must be nonnegative so every degree is at least 1.
    pub fn new(pattern: &Pattern, values: &[f64]) -> Propagator {
        let degree: Vec<f64> = (0..pattern.n)
            .map(|i| 1.0 + pattern.row_range(i).map(|e| values[e]).sum::<f64>())
            .collect();
        let isq: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut norm = vec![0.0; pattern.nnz()];
        for i in 0..pattern.n {
            for e in pattern.row_range(i) {
                norm[e] = values[e] * isq[i] * isq[pattern.indices[e]];
            }
        }
        let self_loop = degree.iter().map(|d| 1.0 / d).collect();
        Propagator {
            degree,
            norm,
            self_loop,
        }
    }

    /// Normalized coefficient `Â_ij / A_ij` for entry `e`.
    fn coeff(&self, pattern: &Pattern, i: usize, e: usize) -> f64 {
        1.0 / (self.degree[i] * self.degree[pattern.indices[e]]).sqrt()
    }

    /// `Â · X`
    pub fn apply(&self, pattern: &Pattern, x: &Array2<f64>, exec: Exec) -> Array2<f64> {
        self.apply_with(pattern, x, exec, |e| e)
    }

    /// `Âᵀ · G`
    pub fn apply_transpose(&self, pattern: &Pattern, g: &Array2<f64>, exec: Exec) -> Array2<f64> {
        self.apply_with(pattern, g, exec, |e| pattern.mirror[e])
    }

    fn apply_with(
        &self,
        pattern: &Pattern,
        x: &Array2<f64>,
        exec: Exec,
        value_of: impl Fn(usize) -> usize + Sync + Send,
    ) -> Array2<f64> {
        let width = x.ncols();
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((pattern.n, width));
        exec.for_rows(out.as_slice_mut().expect("contiguous"), width, |i, row| {
            let sl = self.self_loop[i];
            for (o, s) in row.iter_mut().zip(&xs[i * width..(i + 1) * width]) {
                *o = sl * s;
            }
            for e in pattern.row_range(i) {
                let a = self.norm[value_of(e)];
                if a == 0.0 {
                    continue;
                }
                let j = pattern.indices[e];
                for (o, s) in row.iter_mut().zip(&xs[j * width..(j + 1) * width]) {
                    *o += a * s;
                }
            }
        });
        out
    }

    /// Reverse pass of `Y = Â X` given `G = ∂L/∂Y`. Returns `∂L/∂X` and the
    /// gradient with respect to every raw edge value on the pattern
    /// (degree dependence included).
    pub fn backward(
        &self,
        pattern: &Pattern,
        x: &Array2<f64>,
        y: &Array2<f64>,
        g: &Array2<f64>,
        exec: Exec,
    ) -> (Array2<f64>, Vec<f64>) {
        let dx = self.apply_transpose(pattern, g, exec);
        let q: Vec<f64> = exec.map(pattern.n, |m| {
            let a: f64 = g.row(m).dot(&y.row(m));
            let b: f64 = dx.row(m).dot(&x.row(m));
            -(a + b) / (2.0 * self.degree[m])
        });
        let per_row: Vec<Vec<f64>> = exec.map(pattern.n, |i| {
            let gi = g.row(i);
            pattern
                .row_range(i)
                .map(|e| {
                    let j = pattern.indices[e];
                    self.coeff(pattern, i, e) * gi.dot(&x.row(j)) + q[i]
                })
                .collect()
        });
        let da = per_row.into_iter().flatten().collect();
        (dx, da)
    }
}
