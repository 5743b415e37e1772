//! Compressed sparse row storage and the products the pipeline needs.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Row-major compressed sparse matrix. Column indices are sorted and unique
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Copy> Csr<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Csr {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from unordered triplets; duplicates are merged with `combine`.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, T)>,
        combine: impl Fn(T, T) -> T,
    ) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < rows && j < cols, "triplet ({i},{j}) out of bounds");
            if last == Some((i, j)) {
                let slot = values.last_mut().expect("merged entry exists");
                *slot = combine(*slot, v);
            } else {
                indptr[i + 1] += 1;
                indices.push(j);
                values.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Assembles from per-row `(col, value)` lists that are already sorted.
    pub fn from_sorted_rows(rows: usize, cols: usize, row_data: Vec<Vec<(usize, T)>>) -> Self {
        debug_assert_eq!(row_data.len(), rows);
        let nnz = row_data.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in row_data {
            for (j, v) in row {
                debug_assert!(j < cols);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            0.0
        } else {
            self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
        }
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let (idx, vals) = self.row(i);
        idx.binary_search(&j).ok().map(|p| vals[p])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (idx, vals) = self.row(i);
            idx.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut values = Vec::with_capacity(self.nnz());
        // Rows are visited in order, so each transposed row stays sorted.
        let mut slots: Vec<Option<T>> = vec![None; self.nnz()];
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                let p = next[j];
                indices[p] = i;
                slots[p] = Some(v);
                next[j] += 1;
            }
        }
        values.extend(slots.into_iter().map(|v| v.expect("every slot filled")));
        Csr {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Csr<U> {
        Csr {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_dense(&self) -> Array2<T>
    where
        T: Default,
    {
        let mut out = Array2::from_elem((self.rows, self.cols), T::default());
        for (i, j, v) in self.iter() {
            out[[i, j]] = v;
        }
        out
    }
}

impl Csr<f64> {
    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let (rows, cols) = dense.dim();
        let row_data = (0..rows)
            .map(|i| {
                (0..cols)
                    .filter(|&j| dense[[i, j]] != 0.0)
                    .map(|j| (j, dense[[i, j]]))
                    .collect()
            })
            .collect();
        Csr::from_sorted_rows(rows, cols, row_data)
    }

    /// `self · x` for dense `x`.
    pub fn spmm(&self, x: &Array2<f64>, exec: Exec) -> Array2<f64> {
        assert_eq!(self.cols, x.nrows(), "spmm inner dimension");
        let width = x.ncols();
        let mut out = Array2::<f64>::zeros((self.rows, width));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        exec.for_rows(
            out.as_slice_mut().expect("fresh array is contiguous"),
            width,
            |i, row| {
                let (idx, vals) = self.row(i);
                for (&j, &a) in idx.iter().zip(vals) {
                    let src = &xs[j * width..(j + 1) * width];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += a * s;
                    }
                }
            },
        );
        out
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, j, v) in self.iter() {
            let m = self.get(j, i).unwrap_or(0.0);
            worst = worst.max((v - m).abs());
        }
        worst
    }
}

enum Accumulator {
    Sparse(Csr<u64>),
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<u64>,
    },
}

/// Dense representation kicks in once an operand's nonzero ratio passes this.
pub const DENSIFY_RATIO: f64 = 0.25;

/// Exact integer product `factors[0] · factors[1] · …`, evaluated left to
/// right with checked arithmetic. `label` names the chain in overflow errors.
pub fn chain_product(factors: &[&Csr<u64>], label: &str, exec: Exec) -> Result<Csr<u64>> {
    let (first, rest) = factors
        .split_first()
        .expect("chain product needs at least one factor");
    let mut acc = Accumulator::Sparse((*first).clone());
    for b in rest {
        acc = multiply(acc, b, label, exec)?;
    }
    Ok(match acc {
        Accumulator::Sparse(m) => m,
        Accumulator::Dense { rows, cols, data } => {
            let row_data = (0..rows)
                .map(|i| {
                    data[i * cols..(i + 1) * cols]
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0)
                        .map(|(j, &v)| (j, v))
                        .collect()
                })
                .collect();
            Csr::from_sorted_rows(rows, cols, row_data)
        }
    })
}

fn multiply(acc: Accumulator, b: &Csr<u64>, label: &str, exec: Exec) -> Result<Accumulator> {
    let cols = b.cols();
    let overflow = || Error::Overflow(label.to_string());
    match acc {
        Accumulator::Sparse(a) if a.density() <= DENSIFY_RATIO => {
            assert_eq!(a.cols(), b.rows(), "chain product inner dimension");
            let rows: Vec<Option<Vec<(usize, u64)>>> = exec.map(a.rows(), |i| {
                let mut dense = vec![0u64; cols];
                let mut touched: Vec<usize> = Vec::new();
                let (idx, vals) = a.row(i);
                for (&k, &av) in idx.iter().zip(vals) {
                    let (bidx, bvals) = b.row(k);
                    for (&j, &bv) in bidx.iter().zip(bvals) {
                        let term = av.checked_mul(bv)?;
                        if dense[j] == 0 {
                            touched.push(j);
                        }
                        dense[j] = dense[j].checked_add(term)?;
                    }
                }
                touched.sort_unstable();
                Some(touched.into_iter().map(|j| (j, dense[j])).collect())
            });
            let row_data = rows
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(overflow)?;
            let out = Csr::from_sorted_rows(a.rows(), cols, row_data);
            Ok(if out.density() > DENSIFY_RATIO {
                densify(&out)
            } else {
                Accumulator::Sparse(out)
            })
        }
        Accumulator::Sparse(a) => multiply(densify(&a), b, label, exec),
        Accumulator::Dense {
            rows,
            cols: inner,
            data,
        } => {
            assert_eq!(inner, b.rows(), "chain product inner dimension");
            let out_rows: Vec<Option<Vec<u64>>> = exec.map(rows, |i| {
                let mut out = vec![0u64; cols];
                for (k, &av) in data[i * inner..(i + 1) * inner].iter().enumerate() {
                    if av == 0 {
                        continue;
                    }
                    let (bidx, bvals) = b.row(k);
                    for (&j, &bv) in bidx.iter().zip(bvals) {
                        out[j] = out[j].checked_add(av.checked_mul(bv)?)?;
                    }
                }
                Some(out)
            });
            let out_rows = out_rows
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(overflow)?;
            let data: Vec<u64> = out_rows.into_iter().flatten().collect();
            let nnz = data.iter().filter(|&&v| v != 0).count();
            let dense = Accumulator::Dense { rows, cols, data };
            if rows * cols > 0 && (nnz as f64) / ((rows * cols) as f64) <= DENSIFY_RATIO {
                Ok(match dense {
                    Accumulator::Dense { rows, cols, data } => {
                        Accumulator::Sparse(sparse_from_dense_u64(rows, cols, &data))
                    }
                    other => other,
                })
            } else {
                Ok(dense)
            }
        }
    }
}

fn densify(a: &Csr<u64>) -> Accumulator {
    let mut data = vec![0u64; a.rows() * a.cols()];
    for (i, j, v) in a.iter() {
        data[i * a.cols() + j] = v;
    }
    Accumulator::Dense {
        rows: a.rows(),
        cols: a.cols(),
        data,
    }
}

fn sparse_from_dense_u64(rows: usize, cols: usize, data: &[u64]) -> Csr<u64> {
    let row_data = (0..rows)
        .map(|i| {
            data[i * cols..(i + 1) * cols]
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(j, &v)| (j, v))
                .collect()
        })
        .collect();
    Csr::from_sorted_rows(rows, cols, row_data)
}
