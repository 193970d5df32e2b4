//! Compressed sparse row matrices.
//!
//! Entries are kept sorted by column within each row, with no explicit zeros
//! and no duplicate coordinates. Diagonal factors are handled as plain
//! vectors through [`SparseMatrix::scale_rows`] and [`SparseMatrix::scale_cols`]
//! rather than materialized as matrices.

use crate::dense::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_triplets(diag.len(), diag.len(), diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
    }

    /// Assembles a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; entries that end up exactly zero are dropped.
    ///
    /// Panics if a coordinate is out of bounds.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        Self::from_triplets(
            m.rows(),
            m.cols(),
            (0..m.rows()).flat_map(|i| (0..m.cols()).map(move |j| (i, j, m[(i, j)]))),
        )
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Iterates stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> SparseMatrix {
        Self::from_triplets(self.n_cols, self.n_rows, self.triplets().map(|(i, j, v)| (j, i, v)))
    }

    pub fn abs(&self) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.abs());
        out
    }

    /// `diag(d) · self`.
    pub fn scale_rows(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.n_rows, "scale_rows length");
        Self::from_triplets(
            self.n_rows,
            self.n_cols,
            self.triplets().map(|(i, j, v)| (i, j, d[i] * v)),
        )
    }

    /// `self · diag(d)`.
    pub fn scale_cols(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.n_cols, "scale_cols length");
        Self::from_triplets(
            self.n_rows,
            self.n_cols,
            self.triplets().map(|(i, j, v)| (i, j, v * d[j])),
        )
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        Self::from_triplets(self.n_rows, self.n_cols, self.triplets().map(|(i, j, v)| (i, j, s * v)))
    }

    /// `self + alpha · other`.
    pub fn add_scaled(&self, other: &SparseMatrix, alpha: f64) -> SparseMatrix {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape");
        Self::from_triplets(
            self.n_rows,
            self.n_cols,
            self.triplets()
                .chain(other.triplets().map(|(i, j, v)| (i, j, alpha * v))),
        )
    }

    pub fn add(&self, other: &SparseMatrix) -> SparseMatrix {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &SparseMatrix) -> SparseMatrix {
        self.add_scaled(other, -1.0)
    }

    /// Sparse product `self · rhs`.
    pub fn matmul(&self, rhs: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.n_cols, rhs.n_rows, "sparse matmul inner dimension");
        let mut acc = vec![0.0; rhs.n_cols];
        let mut touched = vec![false; rhs.n_cols];
        let mut pattern = Vec::new();
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(k);
                for (&j, &b) in rcols.iter().zip(rvals) {
                    if !touched[j] {
                        touched[j] = true;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                if acc[j] != 0.0 {
                    indices.push(j);
                    values.push(acc[j]);
                }
                acc[j] = 0.0;
                touched[j] = false;
            }
            pattern.clear();
            indptr.push(indices.len());
        }
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: rhs.n_cols,
            indptr,
            indices,
            values,
        }
    }

    /// `self · x` for a dense `x`.
    pub fn mul_dense(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.n_cols, x.rows(), "sparse-dense inner dimension");
        let mut out = Matrix::zeros(self.n_rows, x.cols());
        self.mul_dense_into(x.as_slice(), x.cols(), out.as_mut_slice());
        out
    }

    /// Adds `self · x` into `out`, where `x` and `out` are row-major blocks
    /// with `width` columns.
    pub(crate) fn mul_dense_into(&self, x: &[f64], width: usize, out: &mut [f64]) {
        for i in 0..self.n_rows {
            let out_row = &mut out[i * width..(i + 1) * width];
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                for (o, &b) in out_row.iter_mut().zip(&x[k * width..(k + 1) * width]) {
                    *o += a * b;
                }
            }
        }
    }

    /// Row sums, i.e. `self · 𝟙`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// `self · v` for a vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_cols, "mul_vec length");
        (0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &a)| a * v[j]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            out[(i, j)] = v;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols && self.triplets().all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol)
    }

    /// Writes the matrix as `row col value` lines.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = format!("# {} {} {}\n", self.n_rows, self.n_cols, self.nnz());
        for (i, j, v) in self.triplets() {
            s.push_str(&format!("{i} {j} {v:.17e}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0), (0, 1, -1.0), (1, 0, 2.0), (1, 0, 0.5)]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 0), 2.5);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn products_match_dense() {
        let a = SparseMatrix::from_triplets(2, 3, [(0, 0, 1.0), (0, 2, -2.0), (1, 1, 3.0)]);
        let b = SparseMatrix::from_triplets(3, 2, [(0, 1, 4.0), (1, 0, 1.0), (2, 0, 0.5), (2, 1, 2.0)]);
        let expected = a.to_dense().matmul(&b.to_dense());
        assert_eq!(a.matmul(&b).to_dense(), expected);
        assert_eq!(a.mul_dense(&b.to_dense()), expected);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn cancellation_leaves_no_explicit_zero() {
        let a = SparseMatrix::from_triplets(1, 2, [(0, 0, 1.0), (0, 1, 1.0)]);
        let b = SparseMatrix::from_triplets(2, 1, [(0, 0, 1.0), (1, 0, -1.0)]);
        let p = a.matmul(&b);
        assert_eq!(p.nnz(), 0);
        assert_eq!(p.shape(), (1, 1));
    }

    #[test]
    fn diagonal_scaling() {
        let a = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]);
        assert_eq!(
            a.scale_rows(&[2.0, 0.0]).to_dense(),
            Matrix::from_rows(&[[2.0, 4.0], [0.0, 0.0]])
        );
        assert_eq!(
            a.scale_cols(&[1.0, -1.0]).to_dense(),
            Matrix::from_rows(&[[1.0, -2.0], [0.0, -3.0]])
        );
        assert_eq!(a.scale_rows(&[2.0, 0.0]).nnz(), 2);
    }
}
