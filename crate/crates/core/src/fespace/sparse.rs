//! Compressed-row sparse matrices and a direct solver wrapper.

use std::io::Write;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Row-compressed sparse matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    ///
    /// Duplicates are summed in the order they appear, so a fixed triplet
    /// order gives bit-identical results.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(
                r < nrows && c < ncols,
                "triplet ({r}, {c}) outside {nrows}x{ncols}"
            );
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            // stable: equal columns keep insertion order
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(c);
                data.push(acc);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterates `(col, value)` over the stored entries of `row`.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[row]..self.indptr[row + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.data[range].iter().copied())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.indptr[row]..self.indptr[row + 1];
        match self.indices[range.clone()].binary_search(&col) {
            Ok(k) => self.data[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Iterates every stored `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `y += alpha * A x`
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let s: f64 = self.row(r).map(|(c, v)| v * x[c]).sum();
            *yr += alpha * s;
        }
    }

    /// `A^T x` without forming the transpose.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        (0..self.nrows)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * y[c]).sum::<f64>())
            .sum()
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Submatrix with the given row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut trip = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_map[c] != usize::MAX {
                    trip.push((new_r, col_map[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &trip)
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let neg: Vec<_> = other.triplets().map(|(r, c, v)| (r, c, -v)).collect();
        let mut trip: Vec<_> = self.triplets().collect();
        trip.extend(neg);
        let diff = Self::from_triplets(self.nrows, self.ncols, &trip);
        diff.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && self.max_abs_diff(&self.transpose()) <= tol
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            out[r][c] = v;
        }
        out
    }

    /// Debug dump in coordinate `i j value` text form.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "% {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Assembles a block matrix from `(row_offset, col_offset, block)` pieces.
pub fn block_matrix(
    nrows: usize,
    ncols: usize,
    blocks: &[(usize, usize, &CsrMatrix)],
) -> CsrMatrix {
    let mut trip = Vec::new();
    for &(ro, co, b) in blocks {
        trip.extend(b.triplets().map(|(r, c, v)| (r + ro, c + co, v)));
    }
    CsrMatrix::from_triplets(nrows, ncols, &trip)
}

/// Sparse LU factorization, factored once and reused.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix, what: &'static str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "{what}: matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let trip: Vec<_> = a
            .triplets()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows(), a.ncols(), &trip)
            .map_err(|_| Error::Singular(what))?;
        let lu = mat.sp_lu().map_err(|_| Error::Singular(what))?;
        Ok(Self { n: a.nrows(), lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 1), -1.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn transpose_products_agree() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -3.0)]);
        let x = [1.0, 2.0];
        assert_eq!(a.tr_mul_vec(&x), a.transpose().mul_vec(&x));
        assert_eq!(a.bilinear(&x, &[1.0, 1.0, 1.0]), 3.0 - 6.0);
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0)]);
        let lu = SparseLu::new(&a, "test").unwrap();
        let x = lu.solve(&[3.0, 2.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coo_dump() {
        let a = CsrMatrix::from_triplets(1, 1, &[(0, 0, 0.5)]);
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("0 0 5.0"));
    }
}
