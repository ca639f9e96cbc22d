use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::par;

/// Blocked compressed-row sparse matrix with square `b x b` blocks stored
/// row-major. The scalar dimension need not be a multiple of `b`; entries of
/// the trailing partial block beyond `dim` are padding and stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BcrsMatrix {
    block: usize,
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl BcrsMatrix {
    /// Builds a zeroed matrix from per-block-row column lists (sorted and
    /// deduplicated here).
    pub fn from_pattern(block: usize, dim: usize, mut rows: Vec<Vec<usize>>) -> Result<Self> {
        if block == 0 {
            return Err(Error::Invalid("block size must be at least 1".into()));
        }
        let n_rows = dim.div_ceil(block);
        if rows.len() != n_rows {
            return Err(Error::Shape { expected: n_rows, got: rows.len() });
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for cols in &mut rows {
            cols.sort_unstable();
            cols.dedup();
            if cols.last().is_some_and(|&c| c >= n_rows) {
                return Err(Error::Invalid("block column out of range".into()));
            }
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len() * block * block];
        Ok(BcrsMatrix { block, dim, row_ptr, col_idx, values })
    }

    /// Block-diagonal identity.
    pub fn identity(block: usize, dim: usize) -> Self {
        let n = dim.div_ceil(block);
        let mut m = Self::from_pattern(block, dim, (0..n).map(|r| vec![r]).collect()).expect("valid pattern");
        m.add_diagonal(1.0);
        m
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_block_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz_blocks(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zero(&mut self) {
        self.values.fill(0.0);
    }

    /// Same pattern, same values: true when the two matrices are bitwise equal.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.block == other.block
            && self.dim == other.dim
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn block_index(&self, row: usize, col: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| self.row_ptr[row] + k)
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let bb = self.block * self.block;
        &self.values[k * bb..(k + 1) * bb]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let bb = self.block * self.block;
        &mut self.values[k * bb..(k + 1) * bb]
    }

    /// Scalar entry `(i, j)`; zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let b = self.block;
        match self.block_index(i / b, j / b) {
            Some(k) => self.block(k)[(i % b) * b + j % b],
            None => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let (b, n) = (self.block, self.dim);
        let mut d = vec![0.0; n * n];
        for r in 0..self.n_block_rows() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let blk = self.block(k);
                for ii in 0..b {
                    for jj in 0..b {
                        let (i, j) = (r * b + ii, c * b + jj);
                        if i < n && j < n {
                            d[i * n + j] = blk[ii * b + jj];
                        }
                    }
                }
            }
        }
        d
    }

    /// Exact symmetry of pattern and values.
    pub fn is_symmetric(&self) -> bool {
        let b = self.block;
        for r in 0..self.n_block_rows() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let Some(t) = self.block_index(c, r) else { return false };
                let (x, y) = (self.block(k), self.block(t));
                for ii in 0..b {
                    for jj in 0..b {
                        if x[ii * b + jj].to_bits() != y[jj * b + ii].to_bits() {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Adds `tau` to every stored diagonal entry inside the dimension.
    pub fn add_diagonal(&mut self, tau: f64) {
        let (b, dim) = (self.block, self.dim);
        for r in 0..self.n_block_rows() {
            if let Some(k) = self.block_index(r, r) {
                let blk = self.block_mut(k);
                for ii in 0..b {
                    if r * b + ii < dim {
                        blk[ii * b + ii] += tau;
                    }
                }
            }
        }
    }

    /// Diagonal entries (zero where no diagonal block is stored).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `y = H x`, rows processed in parallel; each entry sums its blocks in
    /// column order.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { op: "matvec", lhs: (self.dim, self.dim), rhs: (x.len(), 1) });
        }
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { op: "matvec", lhs: (self.dim, self.dim), rhs: (y.len(), 1) });
        }
        let b = self.block;
        let n = self.dim;
        par::for_each_chunk(y, b, || vec![0.0; b], |acc, r, yr| {
            acc.fill(0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c0 = self.col_idx[k] * b;
                let blk = self.block(k);
                for (ii, a) in acc.iter_mut().enumerate() {
                    for jj in 0..b.min(n - c0) {
                        *a += blk[ii * b + jj] * x[c0 + jj];
                    }
                }
            }
            yr.copy_from_slice(&acc[..yr.len()]);
        });
        Ok(())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.dim];
        self.matvec(x, &mut y)?;
        Ok(y)
    }

    /// Text dump: header `b nrows nnz_blocks`, then one line per block with
    /// `(row col)` followed by the `b*b` values in row-major order.
    pub fn write_text(&self, w: &mut impl fmt::Write) -> fmt::Result {
        writeln!(w, "{} {} {}", self.block, self.n_block_rows(), self.nnz_blocks())?;
        for r in 0..self.n_block_rows() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                write!(w, "({} {})", r, self.col_idx[k])?;
                for v in self.block(k) {
                    write!(w, " {v:e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Splits the value storage into one mutable slice per block row.
    pub(crate) fn row_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let bb = self.block * self.block;
        let mut out = Vec::with_capacity(self.n_block_rows());
        let mut rest: &mut [f64] = &mut self.values;
        for r in 0..self.row_ptr.len() - 1 {
            let len = (self.row_ptr[r + 1] - self.row_ptr[r]) * bb;
            let (head, tail) = rest.split_at_mut(len);
            out.push(head);
            rest = tail;
        }
        out
    }
}
