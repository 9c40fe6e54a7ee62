//! Coordinate-format sparse matrices for constraint Jacobians.

use nalgebra::DMatrix;

/// Sparse matrix as `(row, col, value)` triplets; duplicates add up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            ..Default::default()
        }
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.cols.clear();
        self.vals.clear();
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(
            row < self.nrows && col < self.ncols,
            "({row}, {col}) outside {}x{}",
            self.nrows,
            self.ncols
        );
        if val != 0.0 {
            self.rows.push(row);
            self.cols.push(col);
            self.vals.push(val);
        }
    }

    /// `out += J^T y`.
    pub fn add_transpose_mul(&self, y: &[f64], out: &mut [f64]) {
        for k in 0..self.vals.len() {
            out[self.cols[k]] += self.vals[k] * y[self.rows[k]];
        }
    }

    /// `out += J x`.
    pub fn add_mul(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.vals.len() {
            out[self.rows[k]] += self.vals[k] * x[self.cols[k]];
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for k in 0..self.vals.len() {
            m[(self.rows[k], self.cols[k])] += self.vals[k];
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let mut t = Triplets::new(2, 3);
        t.push(0, 0, 1.0);
        t.push(0, 2, 2.0);
        t.push(1, 1, -1.0);
        t.push(1, 1, 3.0);
        t.push(1, 0, 0.0);
        assert_eq!(t.len(), 4);
        let d = t.to_dense();
        assert_eq!(d[(1, 1)], 2.0);
        let mut out = vec![0.0; 3];
        t.add_transpose_mul(&[1.0, 2.0], &mut out);
        assert_eq!(out, vec![1.0, 4.0, 2.0]);
        let mut out = vec![0.0; 2];
        t.add_mul(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 2.0]);
    }
}
