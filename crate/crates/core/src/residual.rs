//! Residual blocks with dense local derivatives.
//!
//! Every constraint block reports its rows together with derivatives with
//! respect to its own auxiliary variables and with respect to the tangents of
//! the (at most two) placed sets it touches. The transcription scatters these
//! local blocks into the global sparse Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEval {
    /// Residual rows; a row is satisfied when it is `<= 0` (or `== 0` for
    /// equality rows).
    pub values: DVector<f64>,
    /// `rows x n_aux`.
    pub d_aux: DMatrix<f64>,
    /// `rows x` tangents of the first operand.
    pub d_first: DMatrix<f64>,
    /// `rows x` tangents of the second operand.
    pub d_second: DMatrix<f64>,
}

impl BlockEval {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest residual, `-inf` for an empty block.
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn satisfied(&self, tol: f64) -> bool {
        self.values.iter().all(|v| *v <= tol)
    }
}

/// Row-major accumulator used while a block is being evaluated.
pub(crate) struct Rows {
    values: Vec<f64>,
    aux: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    n_aux: usize,
    n_first: usize,
    n_second: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Slot {
    First,
    Second,
}

impl Rows {
    pub fn new(n_aux: usize, n_first: usize, n_second: usize) -> Self {
        Rows {
            values: Vec::new(),
            aux: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
            n_aux,
            n_first,
            n_second,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn push(&mut self, value: f64) -> usize {
        self.values.push(value);
        self.aux.resize(self.aux.len() + self.n_aux, 0.0);
        self.first.resize(self.first.len() + self.n_first, 0.0);
        self.second.resize(self.second.len() + self.n_second, 0.0);
        self.values.len() - 1
    }

    pub fn aux(&mut self, row: usize, col: usize, v: f64) {
        self.aux[row * self.n_aux + col] += v;
    }

    pub fn tangent(&mut self, slot: Slot, row: usize, col: usize, v: f64) {
        match slot {
            Slot::First => self.first[row * self.n_first + col] += v,
            Slot::Second => self.second[row * self.n_second + col] += v,
        }
    }

    pub fn finish(self) -> BlockEval {
        let m = self.values.len();
        BlockEval {
            values: DVector::from_vec(self.values),
            d_aux: DMatrix::from_row_slice(m, self.n_aux, &self.aux),
            d_first: DMatrix::from_row_slice(m, self.n_first, &self.first),
            d_second: DMatrix::from_row_slice(m, self.n_second, &self.second),
        }
    }
}

/// Blocks that carry both equality and inequality rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEval {
    pub eq: BlockEval,
    pub ineq: BlockEval,
}
