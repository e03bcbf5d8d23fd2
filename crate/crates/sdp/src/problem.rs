use nalgebra::{DMatrix, DVector};

use crate::SdpError;

/// One nonzero of a block's affine map; `var == None` is the constant term.
/// Only the upper triangle is stored (`row <= col`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEntry {
    pub var: Option<usize>,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Symmetric matrix-valued affine map `F(y) = F0 + Σ y_i F_i` constrained PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    pub dim: usize,
    pub entries: Vec<BlockEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualityEntry {
    pub row: usize,
    pub var: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    /// Dense objective `c`.
    pub objective: Vec<f64>,
    pub eq_entries: Vec<EqualityEntry>,
    pub eq_rhs: Vec<f64>,
    pub blocks: Vec<PsdBlock>,
}

impl PsdBlock {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Adds `value` at `(row, col)` of the coefficient matrix of `var`;
    /// the symmetric counterpart is implied.
    pub fn add(&mut self, var: Option<usize>, row: usize, col: usize, value: f64) {
        if value == 0.0 {
            return;
        }
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.entries.push(BlockEntry { var, row, col, value });
    }

    /// Adds a full symmetric coefficient matrix (upper triangle read).
    pub fn add_matrix(&mut self, var: Option<usize>, m: &DMatrix<f64>) {
        for c in 0..self.dim {
            for r in 0..=c {
                self.add(var, r, c, m[(r, c)]);
            }
        }
    }

    /// Coefficient matrix of `var` (constant term for `None`).
    pub fn coefficient(&self, var: Option<usize>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for e in self.entries.iter().filter(|e| e.var == var) {
            m[(e.row, e.col)] += e.value;
            if e.row != e.col {
                m[(e.col, e.row)] += e.value;
            }
        }
        m
    }

    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for e in &self.entries {
            let w = match e.var {
                None => e.value,
                Some(i) => e.value * y[i],
            };
            m[(e.row, e.col)] += w;
            if e.row != e.col {
                m[(e.col, e.row)] += w;
            }
        }
        m
    }
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            eq_entries: Vec::new(),
            eq_rhs: Vec::new(),
            blocks: Vec::new(),
        }
    }

    /// Appends the equality `Σ coeffs_k y_{var_k} = rhs` and returns its row.
    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.eq_rhs.len();
        for &(var, value) in coeffs {
            if value != 0.0 {
                self.eq_entries.push(EqualityEntry { row, var, value });
            }
        }
        self.eq_rhs.push(rhs);
        row
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn equality_matrix(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.num_equalities(), self.num_vars);
        for e in &self.eq_entries {
            a[(e.row, e.var)] += e.value;
        }
        (a, DVector::from_column_slice(&self.eq_rhs))
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    /// Smallest eigenvalue of each block at `y`.
    pub fn block_min_eigs(&self, y: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| b.evaluate(y).symmetric_eigenvalues().min())
            .collect()
    }

    pub fn check(&self) -> Result<(), SdpError> {
        if self.objective.len() != self.num_vars {
            return Err(SdpError::Malformed(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                self.num_vars
            )));
        }
        for e in &self.eq_entries {
            if e.var >= self.num_vars || e.row >= self.eq_rhs.len() {
                return Err(SdpError::Malformed(format!(
                    "equality entry ({}, {}) out of range",
                    e.row, e.var
                )));
            }
        }
        for (j, b) in self.blocks.iter().enumerate() {
            if b.dim == 0 {
                return Err(SdpError::Malformed(format!("block {j} is empty")));
            }
            for e in &b.entries {
                if e.row > e.col || e.col >= b.dim {
                    return Err(SdpError::Malformed(format!(
                        "block {j} entry ({}, {}) outside the upper triangle",
                        e.row, e.col
                    )));
                }
                if e.var.is_some_and(|v| v >= self.num_vars) {
                    return Err(SdpError::Malformed(format!("block {j} references unknown variable")));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::Malformed(format!("block {j} has a non-finite entry")));
                }
            }
        }
        if self.objective.iter().chain(&self.eq_rhs).any(|v| !v.is_finite()) {
            return Err(SdpError::Malformed("non-finite objective or right-hand side".into()));
        }
        Ok(())
    }
}
