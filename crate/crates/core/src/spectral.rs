//! Cellwise Neumann eigenproblems `s⁽ⁱ⁾(φ, v) = λ c⁽ⁱ⁾(φ, v)` and the
//! auxiliary space they span.

use std::io::Write;

use faer::{Mat, Side};
use rayon::prelude::*;

use crate::assembly::OperatorSet;
use crate::error::{Error, Result};
use crate::sparse;

/// Relative residual accepted for a computed eigenpair.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-9;

/// Eigenpairs of one coarse cell. Columns of `modes` are `c⁽ⁱ⁾`-orthonormal
/// and live on all `(m+1)²` vertices of the closed cell.
#[derive(Clone, Debug)]
pub struct CellSpectrum {
    pub cell: usize,
    /// The `J + 1` smallest eigenvalues, nondecreasing.
    pub eigenvalues: Vec<f64>,
    /// First `J` eigenvectors.
    pub modes: Mat<f64>,
    /// `C_i φ_j` for the first `J` modes.
    pub c_modes: Mat<f64>,
}

impl CellSpectrum {
    pub fn n_basis(&self) -> usize {
        self.modes.ncols()
    }

    /// `λ_{J+1}`.
    pub fn next_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.n_basis()]
    }
}

#[derive(Clone, Debug)]
pub struct AuxSpace {
    pub n_basis: usize,
    pub cells: Vec<CellSpectrum>,
}

impl AuxSpace {
    /// `Λ = min_i λ⁽ⁱ⁾_{J+1}`.
    pub fn lambda_min(&self) -> f64 {
        self.cells
            .iter()
            .map(CellSpectrum::next_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dim(&self) -> usize {
        self.n_basis * self.cells.len()
    }

    /// CSV with columns `cell,index,lambda`, 1-based index.
    pub fn write_eigenvalues_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell,index,lambda")?;
        for c in &self.cells {
            for (k, l) in c.eigenvalues.iter().enumerate() {
                writeln!(out, "{},{},{:.17e}", c.cell, k + 1, l)?;
            }
        }
        Ok(())
    }
}

/// Flips `v` so its first entry above `tol · max|v|` is positive.
pub fn normalize_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Generalized eigenpairs of a dense symmetric pencil `(s, c)` with `c` SPD.
/// Returns all eigenvalues and the matrix of `c`-orthonormal eigenvectors.
pub fn symmetric_pencil(s: &Mat<f64>, c: &Mat<f64>) -> std::result::Result<(Vec<f64>, Mat<f64>), String> {
    let n = s.nrows();
    let llt = c.llt(Side::Lower).map_err(|e| format!("cholesky: {e:?}"))?;
    let l = llt.L();
    // M = L⁻¹ S L⁻ᵀ
    let mut x = s.clone();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut m = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(m.as_mut());
    let m = Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| format!("eigensolver: {e:?}"))?;
    let values: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
    let mut vecs = evd.U().to_owned();
    l.transpose().solve_upper_triangular_in_place(vecs.as_mut());
    Ok((values, vecs))
}

/// Solves the Neumann pencil of coarse cell `cell` and keeps `n_basis` modes.
pub fn solve_cell_eigen(op: &OperatorSet, cell: usize, n_basis: usize) -> Result<CellSpectrum> {
    let blocks = &op.cells[cell];
    let n = blocks.vertices.len();
    if n_basis == 0 || n_basis >= n {
        return Err(Error::InvalidParameter(format!(
            "number of local basis functions must lie in 1..{n}, got {n_basis}"
        )));
    }
    let s = sparse::to_dense(&blocks.s);
    let c = sparse::to_dense(&blocks.c);
    let (values, vecs) = symmetric_pencil(&s, &c).map_err(|detail| Error::Eigen { cell, detail })?;

    let mut modes = Mat::zeros(n, n_basis);
    for j in 0..n_basis {
        let mut v: Vec<f64> = (0..n).map(|i| vecs[(i, j)]).collect();
        normalize_sign(&mut v);
        for i in 0..n {
            modes[(i, j)] = v[i];
        }
    }
    let c_modes = &c * &modes;
    let s_modes = &s * &modes;

    let s_norm = s.norm_max().max(f64::MIN_POSITIVE);
    let c_norm = c.norm_max();
    for j in 0..n_basis {
        let mut res: f64 = 0.0;
        let mut vmax: f64 = 0.0;
        for i in 0..n {
            res = res.max((s_modes[(i, j)] - values[j] * c_modes[(i, j)]).abs());
            vmax = vmax.max(modes[(i, j)].abs());
        }
        let rel = res / ((s_norm + values[j].abs() * c_norm) * vmax);
        if !(rel <= EIGEN_RESIDUAL_TOL) {
            return Err(Error::Eigen {
                cell,
                detail: format!("eigenpair {} has relative residual {rel:.3e}", j + 1),
            });
        }
    }

    Ok(CellSpectrum {
        cell,
        eigenvalues: values[..=n_basis].to_vec(),
        modes,
        c_modes,
    })
}

/// Eigenpairs of every coarse cell, in cell order.
pub fn build_aux_space(op: &OperatorSet, n_basis: usize) -> Result<AuxSpace> {
    let cells = (0..op.cells.len())
        .into_par_iter()
        .map(|i| solve_cell_eigen(op, i, n_basis))
        .collect::<Result<Vec<_>>>()?;
    Ok(AuxSpace { n_basis, cells })
}
