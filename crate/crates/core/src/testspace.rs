//! The projection `π` onto the auxiliary space and the localized test
//! functions spanning `W¹` (one per auxiliary mode) and `W²` (one per trial
//! basis function).
//!
//! With `A[m, n] = a(φ_n, φ_m)`, the adjoint form satisfies
//! `a*(u, v) = a(v, u) = (Aᵀu)·v`, so every test-function equation below has
//! `Aᵀ` on the left. The penalty `c(π·, π·)` is `U diag(ω²) Uᵀ` where the
//! columns of `U` are `C_i φ_j` on interior dofs and `ω` are the `π` weights.

use std::collections::HashMap;

use faer::linalg::solvers::{Solve, SolveLstsq};
use faer::sparse::Triplet;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::OperatorSet;
use crate::error::{Error, Result};
use crate::mesh::{coarse_cell_patch, vertex_neighborhood, CellBox, PatchIndexSet};
use crate::sparse::{self, Csc, SymbolicCache};
use crate::spectral::AuxSpace;

/// Relative residual accepted for a local solve after refinement.
pub const LOCAL_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiMode {
    /// `πu = Σ c⁽ⁱ⁾(u, φ_j) φ_j`, a `c`-orthogonal projection.
    #[default]
    Plain,
    /// Each term weighted by `1 / max(λ_j, floor)`.
    InverseLambda { floor: f64 },
}

/// Space for the second-stage local solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSpace {
    /// `V₀(ω⁺)`: zero on the patch boundary.
    #[default]
    ZeroTrace,
    /// `V(ω⁺)`: free on the patch boundary inside `Ω`, forms integrated over `ω⁺`.
    Free,
}

/// Factorization strategy for penalized local systems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSolver {
    /// `Augmented` when cells carry more than 4×4 fine cells, else `Direct`.
    #[default]
    Auto,
    /// Sparse LU of `Aᵀ + P` with `P` assembled.
    Direct,
    /// Sparse LU of `Aᵀ` plus a Woodbury correction for `P`.
    LowRank,
    /// Sparse LU of `[Aᵀ U; Uᵀ −diag(w)⁻¹]`, equivalent to `Aᵀ + U diag(w) Uᵀ`
    /// without the dense per-cell blocks of `P`.
    Augmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSpaceOptions {
    pub layers: usize,
    #[serde(default)]
    pub pi_mode: PiMode,
    #[serde(default)]
    pub eta_space: EtaSpace,
    #[serde(default)]
    pub local_solver: LocalSolver,
}

impl Default for TestSpaceOptions {
    fn default() -> Self {
        Self {
            layers: 3,
            pi_mode: PiMode::Plain,
            eta_space: EtaSpace::ZeroTrace,
            local_solver: LocalSolver::Auto,
        }
    }
}

pub struct PiOperator<'a> {
    op: &'a OperatorSet,
    aux: &'a AuxSpace,
    mode: PiMode,
    weights: Vec<Vec<f64>>,
}

/// A field stored per coarse cell on all vertices of the closed cell.
pub type BrokenField = Vec<Vec<f64>>;

impl<'a> PiOperator<'a> {
    pub fn new(op: &'a OperatorSet, aux: &'a AuxSpace, mode: PiMode) -> Result<Self> {
        let weights = aux
            .cells
            .iter()
            .map(|sp| {
                let scale = sp.next_eigenvalue().abs().max(f64::MIN_POSITIVE);
                sp.eigenvalues[..aux.n_basis]
                    .iter()
                    .map(|&l| match mode {
                        PiMode::Plain => Ok(1.0),
                        PiMode::InverseLambda { floor } => {
                            let d = l.max(floor);
                            if !(d > 1e-12 * scale) {
                                Err(Error::InvalidParameter(format!(
                                    "inverse-lambda weighting needs a positive floor: cell {} has \
                                     eigenvalue {l:.3e} with floor {floor:.3e}",
                                    sp.cell
                                )))
                            } else {
                                Ok(1.0 / d)
                            }
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { op, aux, mode, weights })
    }

    pub fn mode(&self) -> PiMode {
        self.mode
    }

    pub fn op(&self) -> &'a OperatorSet {
        self.op
    }

    pub fn aux(&self) -> &'a AuxSpace {
        self.aux
    }

    pub fn weight(&self, cell: usize, j: usize) -> f64 {
        self.weights[cell][j]
    }

    pub fn restrict(&self, u: &[f64]) -> BrokenField {
        (0..self.op.cells.len())
            .map(|i| self.op.restrict_to_cell(u, i))
            .collect()
    }

    /// `c⁽ⁱ⁾(x, φ_j)` per cell.
    pub fn coefficients(&self, x: &BrokenField) -> Vec<Vec<f64>> {
        self.aux
            .cells
            .iter()
            .zip(x)
            .map(|(sp, xi)| {
                (0..self.aux.n_basis)
                    .map(|j| (0..xi.len()).map(|k| sp.c_modes[(k, j)] * xi[k]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn apply_broken(&self, x: &BrokenField) -> BrokenField {
        let coef = self.coefficients(x);
        self.aux
            .cells
            .iter()
            .enumerate()
            .map(|(i, sp)| {
                let n = sp.modes.nrows();
                let mut out = vec![0.0; n];
                for j in 0..self.aux.n_basis {
                    let a = self.weights[i][j] * coef[i][j];
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += a * sp.modes[(k, j)];
                    }
                }
                out
            })
            .collect()
    }

    pub fn apply(&self, u: &[f64]) -> BrokenField {
        self.apply_broken(&self.restrict(u))
    }

    /// `Σᵢ c⁽ⁱ⁾(xᵢ, yᵢ)`.
    pub fn c_inner(&self, x: &BrokenField, y: &BrokenField) -> f64 {
        self.op
            .cells
            .iter()
            .zip(x.iter().zip(y))
            .map(|(b, (xi, yi))| sparse::bilinear(&b.c, xi, yi))
            .sum()
    }

    /// Auxiliary mode `φ_j⁽ⁱ⁾` as a broken field (zero on other cells).
    pub fn mode_field(&self, cell: usize, j: usize) -> BrokenField {
        self.aux
            .cells
            .iter()
            .map(|sp| {
                let n = sp.modes.nrows();
                if sp.cell == cell {
                    (0..n).map(|k| sp.modes[(k, j)]).collect()
                } else {
                    vec![0.0; n]
                }
            })
            .collect()
    }

    /// Column `C_i φ_j` of `U` on global interior dofs, as `(dof, value)`.
    pub fn penalty_column(&self, cell: usize, j: usize) -> Vec<(usize, f64)> {
        let sp = &self.aux.cells[cell];
        let mut out: Vec<(usize, f64)> = self.op.cells[cell]
            .vertices
            .iter()
            .enumerate()
            .filter_map(|(k, &v)| self.op.mesh.dof_of_vertex(v).map(|d| (d, sp.c_modes[(k, j)])))
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }

    /// Dense `U` with columns ordered cell-major then by mode.
    pub fn penalty_matrix_dense(&self) -> Mat<f64> {
        let n = self.op.n_dofs();
        let jn = self.aux.n_basis;
        let mut u = Mat::zeros(n, self.aux.dim());
        for i in 0..self.aux.cells.len() {
            for j in 0..jn {
                for (d, v) in self.penalty_column(i, j) {
                    u[(d, i * jn + j)] = v;
                }
            }
        }
        u
    }
}

/// Sparse vector on global interior dofs with sorted indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseColumn {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseColumn {
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&d, &v) in self.dofs.iter().zip(&self.values) {
            out[d] = v;
        }
        out
    }

    fn from_local(dofs: &[usize], x: &Mat<f64>, col: usize) -> Self {
        Self {
            dofs: dofs.to_vec(),
            values: (0..dofs.len()).map(|k| x[(k, col)]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// `ψ_j⁽ⁱ⁾` for coarse cell `cell`, mode `index` (0-based).
    Spectral { cell: usize, index: usize },
    /// `η_i + ξ_i` for trial basis function `trial` (0-based).
    Trial { trial: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub kind: ColumnKind,
    pub layers: usize,
    pub support: CellBox,
}

/// Test functions as sparse columns over interior dofs, spectral columns
/// first (cell-major), then trial-derived columns in trial order.
#[derive(Clone, Debug)]
pub struct TestSpace {
    pub columns: Csc,
    pub info: Vec<ColumnInfo>,
}

impl TestSpace {
    pub fn n_test(&self) -> usize {
        self.columns.ncols()
    }

    pub fn column(&self, k: usize) -> SparseColumn {
        let (rows, vals) = sparse::column(&self.columns, k);
        SparseColumn {
            dofs: rows.to_vec(),
            values: vals.to_vec(),
        }
    }

    /// Keeps the columns selected by `keep`, preserving order.
    pub fn select(&self, keep: impl Fn(&ColumnInfo) -> bool) -> TestSpace {
        let idx: Vec<usize> = (0..self.n_test()).filter(|&k| keep(&self.info[k])).collect();
        let mut trip = Vec::new();
        for (new, &k) in idx.iter().enumerate() {
            let (rows, vals) = sparse::column(&self.columns, k);
            trip.extend(rows.iter().zip(vals).map(|(&r, &v)| Triplet::new(r, new, v)));
        }
        TestSpace {
            columns: sparse::from_triplets(self.columns.nrows(), idx.len(), &trip),
            info: idx.iter().map(|&k| self.info[k]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum PatternKey {
    ZeroTrace { w: usize, h: usize },
    Free { w: usize, h: usize, clipped: [bool; 4] },
    Xi { w: usize, h: usize },
}

/// Shared state for a batch of local solves.
pub struct LocalContext<'a> {
    pi: &'a PiOperator<'a>,
    options: TestSpaceOptions,
    cache: SymbolicCache<(PatternKey, LocalSolver)>,
}

/// A penalized system `(Aᵀ + U diag(w) Uᵀ) x = b` on a patch.
struct PenalizedSystem {
    dofs: Vec<usize>,
    a_t: Csc,
    u: Csc,
    weights: Vec<f64>,
}

impl PenalizedSystem {
    fn apply(&self, x: &Mat<f64>) -> Mat<f64> {
        let mut y = dense_spmm(&self.a_t, x);
        let ut = dense_spmm_t(&self.u, x);
        for c in 0..x.ncols() {
            for k in 0..self.u.ncols() {
                let s = self.weights[k] * ut[(k, c)];
                if s == 0.0 {
                    continue;
                }
                let (rows, vals) = sparse::column(&self.u, k);
                for (&r, &v) in rows.iter().zip(vals) {
                    y[(r, c)] += s * v;
                }
            }
        }
        y
    }

    fn assembled(&self) -> Csc {
        let mut trip = Vec::with_capacity(self.a_t.compute_nnz());
        for j in 0..self.a_t.ncols() {
            let (rows, vals) = sparse::column(&self.a_t, j);
            trip.extend(rows.iter().zip(vals).map(|(&r, &v)| Triplet::new(r, j, v)));
        }
        for k in 0..self.u.ncols() {
            let (rows, vals) = sparse::column(&self.u, k);
            let w = self.weights[k];
            for (&r, &vr) in rows.iter().zip(vals) {
                for (&c, &vc) in rows.iter().zip(vals) {
                    trip.push(Triplet::new(r, c, w * vr * vc));
                }
            }
        }
        let n = self.dofs.len();
        sparse::from_triplets(n, n, &trip)
    }

    fn augmented(&self) -> Csc {
        let n = self.dofs.len();
        let k = self.u.ncols();
        let mut trip = Vec::with_capacity(self.a_t.compute_nnz() + 2 * self.u.compute_nnz() + k);
        for j in 0..n {
            let (rows, vals) = sparse::column(&self.a_t, j);
            trip.extend(rows.iter().zip(vals).map(|(&r, &v)| Triplet::new(r, j, v)));
        }
        for c in 0..k {
            let (rows, vals) = sparse::column(&self.u, c);
            for (&r, &v) in rows.iter().zip(vals) {
                trip.push(Triplet::new(r, n + c, v));
                trip.push(Triplet::new(n + c, r, v));
            }
            trip.push(Triplet::new(n + c, n + c, -1.0 / self.weights[c]));
        }
        sparse::from_triplets(n + k, n + k, &trip)
    }
}

fn dense_spmm(a: &Csc, x: &Mat<f64>) -> Mat<f64> {
    let mut y = Mat::zeros(a.nrows(), x.ncols());
    for c in 0..x.ncols() {
        for j in 0..a.ncols() {
            let xj = x[(j, c)];
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = sparse::column(a, j);
            for (&r, &v) in rows.iter().zip(vals) {
                y[(r, c)] += v * xj;
            }
        }
    }
    y
}

/// `aᵀ x`.
fn dense_spmm_t(a: &Csc, x: &Mat<f64>) -> Mat<f64> {
    let mut y = Mat::zeros(a.ncols(), x.ncols());
    for c in 0..x.ncols() {
        for j in 0..a.ncols() {
            let (rows, vals) = sparse::column(a, j);
            y[(j, c)] = rows.iter().zip(vals).map(|(&r, &v)| v * x[(r, c)]).sum();
        }
    }
    y
}

fn frobenius(x: &Mat<f64>) -> f64 {
    x.norm_l2()
}

impl<'a> LocalContext<'a> {
    pub fn new(pi: &'a PiOperator<'a>, options: TestSpaceOptions) -> Self {
        Self {
            pi,
            options,
            cache: SymbolicCache::new(),
        }
    }

    fn resolved_solver(&self) -> LocalSolver {
        match self.options.local_solver {
            LocalSolver::Auto if self.pi.op.mesh.m_refine() > 4 => LocalSolver::Augmented,
            LocalSolver::Auto => LocalSolver::Direct,
            s => s,
        }
    }

    /// Penalty columns of cells inside `cells`, restricted to `dofs`.
    fn local_penalty(&self, cells: CellBox, dofs: &[usize], squared: bool) -> (Csc, Vec<f64>) {
        let mesh = &self.pi.op.mesh;
        let jn = self.pi.aux.n_basis;
        let mut trip = Vec::new();
        let mut weights = Vec::new();
        let mut col = 0;
        for cy in cells.y0..cells.y1 {
            for cx in cells.x0..cells.x1 {
                let cell = mesh.coarse_cell_index(cx, cy);
                for j in 0..jn {
                    for (d, v) in self.pi.penalty_column(cell, j) {
                        if let Ok(l) = dofs.binary_search(&d) {
                            trip.push(Triplet::new(l, col, v));
                        }
                    }
                    let w = self.pi.weight(cell, j);
                    weights.push(if squared { w * w } else { w });
                    col += 1;
                }
            }
        }
        (sparse::from_triplets(dofs.len(), col, &trip), weights)
    }

    fn zero_trace_system(&self, patch: &PatchIndexSet) -> Result<(PenalizedSystem, PatternKey)> {
        let op = self.pi.op;
        let dofs = patch.dofs().to_vec();
        if dofs.is_empty() {
            return Err(Error::EmptyPatch);
        }
        let a_t = sparse::submatrix(&op.a_t, &dofs, &dofs);
        let (u, weights) = self.local_penalty(patch.cells(), &dofs, true);
        let c = patch.cells();
        Ok((
            PenalizedSystem { dofs, a_t, u, weights },
            PatternKey::ZeroTrace {
                w: c.width(),
                h: c.height(),
            },
        ))
    }

    fn free_system(&self, patch: &PatchIndexSet) -> Result<(PenalizedSystem, PatternKey, Csc)> {
        let op = self.pi.op;
        let mesh = &op.mesh;
        let mut dofs = patch.free_dofs(mesh);
        dofs.sort_unstable();
        if dofs.is_empty() {
            return Err(Error::EmptyPatch);
        }
        let c = patch.cells();
        let forms = op.assemble_on_box(c, &dofs);
        let (u, weights) = self.local_penalty(c, &dofs, true);
        let n = mesh.n_coarse();
        let key = PatternKey::Free {
            w: c.width(),
            h: c.height(),
            clipped: [c.x0 == 0, c.x1 == n, c.y0 == 0, c.y1 == n],
        };
        Ok((
            PenalizedSystem {
                dofs,
                a_t: forms.a_t,
                u,
                weights,
            },
            key,
            forms.vmat,
        ))
    }

    fn solve(&self, sys: &PenalizedSystem, key: PatternKey, rhs: &Mat<f64>, context: &str) -> Result<Mat<f64>> {
        let solver = match self.resolved_solver() {
            _ if sys.u.ncols() == 0 => LocalSolver::Direct,
            s => s,
        };
        let solve_once: Box<dyn Fn(&Mat<f64>) -> Mat<f64>> = match solver {
            LocalSolver::LowRank => {
                let lu = self.cache.factor((key, solver), &sys.a_t, context)?;
                let ud = sparse::to_dense(&sys.u);
                let x = lu.solve_mat(&ud);
                let z = dense_spmm_t(&sys.u, &x);
                let k = sys.u.ncols();
                let cap = Mat::from_fn(k, k, |r, c| if r == c { 1.0 } else { 0.0 } + sys.weights[r] * z[(r, c)]);
                let cap_lu = cap.partial_piv_lu();
                let weights = sys.weights.clone();
                let u = sys.u.clone();
                Box::new(move |b: &Mat<f64>| {
                    let y = lu.solve_mat(b);
                    let mut t = dense_spmm_t(&u, &y);
                    for r in 0..k {
                        for c in 0..t.ncols() {
                            t[(r, c)] *= weights[r];
                        }
                    }
                    let s = cap_lu.solve(&t);
                    &y - &x * &s
                })
            }
            LocalSolver::Augmented => {
                let lu = self.cache.factor((key, solver), &sys.augmented(), context)?;
                let (n, k) = (sys.dofs.len(), sys.u.ncols());
                Box::new(move |b: &Mat<f64>| {
                    let padded = Mat::from_fn(n + k, b.ncols(), |r, c| if r < n { b[(r, c)] } else { 0.0 });
                    let x = lu.solve_mat(&padded);
                    x.subrows(0, n).to_owned()
                })
            }
            _ => {
                let lu = self
                    .cache
                    .factor((key, LocalSolver::Direct), &sys.assembled(), context)?;
                Box::new(move |b: &Mat<f64>| lu.solve_mat(b))
            }
        };
        let scale = frobenius(rhs);
        let mut x = solve_once(rhs);
        if scale == 0.0 {
            return Ok(x);
        }
        for _ in 0..3 {
            let r = rhs - sys.apply(&x);
            let rel = frobenius(&r) / scale;
            if rel <= 1e-13 {
                return Ok(x);
            }
            x = &x + &solve_once(&r);
        }
        let rel = frobenius(&(rhs - sys.apply(&x))) / scale;
        if rel > LOCAL_RESIDUAL_TOL {
            return Err(Error::Residual {
                context: context.into(),
                residual: rel,
            });
        }
        Ok(x)
    }

    /// All `J` functions `ψ_j⁽ⁱ⁾` on `K_i⁺`.
    pub fn compute_psi(&self, cell: usize) -> Result<Vec<SparseColumn>> {
        let op = self.pi.op;
        let patch = coarse_cell_patch(&op.mesh, cell, self.options.layers)?;
        let (sys, key) = self.zero_trace_system(&patch)?;
        let jn = self.pi.aux.n_basis;
        let mut rhs = Mat::zeros(sys.dofs.len(), jn);
        for j in 0..jn {
            let w = self.pi.weight(cell, j);
            for (d, v) in self.pi.penalty_column(cell, j) {
                if let Ok(l) = sys.dofs.binary_search(&d) {
                    rhs[(l, j)] = w * w * v;
                }
            }
        }
        let x = self.solve(&sys, key, &rhs, &format!("psi, cell {cell}"))?;
        Ok((0..jn).map(|j| SparseColumn::from_local(&sys.dofs, &x, j)).collect())
    }

    /// `ξ_i` on `ω_i`: `a(v, ξ_i) = s(q_i, v)`.
    pub fn compute_xi(&self, trial: usize) -> Result<SparseColumn> {
        let op = self.pi.op;
        let mesh = &op.mesh;
        let vertex = *mesh
            .interior_coarse_vertices()
            .get(trial)
            .ok_or(Error::IndexOutOfRange {
                what: "trial function",
                index: trial,
                limit: mesh.n_trial(),
            })?;
        let omega = vertex_neighborhood(mesh, vertex, 0)?;
        let dofs = omega.dofs();
        let a_t = sparse::submatrix(&op.a_t, dofs, dofs);
        let sq = sparse::matvec(&op.s, &op.trial_column(trial));
        let rhs = Mat::from_fn(dofs.len(), 1, |k, _| sq[dofs[k]]);
        let c = omega.cells();
        let key = PatternKey::Xi {
            w: c.width(),
            h: c.height(),
        };
        let lu = self
            .cache
            .factor((key, LocalSolver::Direct), &a_t, &format!("xi, trial {trial}"))?;
        let mut x = lu.solve_mat(&rhs);
        let r = &rhs - dense_spmm(&a_t, &x);
        x = &x + lu.solve_mat(&r);
        let rel = frobenius(&(&rhs - dense_spmm(&a_t, &x))) / frobenius(&rhs).max(f64::MIN_POSITIVE);
        if rel > LOCAL_RESIDUAL_TOL {
            return Err(Error::Residual {
                context: format!("xi, trial {trial}"),
                residual: rel,
            });
        }
        Ok(SparseColumn::from_local(dofs, &x, 0))
    }

    /// `η_i` on `ω_i⁺` given `ξ_i`.
    pub fn compute_eta(&self, trial: usize, xi: &SparseColumn) -> Result<SparseColumn> {
        let op = self.pi.op;
        let mesh = &op.mesh;
        let vertex = mesh.interior_coarse_vertices()[trial];
        let patch = vertex_neighborhood(mesh, vertex, self.options.layers)?;
        let q = op.trial_column(trial);
        let n = op.n_dofs();
        let xi_dense = xi.to_dense(n);
        let context = format!("eta, trial {trial}");
        match self.options.eta_space {
            EtaSpace::ZeroTrace => {
                let (sys, key) = self.zero_trace_system(&patch)?;
                let vq = sparse::matvec(&op.vmat, &q);
                let ax = sparse::matvec(&op.a_t, &xi_dense);
                let rhs = Mat::from_fn(sys.dofs.len(), 1, |k, _| vq[sys.dofs[k]] - ax[sys.dofs[k]]);
                let x = self.solve(&sys, key, &rhs, &context)?;
                Ok(SparseColumn::from_local(&sys.dofs, &x, 0))
            }
            EtaSpace::Free => {
                let (sys, key, vmat) = self.free_system(&patch)?;
                let ql: Vec<f64> = sys.dofs.iter().map(|&d| q[d]).collect();
                let xl: Vec<f64> = sys.dofs.iter().map(|&d| xi_dense[d]).collect();
                let vq = sparse::matvec(&vmat, &ql);
                let ax = sparse::matvec(&sys.a_t, &xl);
                let rhs = Mat::from_fn(sys.dofs.len(), 1, |k, _| vq[k] - ax[k]);
                let x = self.solve(&sys, key, &rhs, &context)?;
                Ok(SparseColumn::from_local(&sys.dofs, &x, 0))
            }
        }
    }

    /// `η_i + ξ_i`.
    pub fn compute_trial_column(&self, trial: usize) -> Result<SparseColumn> {
        let xi = self.compute_xi(trial)?;
        let eta = self.compute_eta(trial, &xi)?;
        Ok(add_columns(&eta, &xi))
    }
}

fn add_columns(a: &SparseColumn, b: &SparseColumn) -> SparseColumn {
    let mut acc: HashMap<usize, f64> = a.dofs.iter().copied().zip(a.values.iter().copied()).collect();
    for (&d, &v) in b.dofs.iter().zip(&b.values) {
        *acc.entry(d).or_insert(0.0) += v;
    }
    let mut entries: Vec<(usize, f64)> = acc.into_iter().collect();
    entries.sort_by_key(|e| e.0);
    SparseColumn {
        dofs: entries.iter().map(|e| e.0).collect(),
        values: entries.iter().map(|e| e.1).collect(),
    }
}

/// Builds `W¹` and `W²` with `options.layers` oversampling layers.
pub fn build_test_space(pi: &PiOperator<'_>, options: TestSpaceOptions) -> Result<TestSpace> {
    let ctx = LocalContext::new(pi, options);
    let op = pi.op;
    let mesh = &op.mesh;
    let jn = pi.aux.n_basis;

    let psi: Vec<Vec<SparseColumn>> = (0..mesh.n_coarse_cells())
        .into_par_iter()
        .map(|i| ctx.compute_psi(i))
        .collect::<Result<_>>()?;
    let trial: Vec<SparseColumn> = (0..mesh.n_trial())
        .into_par_iter()
        .map(|t| ctx.compute_trial_column(t))
        .collect::<Result<_>>()?;

    let mut info = Vec::with_capacity(psi.len() * jn + trial.len());
    for (i, cols) in psi.iter().enumerate() {
        let support = coarse_cell_patch(mesh, i, options.layers)?.cells();
        for j in 0..cols.len() {
            info.push(ColumnInfo {
                kind: ColumnKind::Spectral { cell: i, index: j },
                layers: options.layers,
                support,
            });
        }
    }
    let verts = mesh.interior_coarse_vertices();
    for (t, &v) in verts.iter().enumerate() {
        info.push(ColumnInfo {
            kind: ColumnKind::Trial { trial: t },
            layers: options.layers,
            support: vertex_neighborhood(mesh, v, options.layers)?.cells(),
        });
    }
    let columns = sparse::from_sorted_columns(
        op.n_dofs(),
        psi.iter()
            .flatten()
            .chain(&trial)
            .map(|c| (c.dofs.as_slice(), c.values.as_slice())),
    );
    Ok(TestSpace { columns, info })
}

/// Default dof ceiling for dense global solves.
pub const GLOBAL_DOF_THRESHOLD: usize = 5000;

/// Global test functions computed by dense factorization over all of `V`.
pub struct GlobalTestSpace {
    /// `ψ_j⁽ⁱ⁾`, cell-major.
    pub psi: Mat<f64>,
    pub xi: Mat<f64>,
    pub eta: Mat<f64>,
}

impl GlobalTestSpace {
    /// `η_i + ξ_i`.
    pub fn trial_columns(&self) -> Mat<f64> {
        &self.eta + &self.xi
    }
}

fn check_threshold(n: usize, threshold: usize) -> Result<()> {
    if n > threshold {
        return Err(Error::TooLarge { dofs: n, threshold });
    }
    Ok(())
}

/// `W¹_glo` uses `c(πψ, v) = c(φ, πv)`; `W²_glo` uses `c(πη, πv)`.
pub fn build_global_test_space(pi: &PiOperator<'_>, threshold: usize) -> Result<GlobalTestSpace> {
    let op = pi.op;
    let n = op.n_dofs();
    check_threshold(n, threshold)?;
    let mesh = &op.mesh;
    let jn = pi.aux.n_basis;
    let u = pi.penalty_matrix_dense();
    let a_t = sparse::to_dense(&op.a_t);
    let w: Vec<f64> = (0..mesh.n_coarse_cells())
        .flat_map(|i| (0..jn).map(move |j| (i, j)))
        .map(|(i, j)| pi.weight(i, j))
        .collect();

    let penalized = |power: i32| -> Mat<f64> {
        let uw = Mat::from_fn(n, u.ncols(), |r, c| u[(r, c)] * w[c].powi(power));
        &a_t + &uw * u.transpose()
    };
    let m1 = penalized(1);
    let lu1 = m1.partial_piv_lu();
    let rhs1 = Mat::from_fn(n, u.ncols(), |r, c| u[(r, c)] * w[c]);
    let psi = lu1.solve(&rhs1);

    // ξ on each ω by dense solve of the restricted adjoint
    let nt = mesh.n_trial();
    let mut xi = Mat::zeros(n, nt);
    let mut rhs2 = Mat::zeros(n, nt);
    for (t, &v) in mesh.interior_coarse_vertices().iter().enumerate() {
        let omega = vertex_neighborhood(mesh, v, 0)?;
        let dofs = omega.dofs();
        let local = Mat::from_fn(dofs.len(), dofs.len(), |r, c| a_t[(dofs[r], dofs[c])]);
        let q = op.trial_column(t);
        let sq = sparse::matvec(&op.s, &q);
        let b = Mat::from_fn(dofs.len(), 1, |r, _| sq[dofs[r]]);
        let x = local.partial_piv_lu().solve(&b);
        for (r, &d) in dofs.iter().enumerate() {
            xi[(d, t)] = x[(r, 0)];
        }
        let vq = sparse::matvec(&op.vmat, &q);
        let xcol: Vec<f64> = (0..n).map(|r| xi[(r, t)]).collect();
        let ax = sparse::matvec(&op.a_t, &xcol);
        for r in 0..n {
            rhs2[(r, t)] = vq[r] - ax[r];
        }
    }
    let eta = if matches!(pi.mode(), PiMode::Plain) {
        lu1.solve(&rhs2)
    } else {
        penalized(2).partial_piv_lu().solve(&rhs2)
    };
    Ok(GlobalTestSpace { psi, xi, eta })
}

/// Residuals of the global stability identities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalVerification {
    /// Per trial function: `min_β ‖Aᵀ(η+ξ+Ψβ) − V q‖ / ‖V q‖`.
    pub exactness_residuals: Vec<f64>,
    /// Per spectral column: `min_γ ‖Aᵀψ − Uγ‖ / ‖Aᵀψ‖`.
    pub membership_residuals: Vec<f64>,
    pub max_exactness_residual: f64,
    pub max_membership_residual: f64,
}

fn column_norms(x: &Mat<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|c| (0..x.nrows()).map(|r| x[(r, c)] * x[(r, c)]).sum::<f64>().sqrt())
        .collect()
}

/// Relative least-squares residual of each column of `b` against `range(a)`.
fn lstsq_residuals(a: &Mat<f64>, b: &Mat<f64>) -> Vec<f64> {
    let qr = a.col_piv_qr();
    let coef = qr.solve_lstsq(b);
    let r = b - a * &coef;
    column_norms(&r)
        .into_iter()
        .zip(column_norms(b))
        .map(|(num, den)| if den == 0.0 { num } else { num / den })
        .collect()
}

pub fn verify_global(pi: &PiOperator<'_>, global: &GlobalTestSpace) -> GlobalVerification {
    let op = pi.op;
    let a_t = sparse::to_dense(&op.a_t);
    let a_psi = &a_t * &global.psi;
    let a_w2 = &a_t * global.trial_columns();
    let vq = sparse::to_dense(&op.vmat) * sparse::to_dense(&op.trial);
    // Aᵀ(η+ξ) − Vq must lie in range(AᵀΨ)
    let target = &vq - &a_w2;
    let mut exact = lstsq_residuals(&a_psi, &target);
    let vq_norms = column_norms(&vq);
    let t_norms = column_norms(&target);
    for (k, e) in exact.iter_mut().enumerate() {
        *e *= t_norms[k] / vq_norms[k].max(f64::MIN_POSITIVE);
    }
    let u = pi.penalty_matrix_dense();
    let member = lstsq_residuals(&u, &a_psi);
    GlobalVerification {
        max_exactness_residual: exact.iter().fold(0.0, |m: f64, v| m.max(*v)),
        max_membership_residual: member.iter().fold(0.0, |m: f64, v| m.max(*v)),
        exactness_residuals: exact,
        membership_residuals: member,
    }
}

/// A single localized column, for decay measurements.
pub fn localized_column(pi: &PiOperator<'_>, kind: ColumnKind, options: TestSpaceOptions) -> Result<Vec<f64>> {
    let ctx = LocalContext::new(pi, options);
    let n = pi.op.n_dofs();
    match kind {
        ColumnKind::Spectral { cell, index } => {
            let cols = ctx.compute_psi(cell)?;
            let col = cols.get(index).ok_or(Error::IndexOutOfRange {
                what: "auxiliary mode",
                index,
                limit: cols.len(),
            })?;
            Ok(col.to_dense(n))
        }
        ColumnKind::Trial { trial } => Ok(ctx.compute_trial_column(trial)?.to_dense(n)),
    }
}

/// The global counterpart of `kind`.
pub fn global_column(global: &GlobalTestSpace, kind: ColumnKind, n_basis: usize) -> Vec<f64> {
    let (m, c) = match kind {
        ColumnKind::Spectral { cell, index } => (&global.psi, cell * n_basis + index),
        ColumnKind::Trial { trial } => {
            return (0..global.eta.nrows())
                .map(|r| global.eta[(r, trial)] + global.xi[(r, trial)])
                .collect()
        }
    };
    (0..m.nrows()).map(|r| m[(r, c)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_all;
    use crate::coeff::{field_example1, CoefficientField, Source};
    use crate::mesh::MeshHierarchy;
    use crate::spectral::build_aux_space;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex1(nc: usize, m: usize) -> OperatorSet {
        let mesh = MeshHierarchy::new(nc, m).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_diff(a: &BrokenField, b: &BrokenField) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn pi_is_idempotent_projection() {
        let op = ex1(2, 6);
        let aux = build_aux_space(&op, 3).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let u = random(op.n_dofs(), 1);
        let pu = pi.apply(&u);
        let ppu = pi.apply_broken(&pu);
        assert!(max_diff(&pu, &ppu) < 1e-10);
        let phi = pi.mode_field(2, 1);
        assert!(max_diff(&pi.apply_broken(&phi), &phi) < 1e-10);
    }

    #[test]
    fn pi_is_c_self_adjoint() {
        let op = ex1(2, 5);
        let aux = build_aux_space(&op, 2).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let u = pi.restrict(&random(op.n_dofs(), 2));
        let v = pi.restrict(&random(op.n_dofs(), 3));
        let a = pi.c_inner(&pi.apply_broken(&u), &v);
        let b = pi.c_inner(&u, &pi.apply_broken(&v));
        let c = pi.c_inner(&pi.apply_broken(&u), &pi.apply_broken(&v));
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        assert!((a - c).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn inverse_lambda_needs_floor() {
        let op = ex1(2, 4);
        let aux = build_aux_space(&op, 2).unwrap();
        assert!(PiOperator::new(&op, &aux, PiMode::InverseLambda { floor: 0.0 }).is_err());
        let pi = PiOperator::new(&op, &aux, PiMode::InverseLambda { floor: 1e-2 }).unwrap();
        assert_eq!(pi.weight(0, 0), 100.0);
    }

    #[test]
    fn xi_solves_adjoint_problem() {
        let op = ex1(4, 4);
        let aux = build_aux_space(&op, 3).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let ctx = LocalContext::new(&pi, TestSpaceOptions::default());
        let xi = ctx.compute_xi(4).unwrap();
        let n = op.n_dofs();
        let xd = xi.to_dense(n);
        let omega = vertex_neighborhood(&op.mesh, op.mesh.interior_coarse_vertices()[4], 0).unwrap();
        assert_eq!(xi.dofs, omega.dofs());
        let lhs = sparse::matvec(&op.a_t, &xd);
        let rhs = sparse::matvec(&op.s, &op.trial_column(4));
        let scale = sparse::norm(&rhs);
        for &d in omega.dofs() {
            assert!((lhs[d] - rhs[d]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn local_solvers_agree() {
        let op = ex1(4, 4);
        let aux = build_aux_space(&op, 3).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let base = TestSpaceOptions {
            layers: 1,
            ..Default::default()
        };
        let a = LocalContext::new(
            &pi,
            TestSpaceOptions {
                local_solver: LocalSolver::Direct,
                ..base
            },
        );
        let n = op.n_dofs();
        for other in [LocalSolver::LowRank, LocalSolver::Augmented] {
            let b = LocalContext::new(
                &pi,
                TestSpaceOptions {
                    local_solver: other,
                    ..base
                },
            );
            for cell in [0, 5] {
                let x = a.compute_psi(cell).unwrap();
                let y = b.compute_psi(cell).unwrap();
                for (p, q) in x.iter().zip(&y) {
                    let d: Vec<f64> = p.to_dense(n).iter().zip(q.to_dense(n)).map(|(s, t)| s - t).collect();
                    assert!(op.v_norm(&d) <= 1e-10 * op.v_norm(&p.to_dense(n)));
                }
            }
            let x = a.compute_trial_column(3).unwrap().to_dense(n);
            let y = b.compute_trial_column(3).unwrap().to_dense(n);
            let d: Vec<f64> = x.iter().zip(&y).map(|(s, t)| s - t).collect();
            assert!(op.v_norm(&d) <= 1e-10 * op.v_norm(&x));
        }
    }

    #[test]
    fn counts_and_supports() {
        let op = ex1(4, 3);
        let aux = build_aux_space(&op, 2).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let opts = TestSpaceOptions {
            layers: 1,
            ..Default::default()
        };
        let ws = build_test_space(&pi, opts).unwrap();
        assert_eq!(ws.n_test(), 16 * 2 + 9);
        for k in 0..ws.n_test() {
            let col = ws.column(k);
            let patch = op.mesh.patch(ws.info[k].support);
            assert!(col.dofs.iter().all(|&d| patch.contains_dof(d)));
            assert!(col.values.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn free_eta_space_runs() {
        let op = ex1(4, 3);
        let aux = build_aux_space(&op, 2).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let opts = TestSpaceOptions {
            layers: 0,
            eta_space: EtaSpace::Free,
            ..Default::default()
        };
        let ctx = LocalContext::new(&pi, opts);
        let col = ctx.compute_trial_column(4).unwrap();
        let patch = vertex_neighborhood(&op.mesh, op.mesh.interior_coarse_vertices()[4], 0).unwrap();
        assert!(col.dofs.len() > patch.n_dofs());
    }

    #[test]
    fn global_threshold_is_enforced() {
        let op = ex1(4, 4);
        let aux = build_aux_space(&op, 1).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        assert!(matches!(build_global_test_space(&pi, 10), Err(Error::TooLarge { .. })));
    }
}
