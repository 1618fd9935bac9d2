//! Fine-scale reference solve, the Petrov–Galerkin saddle system
//!
//! ```text
//! [ R   G ] [w]   [Wᵀ F]
//! [ Gᵀ  0 ] [u] = [ 0  ]     R = Wᵀ A M⁻¹ Aᵀ W,  G = Wᵀ A Q
//! ```
//!
//! with `M` the lumped `C` (or `V`), and `V`-norm error measures.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::assembly::OperatorSet;
use crate::error::{Error, Result};
use crate::sparse::{self, Csc, SparseLu};
use crate::testspace::TestSpace;

/// Relative residual required of the fine solve.
pub const FINE_RESIDUAL_TOL: f64 = 1e-10;

/// Pivot threshold for the rank of `G`, relative to `‖G‖_F`.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Row-sum lumped `C`.
    #[default]
    LumpedC,
    /// Exact `V` through a sparse factorization; small meshes only.
    FullV,
}

/// Solves `A u = F` on interior dofs.
pub fn fine_solve(op: &OperatorSet) -> Result<Vec<f64>> {
    let f = &op.load;
    let fnorm = sparse::norm(f);
    if fnorm == 0.0 {
        return Ok(vec![0.0; f.len()]);
    }
    let lu = SparseLu::new(&op.a, "fine operator")?;
    let mut u = lu.solve_vec(f);
    let residual = |u: &[f64]| -> Vec<f64> { sparse::matvec(&op.a, u).iter().zip(f).map(|(au, fi)| fi - au).collect() };
    let r = residual(&u);
    let du = lu.solve_vec(&r);
    u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
    let rel = sparse::norm(&residual(&u)) / fnorm;
    if rel > FINE_RESIDUAL_TOL {
        return Err(Error::Residual {
            context: "fine operator".into(),
            residual: rel,
        });
    }
    Ok(u)
}

#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub r: Mat<f64>,
    pub g: Mat<f64>,
    pub rhs: Vec<f64>,
}

impl SaddleSystem {
    pub fn n_test(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_trial(&self) -> usize {
        self.g.ncols()
    }
}

/// `Σ_k y_k y_kᵀ / m_k` over the rows `y_k` of `y`, as a dense symmetric matrix.
fn weighted_gram(y: &Csc, inv_metric: &[f64]) -> Mat<f64> {
    let n = y.ncols();
    let rows = sparse::transpose(y);
    let mut data = vec![0.0; n * n];
    for k in 0..rows.ncols() {
        let (cols, vals) = sparse::column(&rows, k);
        let s = inv_metric[k];
        for (p, (&cp, &vp)) in cols.iter().zip(vals).enumerate() {
            let base = cp * n;
            let a = vp * s;
            for (&cq, &vq) in cols[p..].iter().zip(&vals[p..]) {
                data[base + cq] += a * vq;
            }
        }
    }
    // column cp holds entries with row ≥ cp
    Mat::from_fn(n, n, |i, j| if i >= j { data[j * n + i] } else { data[i * n + j] })
}

/// Forms `R`, `G` and the right-hand side for test space `ws`.
pub fn assemble_saddle(op: &OperatorSet, ws: &TestSpace, metric: Metric) -> Result<SaddleSystem> {
    let y = sparse::matmul(&op.a_t, &ws.columns);
    let r = match metric {
        Metric::LumpedC => {
            let inv: Vec<f64> = op.lumped_b.iter().map(|b| 1.0 / b).collect();
            weighted_gram(&y, &inv)
        }
        Metric::FullV => {
            let lu = SparseLu::new(&op.vmat, "V metric")?;
            let yd = sparse::to_dense(&y);
            let x = lu.solve_mat(&yd);
            let r = yd.transpose() * &x;
            Mat::from_fn(r.nrows(), r.ncols(), |i, j| 0.5 * (r[(i, j)] + r[(j, i)]))
        }
    };
    let g = sparse::to_dense(&sparse::matmul(&sparse::transpose(&y), &op.trial));
    let rhs = (0..ws.n_test())
        .map(|k| {
            let (rows, vals) = sparse::column(&ws.columns, k);
            rows.iter().zip(vals).map(|(&i, &v)| v * op.load[i]).sum()
        })
        .collect();
    Ok(SaddleSystem { r, g, rhs })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleMethod {
    /// Cholesky of `R` and of the Schur complement `Gᵀ R⁻¹ G`.
    Schur,
    /// Partial-pivoting LU of the full block matrix.
    BlockLu,
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub rank: usize,
    pub method: SaddleMethod,
    /// `‖Gᵀw‖ / (‖G‖_F ‖w‖)`, zero when `w = 0`.
    pub constraint_residual: f64,
    /// `√(wᵀ R w)`.
    pub w_norm: f64,
}

/// Numerical rank of `g` from column-pivoted QR.
pub fn numerical_rank(g: &Mat<f64>) -> usize {
    let norm = g.norm_l2();
    if norm == 0.0 {
        return 0;
    }
    let qr = g.col_piv_qr();
    let r = qr.R();
    let k = r.nrows().min(r.ncols());
    (0..k).filter(|&i| r[(i, i)].abs() > RANK_TOL * norm).count()
}

fn col(x: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..x.nrows()).map(|i| x[(i, j)]).collect()
}

fn as_column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn solve_saddle(sys: &SaddleSystem) -> Result<SaddleSolution> {
    let nt = sys.n_test();
    let nc = sys.n_trial();
    let rank = numerical_rank(&sys.g);
    if rank < nc {
        return Err(Error::RankDeficient { rank, expected: nc });
    }
    let rhs = as_column(&sys.rhs);

    let schur = || -> Option<(Mat<f64>, Mat<f64>)> {
        let llt = sys.r.llt(Side::Lower).ok()?;
        let x = llt.solve(&sys.g);
        let z = llt.solve(&rhs);
        let s = sys.g.transpose() * &x;
        let s = Mat::from_fn(nc, nc, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
        let u = s.llt(Side::Lower).ok()?.solve(sys.g.transpose() * &z);
        let w = &z - &x * &u;
        Some((w, u))
    };
    let (w, u, method) = match schur() {
        Some((w, u)) => (w, u, SaddleMethod::Schur),
        None => {
            let n = nt + nc;
            let k = Mat::from_fn(n, n, |i, j| match (i < nt, j < nt) {
                (true, true) => sys.r[(i, j)],
                (true, false) => sys.g[(i, j - nt)],
                (false, true) => sys.g[(j, i - nt)],
                (false, false) => 0.0,
            });
            let b = Mat::from_fn(n, 1, |i, _| if i < nt { sys.rhs[i] } else { 0.0 });
            let x = k.partial_piv_lu().solve(&b);
            let w = Mat::from_fn(nt, 1, |i, _| x[(i, 0)]);
            let u = Mat::from_fn(nc, 1, |i, _| x[(nt + i, 0)]);
            (w, u, SaddleMethod::BlockLu)
        }
    };
    let w = col(&w, 0);
    let u = col(&u, 0);
    let wn = sparse::norm(&w);
    let constraint_residual = if wn == 0.0 {
        0.0
    } else {
        let gtw = sys.g.transpose() * as_column(&w);
        gtw.norm_l2() / (sys.g.norm_l2() * wn)
    };
    let rw = &sys.r * as_column(&w);
    let w_norm = sparse::dot(&w, &col(&rw, 0)).max(0.0).sqrt();
    if !u.iter().chain(&w).all(|v| v.is_finite()) {
        return Err(Error::Factorization {
            context: "saddle system".into(),
            detail: "non-finite solution".into(),
        });
    }
    Ok(SaddleSolution {
        w,
        u,
        rank,
        method,
        constraint_residual,
        w_norm,
    })
}

/// Coefficients of the `V`-orthogonal projection of `u` onto `range(Q)`.
pub fn v_projection(op: &OperatorSet, u: &[f64]) -> Result<Vec<f64>> {
    let vq = sparse::matmul(&op.vmat, &op.trial);
    let gram = sparse::to_dense(&sparse::matmul(&sparse::transpose(&op.trial), &vq));
    let nc = gram.nrows();
    let gram = Mat::from_fn(nc, nc, |i, j| 0.5 * (gram[(i, j)] + gram[(j, i)]));
    let vu = sparse::matvec(&op.vmat, u);
    let b = as_column(&sparse::matvec(&sparse::transpose(&op.trial), &vu));
    let llt = gram.llt(Side::Lower).map_err(|e| Error::Factorization {
        context: "trial Gram matrix".into(),
        detail: format!("{e:?}"),
    })?;
    Ok(col(&llt.solve(&b), 0))
}

/// Fine vector `Q α`.
pub fn trial_field(op: &OperatorSet, alpha: &[f64]) -> Vec<f64> {
    sparse::matvec(&op.trial, alpha)
}

/// Absolute and relative `V`-norm errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMeasures {
    pub fine_norm: f64,
    pub v_error_abs: f64,
    pub proj_error_abs: f64,
    /// Relative errors; zero when `fine_norm = 0`.
    pub v_error: f64,
    pub proj_error: f64,
    /// `v_error / proj_error`; absent when the projection error vanishes.
    pub ratio: Option<f64>,
}

pub fn error_measures(op: &OperatorSet, u_fine: &[f64], u_ms: &[f64], u_proj: &[f64]) -> ErrorMeasures {
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let fine_norm = op.v_norm(u_fine);
    let v_error_abs = op.v_norm(&diff(u_fine, u_ms));
    let proj_error_abs = op.v_norm(&diff(u_fine, u_proj));
    let rel = |e: f64| if fine_norm == 0.0 { 0.0 } else { e / fine_norm };
    ErrorMeasures {
        fine_norm,
        v_error_abs,
        proj_error_abs,
        v_error: rel(v_error_abs),
        proj_error: rel(proj_error_abs),
        ratio: (proj_error_abs > 0.0).then(|| v_error_abs / proj_error_abs),
    }
}

/// Relative `V`-projection error `‖u − Qα‖_V / ‖u‖_V`.
pub fn v_projection_error(op: &OperatorSet, u: &[f64]) -> Result<f64> {
    let alpha = v_projection(op, u)?;
    let p = trial_field(op, &alpha);
    let m = error_measures(op, u, &p, &p);
    Ok(m.v_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_all;
    use crate::coeff::{field_example1, CoefficientField, FieldSource, Source};
    use crate::mesh::MeshHierarchy;
    use faer::sparse::Triplet;

    fn uniform(nc: usize, m: usize, f: f64) -> OperatorSet {
        let mesh = MeshHierarchy::new(nc, m).unwrap();
        let nq = mesh.n_fine_cells() * 4;
        let field = CoefficientField::new(&mesh, vec![1.0; nq], vec![[0.0; 2]; nq], FieldSource::Analytic).unwrap();
        assemble_all(&mesh, &field, &Source::constant(f), Default::default()).unwrap()
    }

    #[test]
    fn zero_load_gives_zero() {
        let op = uniform(2, 3, 0.0);
        assert!(fine_solve(&op).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_solution_is_symmetric() {
        let op = uniform(2, 4, 1.0);
        let u = fine_solve(&op).unwrap();
        let mesh = &op.mesh;
        let n = mesh.n_fine();
        let at = |ix: usize, iy: usize| u[mesh.dof_of_vertex(mesh.fine_vertex(ix, iy)).unwrap()];
        for iy in 1..n {
            for ix in 1..n {
                assert!((at(ix, iy) - at(iy, ix)).abs() < 1e-12);
                assert!((at(ix, iy) - at(n - ix, iy)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_test_and_trial_space_recover_fine_solution() {
        // W = Q = identity: the saddle system reproduces A u = F with w = 0
        let mesh = MeshHierarchy::new(3, 3).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let mut op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap();
        let n = op.n_dofs();
        let eye: Vec<_> = (0..n).map(|i| Triplet::new(i, i, 1.0)).collect();
        op.trial = sparse::from_triplets(n, n, &eye);
        let ws = TestSpace {
            columns: sparse::from_triplets(n, n, &eye),
            info: Vec::new(),
        };
        let sys = assemble_saddle(&op, &ws, Metric::LumpedC).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        let u = fine_solve(&op).unwrap();
        let scale = sparse::norm(&u);
        for (a, b) in sol.u.iter().zip(&u) {
            assert!((a - b).abs() < 1e-9 * scale);
        }
        assert!(sparse::norm(&sol.w) < 1e-9 * scale);
    }

    #[test]
    fn projection_is_optimal() {
        let mesh = MeshHierarchy::new(4, 4).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap();
        let u = fine_solve(&op).unwrap();
        let alpha = v_projection(&op, &u).unwrap();
        let best = op.v_norm(
            &u.iter()
                .zip(trial_field(&op, &alpha))
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let beta: Vec<f64> = alpha.iter().map(|a| a + rng.random_range(-0.01..0.01)).collect();
            let e = op.v_norm(
                &u.iter()
                    .zip(trial_field(&op, &beta))
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            assert!(e >= best);
        }
    }

    #[test]
    fn projection_of_trial_function_is_exact() {
        let op = uniform(4, 3, 1.0);
        let q = op.trial_column(2);
        assert!(v_projection_error(&op, &q).unwrap() < 1e-12);
    }

    #[test]
    fn rank_of_deficient_matrix() {
        let g = Mat::from_fn(4, 3, |i, j| {
            if j == 2 {
                (i + 1) as f64
            } else {
                ((i + 1) * (j + 1)) as f64
            }
        });
        assert_eq!(numerical_rank(&g), 1);
        let h = Mat::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        assert_eq!(numerical_rank(&h), 2);
    }

    #[test]
    fn zero_measures_are_guarded() {
        let op = uniform(2, 2, 0.0);
        let z = vec![0.0; op.n_dofs()];
        let m = error_measures(&op, &z, &z, &z);
        assert_eq!(m.v_error, 0.0);
        assert_eq!(m.ratio, None);
    }
}
