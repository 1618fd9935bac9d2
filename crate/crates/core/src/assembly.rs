//! Fine-scale matrices for the convection-diffusion forms.
//!
//! Convention: `A[m, n] = a(φ_n, φ_m)`, rows index test functions. All global
//! matrices act on interior dofs (Dirichlet vertices eliminated); the per-cell
//! blocks `S_i`, `C_i` act on every fine vertex of the closed coarse cell,
//! since the cellwise spectral problem is posed in `H¹(K_i)`.

use faer::sparse::Triplet;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, Source};
use crate::element::{self, ElementMatrix, QUAD_PER_CELL};
use crate::error::{Error, Result};
use crate::mesh::{CellBox, MeshHierarchy, PatchIndexSet};
use crate::sparse::{self, Csc};

/// Weight `κ̃ = κ Σ_j |∇χ_j|` (sum) or `κ Σ_j |∇χ_j|²` (squared).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaTilde {
    #[default]
    Sum,
    Squared,
}

/// Convection assembled as `∫ v b·∇u` (direct) or its skew-symmetric part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convection {
    #[default]
    Direct,
    Skew,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    #[serde(default)]
    pub kappa_tilde: KappaTilde,
    #[serde(default)]
    pub convection: Convection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operator {
    A,
    ATransposed,
    S,
    C,
    V,
}

/// `s⁽ⁱ⁾` and `c⁽ⁱ⁾` on all fine vertices of coarse cell `i`.
#[derive(Clone, Debug)]
pub struct CellBlocks {
    pub vertices: Vec<usize>,
    pub s: Csc,
    pub c: Csc,
}

#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub mesh: MeshHierarchy,
    pub field: CoefficientField,
    pub options: AssemblyOptions,
    pub a: Csc,
    pub a_t: Csc,
    pub s: Csc,
    pub c: Csc,
    pub vmat: Csc,
    /// Row-sum lumped `C`.
    pub lumped_b: Vec<f64>,
    pub load: Vec<f64>,
    /// Interior dofs × interior coarse vertices.
    pub trial: Csc,
    pub cells: Vec<CellBlocks>,
    /// `κ̃` per quadrature point.
    pub kappa_tilde: Vec<f64>,
    /// `|b|²/κ + κ̃` per quadrature point.
    pub c_weight: Vec<f64>,
}

/// Sum of coarse hat gradient norms (or squared norms) at local coordinates
/// `(s, t)` of a coarse cell of size `coarse_h`.
pub fn hat_gradient_sum(s: f64, t: f64, coarse_h: f64, mode: KappaTilde) -> f64 {
    let grads = [[-(1.0 - t), -(1.0 - s)], [1.0 - t, -s], [-t, 1.0 - s], [t, s]];
    grads
        .iter()
        .map(|g| {
            let sq = (g[0] * g[0] + g[1] * g[1]) / (coarse_h * coarse_h);
            match mode {
                KappaTilde::Sum => sq.sqrt(),
                KappaTilde::Squared => sq,
            }
        })
        .sum()
}

fn kappa_tilde_field(mesh: &MeshHierarchy, field: &CoefficientField, mode: KappaTilde) -> Vec<f64> {
    let n = mesh.n_fine();
    let m = mesh.m_refine() as f64;
    let hc = mesh.coarse_h();
    let mut out = Vec::with_capacity(n * n * QUAD_PER_CELL);
    for cy in 0..n {
        for cx in 0..n {
            let fc = mesh.fine_cell_index(cx, cy);
            for (q, &(xi, eta)) in element::QUAD_POINTS.iter().enumerate() {
                let s = ((cx % mesh.m_refine()) as f64 + xi) / m;
                let t = ((cy % mesh.m_refine()) as f64 + eta) / m;
                out.push(field.kappa()[fc * 4 + q] * hat_gradient_sum(s, t, hc, mode));
            }
        }
    }
    out
}

struct ElementData {
    stiffness: ElementMatrix,
    convection: ElementMatrix,
    c_mass: ElementMatrix,
}

fn quad4<T: Copy>(v: &[T], fc: usize) -> [T; 4] {
    [v[fc * 4], v[fc * 4 + 1], v[fc * 4 + 2], v[fc * 4 + 3]]
}

impl OperatorSet {
    fn element(&self, fc: usize) -> ElementData {
        element_data(&self.mesh, &self.field, &self.c_weight, self.options, fc)
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn n_trial(&self) -> usize {
        self.trial.ncols()
    }

    pub fn matrix(&self, which: Operator) -> &Csc {
        match which {
            Operator::A => &self.a,
            Operator::ATransposed => &self.a_t,
            Operator::S => &self.s,
            Operator::C => &self.c,
            Operator::V => &self.vmat,
        }
    }

    /// Trial function `q_j` as a dense interior-dof vector.
    pub fn trial_column(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        let (rows, vals) = sparse::column(&self.trial, j);
        for (&r, &v) in rows.iter().zip(vals) {
            out[r] = v;
        }
        out
    }

    pub fn v_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        sparse::bilinear(&self.vmat, x, y)
    }

    pub fn v_norm(&self, x: &[f64]) -> f64 {
        self.v_inner(x, x).max(0.0).sqrt()
    }

    /// Restriction of an interior-dof vector to the vertices of a coarse
    /// cell (zero on `∂Ω`).
    pub fn restrict_to_cell(&self, x: &[f64], cell: usize) -> Vec<f64> {
        self.cells[cell]
            .vertices
            .iter()
            .map(|&v| self.mesh.dof_of_vertex(v).map_or(0.0, |d| x[d]))
            .collect()
    }

    /// `Σᵢ s⁽ⁱ⁾(x,x) + c⁽ⁱ⁾(x,x)` through the cell blocks.
    pub fn v_norm_sq_cellwise(&self, x: &[f64]) -> f64 {
        (0..self.cells.len())
            .map(|i| {
                let xi = self.restrict_to_cell(x, i);
                sparse::bilinear(&self.cells[i].s, &xi, &xi) + sparse::bilinear(&self.cells[i].c, &xi, &xi)
            })
            .sum()
    }

    /// Forms integrated over the fine cells of `cells` only, on the given
    /// (sorted) global dofs. Used for local problems without zero trace.
    pub fn assemble_on_box(&self, cells: CellBox, dofs: &[usize]) -> LocalForms {
        let m = self.mesh.m_refine();
        let lookup: std::collections::HashMap<usize, usize> = dofs.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let mut ta = Vec::new();
        let mut tv = Vec::new();
        for cy in cells.y0 * m..cells.y1 * m {
            for cx in cells.x0 * m..cells.x1 * m {
                let fc = self.mesh.fine_cell_index(cx, cy);
                let e = self.element(fc);
                let local: Vec<Option<usize>> = self
                    .mesh
                    .fine_cell_vertices(cx, cy)
                    .iter()
                    .map(|&v| self.mesh.dof_of_vertex(v).and_then(|d| lookup.get(&d).copied()))
                    .collect();
                for a in 0..4 {
                    let Some(la) = local[a] else { continue };
                    for b in 0..4 {
                        let Some(lb) = local[b] else { continue };
                        let av = e.stiffness[a][b] + e.convection[a][b];
                        // transpose: row = trial index b
                        ta.push(Triplet::new(lb, la, av));
                        tv.push(Triplet::new(la, lb, e.stiffness[a][b] + e.c_mass[a][b]));
                    }
                }
            }
        }
        let n = dofs.len();
        LocalForms {
            a_t: sparse::from_triplets(n, n, &ta),
            vmat: sparse::from_triplets(n, n, &tv),
        }
    }
}

/// `Aᵀ` and `V` integrated over a subdomain.
pub struct LocalForms {
    pub a_t: Csc,
    pub vmat: Csc,
}

fn element_data(
    mesh: &MeshHierarchy,
    field: &CoefficientField,
    c_weight: &[f64],
    options: AssemblyOptions,
    fc: usize,
) -> ElementData {
    let h = mesh.h();
    let kappa = quad4(field.kappa(), fc);
    let vel = quad4(field.velocity(), fc);
    let stiffness = element::stiffness(&kappa);
    let mut convection = element::convection(&vel, h);
    if options.convection == Convection::Skew {
        let n = convection;
        for a in 0..4 {
            for b in 0..4 {
                convection[a][b] = 0.5 * (n[a][b] - n[b][a]);
            }
        }
    }
    let c_mass = element::mass(&quad4(c_weight, fc), h);
    ElementData {
        stiffness,
        convection,
        c_mass,
    }
}

/// Assembles every fine-scale operator for `field` and load `f`.
pub fn assemble_all(
    mesh: &MeshHierarchy,
    field: &CoefficientField,
    f: &Source,
    options: AssemblyOptions,
) -> Result<OperatorSet> {
    field.check_mesh(mesh)?;
    let n = mesh.n_fine();
    let m = mesh.m_refine();
    let h = mesh.h();
    let ndofs = mesh.n_dofs();

    let kappa_tilde = kappa_tilde_field(mesh, field, options.kappa_tilde);
    let c_weight: Vec<f64> = field
        .kappa()
        .iter()
        .zip(field.velocity())
        .zip(&kappa_tilde)
        .map(|((k, b), kt)| (b[0] * b[0] + b[1] * b[1]) / k + kt)
        .collect();
    let f_samples = f.sample(mesh);

    let cap = n * n * 16;
    let (mut ta, mut ts, mut tc) = (
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
    );
    let mut load = vec![0.0; ndofs];
    let n_cells = mesh.n_coarse_cells();
    let mut cell_ts: Vec<Vec<Triplet<usize, usize, f64>>> = vec![Vec::new(); n_cells];
    let mut cell_tc: Vec<Vec<Triplet<usize, usize, f64>>> = vec![Vec::new(); n_cells];

    for cy in 0..n {
        for cx in 0..n {
            let fc = mesh.fine_cell_index(cx, cy);
            let e = element_data(mesh, field, &c_weight, options, fc);
            let fe = element::load(&quad4(&f_samples, fc), h);
            let verts = mesh.fine_cell_vertices(cx, cy);
            let dofs = verts.map(|v| mesh.dof_of_vertex(v));

            let coarse = mesh.coarse_cell_of_fine_cell(fc);
            let (ccx, ccy) = mesh.coarse_cell_ij(coarse);
            let local = verts.map(|v| {
                let (ix, iy) = mesh.fine_vertex_ij(v);
                (iy - ccy * m) * (m + 1) + (ix - ccx * m)
            });
            for a in 0..4 {
                for b in 0..4 {
                    cell_ts[coarse].push(Triplet::new(local[a], local[b], e.stiffness[a][b]));
                    cell_tc[coarse].push(Triplet::new(local[a], local[b], e.c_mass[a][b]));
                }
                let Some(da) = dofs[a] else { continue };
                load[da] += fe[a];
                for b in 0..4 {
                    let Some(db) = dofs[b] else { continue };
                    ta.push(Triplet::new(da, db, e.stiffness[a][b] + e.convection[a][b]));
                    ts.push(Triplet::new(da, db, e.stiffness[a][b]));
                    tc.push(Triplet::new(da, db, e.c_mass[a][b]));
                }
            }
        }
    }

    let a = sparse::from_triplets(ndofs, ndofs, &ta);
    drop(ta);
    let a_t = sparse::transpose(&a);
    let s = sparse::from_triplets(ndofs, ndofs, &ts);
    let c = sparse::from_triplets(ndofs, ndofs, &tc);
    ts.extend(tc);
    let vmat = sparse::from_triplets(ndofs, ndofs, &ts);
    drop(ts);

    let mut lumped_b = vec![0.0; ndofs];
    for j in 0..ndofs {
        let (rows, vals) = sparse::column(&c, j);
        for (&r, &v) in rows.iter().zip(vals) {
            lumped_b[r] += v;
        }
    }

    let nloc = (m + 1) * (m + 1);
    let cells = (0..n_cells)
        .map(|i| CellBlocks {
            vertices: mesh.coarse_cell_vertices(i),
            s: sparse::from_triplets(nloc, nloc, &cell_ts[i]),
            c: sparse::from_triplets(nloc, nloc, &cell_tc[i]),
        })
        .collect();

    Ok(OperatorSet {
        mesh: mesh.clone(),
        field: field.clone(),
        options,
        a,
        a_t,
        s,
        c,
        vmat,
        lumped_b,
        load,
        trial: trial_matrix(mesh),
        cells,
        kappa_tilde,
        c_weight,
    })
}

/// Coarse bilinear hats at interior coarse vertices, sampled on fine dofs.
pub fn trial_matrix(mesh: &MeshHierarchy) -> Csc {
    let m = mesh.m_refine();
    let mut trip = Vec::new();
    for (j, &cv) in mesh.interior_coarse_vertices().iter().enumerate() {
        let (ci, cj) = mesh.coarse_vertex_ij(cv);
        let (vx, vy) = (ci * m, cj * m);
        for iy in vy - m + 1..vy + m {
            for ix in vx - m + 1..vx + m {
                let wx = 1.0 - (ix as f64 - vx as f64).abs() / m as f64;
                let wy = 1.0 - (iy as f64 - vy as f64).abs() / m as f64;
                let dof = mesh
                    .dof_of_vertex(mesh.fine_vertex(ix, iy))
                    .expect("open neighborhood of an interior vertex");
                trip.push(Triplet::new(dof, j, wx * wy));
            }
        }
    }
    sparse::from_triplets(mesh.n_dofs(), mesh.n_trial(), &trip)
}

/// Submatrix on a patch's zero-trace dofs.
pub fn patch_restrict(op: &OperatorSet, patch: &PatchIndexSet, which: Operator) -> Result<Csc> {
    if patch.n_dofs() == 0 {
        return Err(Error::EmptyPatch);
    }
    let dofs = patch.dofs();
    Ok(sparse::submatrix(op.matrix(which), dofs, dofs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{field_example1, FieldSource};
    use crate::mesh::{coarse_cell_patch, vertex_neighborhood};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_field(mesh: &MeshHierarchy, kappa: f64, b: [f64; 2]) -> CoefficientField {
        let nq = mesh.n_fine_cells() * 4;
        CoefficientField::new(mesh, vec![kappa; nq], vec![b; nq], FieldSource::Analytic).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pure_diffusion_without_load() {
        let mesh = MeshHierarchy::new(3, 3).unwrap();
        let op = assemble_all(
            &mesh,
            &uniform_field(&mesh, 1.0, [0.0; 2]),
            &Source::zero(),
            Default::default(),
        )
        .unwrap();
        assert_eq!(sparse::to_dense(&op.a), sparse::to_dense(&op.s));
        assert!(op.load.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetry_and_lumping() {
        let mesh = MeshHierarchy::new(4, 4).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap();
        assert!(sparse::max_abs_asymmetry(&op.s) <= 1e-12 * sparse::max_abs(&op.s));
        assert!(sparse::max_abs_asymmetry(&op.c) <= 1e-12 * sparse::max_abs(&op.c));
        let total_c: f64 = op.c.val().iter().sum();
        let total_b: f64 = op.lumped_b.iter().sum();
        assert!((total_b - total_c).abs() <= 1e-12 * total_c.abs());
        assert!(op.lumped_b.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn a_transposed_matches() {
        let mesh = MeshHierarchy::new(3, 3).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap();
        let a = sparse::to_dense(&op.a);
        let at = sparse::to_dense(&op.a_t);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                assert_eq!(a[(i, j)], at[(j, i)]);
            }
        }
    }

    #[test]
    fn v_norm_consistency() {
        let mesh = MeshHierarchy::new(4, 3).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap();
        let x = random_vec(op.n_dofs(), 3);
        let v = op.v_norm(&x).powi(2);
        assert!((v - op.v_norm_sq_cellwise(&x)).abs() <= 1e-12 * v);
    }

    #[test]
    fn quadrature_exact_for_bilinear_products() {
        // u = x(1-x)-free check: s(χ_j, χ_j) for a coarse hat equals the
        // closed-form ∫|∇(φ(x)φ(y))|² = 2·(2/H)(2H/3) = 8/3 independent of H.
        let mesh = MeshHierarchy::new(4, 3).unwrap();
        let op = assemble_all(
            &mesh,
            &uniform_field(&mesh, 1.0, [0.0; 2]),
            &Source::zero(),
            Default::default(),
        )
        .unwrap();
        let q = op.trial_column(4);
        let val = sparse::bilinear(&op.s, &q, &q);
        // the fine space is not the coarse one: the coarse hat is bilinear on each
        // fine cell, so the integral is exact at the fine level as well
        assert!((val - 8.0 / 3.0).abs() < 1e-14, "{val}");
    }

    #[test]
    fn convection_is_skew_on_interior() {
        let mesh = MeshHierarchy::new(4, 5).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap();
        let x = random_vec(op.n_dofs(), 11);
        let xa = sparse::bilinear(&op.a, &x, &x);
        let xs = sparse::bilinear(&op.s, &x, &x);
        let xn = {
            let n = sparse::matvec(&op.a, &x);
            let s = sparse::matvec(&op.s, &x);
            n.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>()
        };
        // the quadratic form of the convection part is small relative to its size
        assert!((xa - xs).abs() < 0.05 * xn.max(xs), "{xa} {xs} {xn}");
    }

    #[test]
    fn skew_option_is_exactly_skew() {
        let mesh = MeshHierarchy::new(3, 4).unwrap();
        let field = CoefficientField::from_analytic(&mesh, &field_example1());
        let opts = AssemblyOptions {
            convection: Convection::Skew,
            ..Default::default()
        };
        let op = assemble_all(&mesh, &field, &Source::constant(1.0), opts).unwrap();
        let x = random_vec(op.n_dofs(), 2);
        let xa = sparse::bilinear(&op.a, &x, &x);
        let xs = sparse::bilinear(&op.s, &x, &x);
        assert!((xa - xs).abs() <= 1e-12 * xs);
    }

    #[test]
    fn trial_lagrange_and_partition_of_unity() {
        let mesh = MeshHierarchy::new(5, 4).unwrap();
        let q = trial_matrix(&mesh);
        let verts = mesh.interior_coarse_vertices();
        let dense = sparse::to_dense(&q);
        for (j, _) in verts.iter().enumerate() {
            for (k, &cv) in verts.iter().enumerate() {
                let d = mesh.dof_of_vertex(mesh.coarse_vertex_fine_vertex(cv)).unwrap();
                assert_eq!(dense[(d, j)], if j == k { 1.0 } else { 0.0 });
            }
        }
        // partition of unity inside coarse cells that do not touch ∂Ω
        let m = mesh.m_refine();
        for iy in m..=4 * m {
            for ix in m..=4 * m {
                let d = mesh.dof_of_vertex(mesh.fine_vertex(ix, iy)).unwrap();
                let sum: f64 = (0..q.ncols()).map(|j| dense[(d, j)]).sum();
                assert!((sum - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn trial_support_is_neighborhood() {
        let mesh = MeshHierarchy::new(4, 3).unwrap();
        let q = trial_matrix(&mesh);
        for (j, &cv) in mesh.interior_coarse_vertices().iter().enumerate() {
            let omega = vertex_neighborhood(&mesh, cv, 0).unwrap();
            let (rows, vals) = sparse::column(&q, j);
            assert_eq!(rows, omega.dofs());
            assert!(vals.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn restriction_dimensions() {
        let mesh = MeshHierarchy::new(4, 3).unwrap();
        let op = assemble_all(
            &mesh,
            &uniform_field(&mesh, 1.0, [0.2, 0.1]),
            &Source::zero(),
            Default::default(),
        )
        .unwrap();
        let p = vertex_neighborhood(&mesh, 6, 0).unwrap();
        let local = patch_restrict(&op, &p, Operator::A).unwrap();
        assert_eq!(local.nrows(), (2 * 3 - 1) * (2 * 3 - 1));
        let full = coarse_cell_patch(&mesh, 0, 4).unwrap();
        let whole = patch_restrict(&op, &full, Operator::V).unwrap();
        assert_eq!(sparse::to_dense(&whole), sparse::to_dense(&op.vmat));
    }

    #[test]
    fn kappa_tilde_sum_at_cell_center() {
        // at the center each of the 4 hat gradients has norm √(1/2)/H
        let v = hat_gradient_sum(0.5, 0.5, 0.1, KappaTilde::Sum);
        assert!((v - 4.0 * 0.5f64.sqrt() / 0.1).abs() < 1e-12);
        let sq = hat_gradient_sum(0.5, 0.5, 0.1, KappaTilde::Squared);
        assert!((sq - 4.0 * 0.5 / 0.01).abs() < 1e-9);
    }
}
