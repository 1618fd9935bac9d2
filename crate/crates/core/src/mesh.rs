//! Structured coarse/fine grid hierarchy on the unit square.
//!
//! The coarse grid has `n_coarse × n_coarse` square cells, each split into
//! `m_refine × m_refine` fine cells. Fine vertices are numbered row-major,
//! `iy * (n_fine + 1) + ix`; interior fine vertices (those off `∂Ω`) are the
//! degrees of freedom and are numbered row-major as well, so the dof order is
//! a subsequence of the vertex order.
//!
//! Patches are axis-aligned boxes of coarse cells. A patch's interior dofs are
//! the fine vertices strictly inside the box, which simultaneously encodes the
//! zero trace on the patch boundary and the global Dirichlet condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open range of coarse cells `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl CellBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, cx: usize, cy: usize) -> bool {
        cx >= self.x0 && cx < self.x1 && cy >= self.y0 && cy < self.y1
    }

    pub fn is_subset_of(&self, other: &CellBox) -> bool {
        self.x0 >= other.x0 && self.x1 <= other.x1 && self.y0 >= other.y0 && self.y1 <= other.y1
    }

    /// Enlarges by `layers` cells on every side, clipped to `[0, n)²`.
    pub fn grow(&self, layers: usize, n: usize) -> CellBox {
        CellBox {
            x0: self.x0.saturating_sub(layers),
            x1: (self.x1 + layers).min(n),
            y0: self.y0.saturating_sub(layers),
            y1: (self.y1 + layers).min(n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    n_coarse: usize,
    m_refine: usize,
    n_fine: usize,
    boundary: Vec<bool>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
}

impl MeshHierarchy {
    pub fn new(n_coarse: usize, m_refine: usize) -> Result<Self> {
        if n_coarse < 2 || m_refine < 2 {
            return Err(Error::InvalidMesh(format!(
                "need n_coarse >= 2 and m_refine >= 2, got ({n_coarse}, {m_refine})"
            )));
        }
        let n_fine = n_coarse
            .checked_mul(m_refine)
            .ok_or_else(|| Error::InvalidMesh("fine grid size overflows".into()))?;
        let nv = n_fine + 1;
        let mut boundary = vec![false; nv * nv];
        let mut dof_of_vertex = vec![None; nv * nv];
        let mut vertex_of_dof = Vec::with_capacity((n_fine - 1) * (n_fine - 1));
        for iy in 0..nv {
            for ix in 0..nv {
                let v = iy * nv + ix;
                if ix == 0 || iy == 0 || ix == n_fine || iy == n_fine {
                    boundary[v] = true;
                } else {
                    dof_of_vertex[v] = Some(vertex_of_dof.len());
                    vertex_of_dof.push(v);
                }
            }
        }
        Ok(Self {
            n_coarse,
            m_refine,
            n_fine,
            boundary,
            dof_of_vertex,
            vertex_of_dof,
        })
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn m_refine(&self) -> usize {
        self.m_refine
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    /// Fine mesh size `h`.
    pub fn h(&self) -> f64 {
        1.0 / self.n_fine as f64
    }

    /// Coarse mesh size `H`.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.n_coarse as f64
    }

    /// Number of coarse cells `N`.
    pub fn n_coarse_cells(&self) -> usize {
        self.n_coarse * self.n_coarse
    }

    /// Number of interior coarse vertices `N_c` (one trial function each).
    pub fn n_trial(&self) -> usize {
        (self.n_coarse - 1) * (self.n_coarse - 1)
    }

    pub fn n_fine_cells(&self) -> usize {
        self.n_fine * self.n_fine
    }

    pub fn n_fine_vertices(&self) -> usize {
        (self.n_fine + 1) * (self.n_fine + 1)
    }

    pub fn n_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn fine_vertex(&self, ix: usize, iy: usize) -> usize {
        iy * (self.n_fine + 1) + ix
    }

    pub fn fine_vertex_ij(&self, v: usize) -> (usize, usize) {
        (v % (self.n_fine + 1), v / (self.n_fine + 1))
    }

    pub fn fine_vertex_coords(&self, v: usize) -> (f64, f64) {
        let (ix, iy) = self.fine_vertex_ij(v);
        (ix as f64 * self.h(), iy as f64 * self.h())
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, dof: usize) -> usize {
        self.vertex_of_dof[dof]
    }

    /// Fine vertices of fine cell `(cx, cy)` in tensor order
    /// `(x,y), (x+1,y), (x,y+1), (x+1,y+1)`.
    pub fn fine_cell_vertices(&self, cx: usize, cy: usize) -> [usize; 4] {
        let v = self.fine_vertex(cx, cy);
        let nv = self.n_fine + 1;
        [v, v + 1, v + nv, v + nv + 1]
    }

    pub fn fine_cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.n_fine + cx
    }

    pub fn coarse_cell_of_fine_cell(&self, fine_cell: usize) -> usize {
        let (cx, cy) = (fine_cell % self.n_fine, fine_cell / self.n_fine);
        (cy / self.m_refine) * self.n_coarse + cx / self.m_refine
    }

    pub fn coarse_cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.n_coarse, cell / self.n_coarse)
    }

    pub fn coarse_cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.n_coarse + cx
    }

    /// Fine cells of a coarse cell, row-major.
    pub fn coarse_cell_fine_cells(&self, cell: usize) -> Vec<usize> {
        let (cx, cy) = self.coarse_cell_ij(cell);
        let m = self.m_refine;
        let mut out = Vec::with_capacity(m * m);
        for fy in cy * m..(cy + 1) * m {
            for fx in cx * m..(cx + 1) * m {
                out.push(self.fine_cell_index(fx, fy));
            }
        }
        out
    }

    /// All fine vertices of the closed coarse cell, row-major. This is the
    /// unknown set of the cellwise Neumann spectral problem.
    pub fn coarse_cell_vertices(&self, cell: usize) -> Vec<usize> {
        let (cx, cy) = self.coarse_cell_ij(cell);
        let m = self.m_refine;
        let mut out = Vec::with_capacity((m + 1) * (m + 1));
        for iy in cy * m..=(cy + 1) * m {
            for ix in cx * m..=(cx + 1) * m {
                out.push(self.fine_vertex(ix, iy));
            }
        }
        out
    }

    pub fn n_coarse_vertices(&self) -> usize {
        (self.n_coarse + 1) * (self.n_coarse + 1)
    }

    pub fn coarse_vertex_ij(&self, vertex: usize) -> (usize, usize) {
        (vertex % (self.n_coarse + 1), vertex / (self.n_coarse + 1))
    }

    pub fn is_boundary_coarse_vertex(&self, vertex: usize) -> bool {
        let (i, j) = self.coarse_vertex_ij(vertex);
        i == 0 || j == 0 || i == self.n_coarse || j == self.n_coarse
    }

    /// Fine vertex that coincides with a coarse vertex.
    pub fn coarse_vertex_fine_vertex(&self, vertex: usize) -> usize {
        let (i, j) = self.coarse_vertex_ij(vertex);
        self.fine_vertex(i * self.m_refine, j * self.m_refine)
    }

    /// Interior coarse vertices in row-major order; position in this list is
    /// the trial-function index.
    pub fn interior_coarse_vertices(&self) -> Vec<usize> {
        let nv = self.n_coarse + 1;
        (1..self.n_coarse)
            .flat_map(|j| (1..self.n_coarse).map(move |i| j * nv + i))
            .collect()
    }

    pub fn full_box(&self) -> CellBox {
        CellBox {
            x0: 0,
            x1: self.n_coarse,
            y0: 0,
            y1: self.n_coarse,
        }
    }

    pub fn patch(&self, cells: CellBox) -> PatchIndexSet {
        PatchIndexSet::from_box(self, cells)
    }
}

/// Fine-vertex index set of a box of coarse cells.
#[derive(Clone, Debug)]
pub struct PatchIndexSet {
    cells: CellBox,
    vertices: Vec<usize>,
    interior: Vec<bool>,
    dofs: Vec<usize>,
}

impl PatchIndexSet {
    fn from_box(mesh: &MeshHierarchy, cells: CellBox) -> Self {
        let m = mesh.m_refine;
        let (vx0, vx1) = (cells.x0 * m, cells.x1 * m);
        let (vy0, vy1) = (cells.y0 * m, cells.y1 * m);
        let mut vertices = Vec::with_capacity((vx1 - vx0 + 1) * (vy1 - vy0 + 1));
        let mut interior = Vec::with_capacity(vertices.capacity());
        let mut dofs = Vec::new();
        for iy in vy0..=vy1 {
            for ix in vx0..=vx1 {
                let v = mesh.fine_vertex(ix, iy);
                let inside = ix > vx0 && ix < vx1 && iy > vy0 && iy < vy1;
                vertices.push(v);
                interior.push(inside);
                if inside {
                    // strictly inside the box implies off ∂Ω
                    dofs.push(mesh.dof_of_vertex(v).expect("interior vertex"));
                }
            }
        }
        Self {
            cells,
            vertices,
            interior,
            dofs,
        }
    }

    pub fn cells(&self) -> CellBox {
        self.cells
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    /// Global dof indices of the zero-trace unknowns, strictly increasing.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn local_index(&self, dof: usize) -> Option<usize> {
        self.dofs.binary_search(&dof).ok()
    }

    pub fn global_index(&self, local: usize) -> usize {
        self.dofs[local]
    }

    /// Dofs of the patch without the zero-trace constraint on the relative
    /// boundary (only `∂Ω` vertices are excluded).
    pub fn free_dofs(&self, mesh: &MeshHierarchy) -> Vec<usize> {
        self.vertices.iter().filter_map(|&v| mesh.dof_of_vertex(v)).collect()
    }

    /// Coarse cells covered by the patch, row-major.
    pub fn coarse_cells(&self, mesh: &MeshHierarchy) -> Vec<usize> {
        let b = self.cells;
        (b.y0..b.y1)
            .flat_map(|cy| (b.x0..b.x1).map(move |cx| mesh.coarse_cell_index(cx, cy)))
            .collect()
    }

    pub fn contains_dof(&self, dof: usize) -> bool {
        self.local_index(dof).is_some()
    }
}

/// Coarse cell `K_i` enlarged by `layers` coarse layers (Chebyshev ball in
/// cell-index space, clipped to the domain).
pub fn coarse_cell_patch(mesh: &MeshHierarchy, cell: usize, layers: usize) -> Result<PatchIndexSet> {
    if cell >= mesh.n_coarse_cells() {
        return Err(Error::IndexOutOfRange {
            what: "coarse cell",
            index: cell,
            limit: mesh.n_coarse_cells(),
        });
    }
    let (cx, cy) = mesh.coarse_cell_ij(cell);
    let cell_box = CellBox {
        x0: cx,
        x1: cx + 1,
        y0: cy,
        y1: cy + 1,
    };
    Ok(mesh.patch(cell_box.grow(layers, mesh.n_coarse())))
}

/// Coarse neighborhood `ω_i` of an interior coarse vertex, enlarged by `layers`.
pub fn vertex_neighborhood(mesh: &MeshHierarchy, vertex: usize, layers: usize) -> Result<PatchIndexSet> {
    if vertex >= mesh.n_coarse_vertices() {
        return Err(Error::IndexOutOfRange {
            what: "coarse vertex",
            index: vertex,
            limit: mesh.n_coarse_vertices(),
        });
    }
    if mesh.is_boundary_coarse_vertex(vertex) {
        return Err(Error::BoundaryVertex(vertex));
    }
    let (i, j) = mesh.coarse_vertex_ij(vertex);
    let omega = CellBox {
        x0: i - 1,
        x1: i + 1,
        y0: j - 1,
        y1: j + 1,
    };
    Ok(mesh.patch(omega.grow(layers, mesh.n_coarse())))
}
