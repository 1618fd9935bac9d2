//! Coarse/fine index bookkeeping: cell patches, vertex neighborhoods and clipping at the boundary.

use cemdpg::mesh::{coarse_cell_patch, vertex_neighborhood, MeshHierarchy};

fn main() -> cemdpg::Result<()> {
    let mesh = MeshHierarchy::new(8, 5)?;
    println!(
        "coarse {}x{}, fine {}x{}, interior dofs {}, trial functions {}",
        mesh.n_coarse(),
        mesh.n_coarse(),
        mesh.n_fine(),
        mesh.n_fine(),
        mesh.n_dofs(),
        mesh.n_trial()
    );
    for (cell, layers) in [(mesh.coarse_cell_index(3, 3), 2), (mesh.coarse_cell_index(0, 0), 2)] {
        let p = coarse_cell_patch(&mesh, cell, layers)?;
        let b = p.cells();
        println!(
            "cell {cell} +{layers} layers: cells [{},{})x[{},{}), {} vertices, {} interior dofs",
            b.x0,
            b.x1,
            b.y0,
            b.y1,
            p.vertices().len(),
            p.n_dofs()
        );
    }
    let centre = mesh.n_coarse() / 2 * (mesh.n_coarse() + 1) + mesh.n_coarse() / 2;
    let omega = vertex_neighborhood(&mesh, centre, 0)?;
    println!(
        "neighborhood of coarse vertex {centre}: {} coarse cells",
        omega.coarse_cells(&mesh).len()
    );
    println!(
        "boundary vertex 0 rejected: {}",
        vertex_neighborhood(&mesh, 0, 0).is_err()
    );
    Ok(())
}
