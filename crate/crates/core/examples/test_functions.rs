//! Localized test space: spectral columns and trial-derived columns, with their supports.

use cemdpg::assembly::assemble_all;
use cemdpg::coeff::{field_example1, CoefficientField, Source};
use cemdpg::mesh::MeshHierarchy;
use cemdpg::spectral::build_aux_space;
use cemdpg::testspace::{build_test_space, ColumnKind, PiMode, PiOperator, TestSpaceOptions};

fn main() -> cemdpg::Result<()> {
    let mesh = MeshHierarchy::new(6, 6)?;
    let field = CoefficientField::from_analytic(&mesh, &field_example1());
    let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default())?;
    let aux = build_aux_space(&op, 3)?;
    let pi = PiOperator::new(&op, &aux, PiMode::Plain)?;
    let ws = build_test_space(
        &pi,
        TestSpaceOptions {
            layers: 2,
            ..Default::default()
        },
    )?;
    println!("{} test functions, {} nonzeros", ws.n_test(), ws.columns.compute_nnz());
    for k in [0, ws.n_test() - 1] {
        let info = &ws.info[k];
        let col = ws.column(k);
        let what = match info.kind {
            ColumnKind::Spectral { cell, index } => format!("psi cell {cell} mode {index}"),
            ColumnKind::Trial { trial } => format!("eta+xi trial {trial}"),
        };
        println!(
            "{what}: support {}x{} coarse cells, {} nonzeros, V-norm {:.4e}",
            info.support.width(),
            info.support.height(),
            col.dofs.len(),
            op.v_norm(&col.to_dense(op.n_dofs()))
        );
    }
    Ok(())
}
