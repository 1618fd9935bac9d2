//! Local Neumann eigenproblems `s⁽ⁱ⁾(φ, v) = λ c⁽ⁱ⁾(φ, v)` and the auxiliary space.

use cemdpg::assembly::assemble_all;
use cemdpg::coeff::{field_example1, CoefficientField, Source};
use cemdpg::mesh::MeshHierarchy;
use cemdpg::spectral::build_aux_space;

fn main() -> cemdpg::Result<()> {
    let mesh = MeshHierarchy::new(4, 8)?;
    let field = CoefficientField::from_analytic(&mesh, &field_example1());
    let op = assemble_all(&mesh, &field, &Source::constant(1.0), Default::default())?;
    let aux = build_aux_space(&op, 3)?;
    println!("aux dimension {}, lambda_min {:.6e}", aux.dim(), aux.lambda_min());
    aux.write_eigenvalues_csv(std::io::stdout().lock())?;
    Ok(())
}
