//! Analytic coefficient fields and a generated high-contrast permeability raster.

use cemdpg::coeff::{field_example1, field_example2, generate_channelized_k, CoefficientField};
use cemdpg::mesh::MeshHierarchy;

fn main() -> cemdpg::Result<()> {
    let mesh = MeshHierarchy::new(10, 20)?;
    for (name, field) in [
        ("ex1", CoefficientField::from_analytic(&mesh, &field_example1())),
        ("ex2", CoefficientField::from_analytic(&mesh, &field_example2())),
    ] {
        let (lo, hi) = field.kappa_bounds();
        let speed = field.velocity().iter().map(|b| b[0].hypot(b[1])).fold(0.0, f64::max);
        println!(
            "{name}: kappa in [{lo:.3e}, {hi:.3e}], max |b| {speed:.3}, max cell Peclet {:.3}",
            field.max_cell_peclet(mesh.h())
        );
    }
    let k = generate_channelized_k(42, 1e4)?;
    println!("raster {}x{}, K in [{}, {}]", k.rows(), k.cols(), k.min(), k.max());
    Ok(())
}
