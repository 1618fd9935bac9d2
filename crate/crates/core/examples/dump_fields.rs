//! Plain-text grids of the coefficients, the solutions and one test function.

use cemdpg::experiment::{dump_field, DumpTarget, ExperimentConfig};
use cemdpg::testspace::ColumnKind;

fn main() -> cemdpg::Result<()> {
    let dir = std::env::temp_dir().join("cemdpg-fields");
    std::fs::create_dir_all(&dir)?;
    let cfg = ExperimentConfig {
        n_coarse: 5,
        m_refine: 6,
        layers: 2,
        ..Default::default()
    };
    for (name, target) in [
        ("kappa", DumpTarget::Kappa),
        ("speed", DumpTarget::Speed),
        ("fine", DumpTarget::Fine),
        ("multiscale", DumpTarget::Multiscale),
        ("psi", DumpTarget::Column(ColumnKind::Spectral { cell: 12, index: 0 })),
    ] {
        let path = dir.join(format!("{name}.txt"));
        dump_field(&cfg, target, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}
