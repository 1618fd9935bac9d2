//! Sweep of coarse sizes and layers at a fixed fine grid, printed as CSV.

use cemdpg::experiment::{study, study_csv, ExperimentConfig, StudyConfig};

fn main() {
    let fine_cells = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let s = StudyConfig {
        base: ExperimentConfig::default(),
        rows: vec![(4, 2), (5, 2), (8, 3)],
        fine_cells,
        parallel: false,
    };
    let rows = study(&s);
    print!("{}", study_csv(&s, &rows));
}
