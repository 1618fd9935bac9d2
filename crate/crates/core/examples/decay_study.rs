//! Localization error of sampled test functions against their global counterparts.

use cemdpg::experiment::{decay_csv, decay_study, default_decay_columns, ExperimentConfig};

fn main() -> cemdpg::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let cfg = ExperimentConfig {
        n_coarse: n,
        m_refine: 4,
        ..Default::default()
    };
    let columns = default_decay_columns(cfg.n_coarse, cfg.j_per_cell);
    let rows = decay_study(&cfg, 1..=4, &columns, None)?;
    print!("{}", decay_csv(&rows));
    Ok(())
}
