//! One table row: multiscale solve, fine reference, V-norm and projection errors.
//!
//! `cargo run --release --example table_row -- ex1 10 20 3` reproduces the first row
//! at `h = 1/200`; the defaults are a small desk configuration.

use cemdpg::experiment::{run, Example, ExperimentConfig};

fn main() -> cemdpg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let example = match args.first().map(String::as_str) {
        Some("ex2") => Example::Ex2,
        Some("ex3") => Example::Ex3,
        _ => Example::Ex1,
    };
    let cfg = ExperimentConfig {
        example,
        n_coarse: num(1, 5),
        m_refine: num(2, 8),
        layers: num(3, 2),
        ..Default::default()
    };
    let r = run(&cfg)?;
    println!(
        "{:?} H=1/{} l={}: error {:.2}% (projection {:.2}%), ratio {:.4}, ||w|| {:.3e}",
        cfg.example,
        cfg.n_coarse,
        cfg.layers,
        100.0 * r.errors.v_error,
        100.0 * r.errors.proj_error,
        r.errors.ratio.unwrap_or(f64::NAN),
        r.w_norm
    );
    Ok(())
}
