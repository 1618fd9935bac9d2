//! Darcy velocity through a channelized permeability, with its discrete mass balance.

use cemdpg::coeff::{darcy_solve, generate_channelized_k, Source};
use cemdpg::mesh::MeshHierarchy;

fn main() -> cemdpg::Result<()> {
    let mesh = MeshHierarchy::new(10, 10)?;
    let k = generate_channelized_k(7, 1e4)?;
    let q = Source::example3_darcy_source();
    let sol = darcy_solve(&mesh, &k, &q)?;
    let speed: Vec<f64> = sol.velocity.iter().map(|b| b[0].hypot(b[1])).collect();
    let max = speed.iter().copied().fold(0.0, f64::max);
    let mean = speed.iter().sum::<f64>() / speed.len() as f64;
    let p_mean = sol.pressure.iter().sum::<f64>() / sol.pressure.len() as f64;
    println!("source integral {:.3e}", q.integral(&mesh));
    println!("|b|: max {max:.4e}, mean {mean:.4e}; pressure mean {p_mean:.3e}");
    Ok(())
}
