//! Global test functions at desk scale and the residuals of the exactness identities.

use cemdpg::experiment::{verify_global, ExperimentConfig};

fn main() -> cemdpg::Result<()> {
    let cfg = ExperimentConfig {
        n_coarse: 4,
        m_refine: 4,
        ..Default::default()
    };
    let r = verify_global(&cfg, None)?;
    let v = &r.verification;
    println!("{} interior dofs", r.n_dofs);
    println!("max exactness residual  {:.3e}", v.max_exactness_residual);
    println!("max membership residual {:.3e}", v.max_membership_residual);
    Ok(())
}
