//! Optimal stopping of a path-dependent reward on a trinomial tree, checked
//! against exhaustive enumeration.

use ppde::measures::{build_lattice, Refinement};
use ppde::pathspace::{DiscretePath, HittingTimeSpec};
use ppde::snell::{brute_force_stopping, snell_envelope, verify_supermartingale, TreeKernel, TreeSpec};

fn main() -> ppde::Result<()> {
    // Reward: distance of the current value below the running maximum, minus a time cost.
    let reward = |t: f64, p: &DiscretePath| p.coord_max(t, 0) - p.x(t) - 0.2 * t;
    let dt = 0.1;
    let kernel = TreeKernel::second_order(&build_lattice(1.0, 1, Refinement::MINIMAL)?, dt)?;
    for (label, h) in [("horizon only", HittingTimeSpec::horizon(1.0)?), ("ball of radius 0.5", HittingTimeSpec::radius(0.5)?)] {
        let spec = TreeSpec::new(8, dt);
        let st = snell_envelope(&reward, &h, &kernel, spec)?;
        let bf = brute_force_stopping(&reward, &h, &kernel, spec)?;
        println!(
            "{label}: Y0 = {:.6}, brute force = {bf:.6}, mean stopping time {:.3}, defects {}",
            st.y0(),
            st.tau_star_mean(),
            verify_supermartingale(&st).len()
        );
    }
    Ok(())
}
