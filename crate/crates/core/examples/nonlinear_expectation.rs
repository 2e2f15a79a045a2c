//! Upper and lower expectations over a control lattice, a capacity, and the
//! positivity of the expected exit time from a small ball.

use ppde::expectation::{capacity, lower_expectation, positivity_bound_check, upper_expectation, McConfig};
use ppde::measures::{build_lattice, Refinement};
use ppde::pathspace::{DiscretePath, TimeGrid};

fn main() -> ppde::Result<()> {
    let cfg = McConfig::new(TimeGrid::uniform(0.0, 1.0, 32)?, 20_000, 7);
    let square = |t: f64, p: &DiscretePath| p.x(t).powi(2);
    for l in [0.5, 1.0, 2.0] {
        let lattice = build_lattice(l, 1, Refinement::default())?;
        let up = upper_expectation(&square, &lattice, &cfg)?;
        let down = lower_expectation(&square, &lattice, &cfg)?;
        println!(
            "L = {l}: upper E[x_T^2] = {:.4} ({}), lower = {:.4} ({})",
            up.value, up.arg_label, down.value, down.arg_label
        );
    }
    let lattice = build_lattice(1.0, 1, Refinement::default())?;
    let far = |p: &DiscretePath| p.coord_max(1.0, 0) >= 1.0;
    println!("capacity of {{max >= 1}} at L = 1: {:.4}", capacity(&far, &lattice, &cfg)?.value);
    for l in [1.0, 2.0, 4.0] {
        let r = positivity_bound_check(0.25, l, &build_lattice(l, 1, Refinement::default())?, 20_000, 3, 64)?;
        println!("L = {l}: lower E[exit time] = {:.4}, threshold {:.4}, margin {:+.4}", r.lower.value, r.threshold, r.margin);
    }
    Ok(())
}
