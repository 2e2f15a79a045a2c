//! Deterministic control of the drift: reproduces `2 max - x` at a few anchors.

use ppde::measures::Refinement;
use ppde::oracles::{find, sample_points};
use ppde::pathspace::DiscretePath;
use ppde::solvers::solve_first_order;

fn main() -> ppde::Result<()> {
    let e = find("MAXDRIFT")?;
    let p = e.first_order_problem(1.0, Refinement::default())?;
    let origin = DiscretePath::at_origin(0.0, 1);
    println!("u(0, 0) = {:.3e}", solve_first_order(&p, 0.0, &origin, 0.05, 1 << 22)?.value);
    for (t, prefix) in sample_points(&e, 4, 3)? {
        let v = solve_first_order(&p, t, &prefix, 0.05, 1 << 22)?.value;
        println!("t = {t:.3}: solver {v:.6}, closed form {:.6}", e.u.eval(t, &prefix));
    }
    Ok(())
}
