//! Uncertain volatility on the band {0.5, 1}: convex payoffs pick the top
//! volatility, concave ones the bottom.

use std::sync::Arc;

use ppde::pathspace::{AdaptedFunctional, DiscretePath};
use ppde::solvers::{solve_hjb, HjbProblem, SolveConfig};

fn main() -> ppde::Result<()> {
    let payoffs: [(&str, Arc<dyn AdaptedFunctional>); 3] = [
        ("x^2", Arc::new(|t: f64, p: &DiscretePath| p.x(t).powi(2))),
        ("-x^2", Arc::new(|t: f64, p: &DiscretePath| -p.x(t).powi(2))),
        ("straddle on the max", Arc::new(|t: f64, p: &DiscretePath| (p.coord_max(t, 0) - 0.5).abs())),
    ];
    for (name, xi) in payoffs {
        let p = HjbProblem::uncertain_volatility(name, 1.0, vec![0.5, 1.0], xi);
        let tree = solve_hjb(&p, &SolveConfig::exact(1.0 / 12.0))?;
        let mc = solve_hjb(&p, &SolveConfig::new(0.02, 20_000, 9))?;
        println!(
            "{name}: tree {:.4} ({}), regression {:.4} +- {:.4}",
            tree.value,
            tree.control.unwrap_or_default(),
            mc.value,
            mc.stderr
        );
    }
    Ok(())
}
