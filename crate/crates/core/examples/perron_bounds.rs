//! Exit-skeleton bounds, stability under a shifted generator, and ordering
//! against inflated classical solutions.

use ppde::oracles::{find, sample_points};
use ppde::pathspace::DiscretePath;
use ppde::solvers::{partial_comparison_probe, perron_scheme, solve_semilinear, stability_probe, Modulus, SolveConfig};
use ppde::viscosity::Side;

fn main() -> ppde::Result<()> {
    let e = find("QUADRATIC")?;
    let p = e.semilinear_problem()?.with_modulus(Modulus::Lipschitz(1.0));
    let cfg = SolveConfig::new(0.01, 20_000, 4);
    let exact = e.u.eval(0.0, &DiscretePath::at_origin(0.0, 1));
    for eps in [0.2, 0.1, 0.05] {
        let r = perron_scheme(&p, eps, &cfg)?;
        println!("eps {eps}: {:.4} <= u = {exact} <= {:.4} (gap {})", r.lower, r.upper, r.gap);
    }
    for row in stability_probe(&p, &[0.1, 0.05, 0.01], &cfg)? {
        println!("delta {}: shift {:+.4}, bound {:.4}", row.delta, row.defect, row.bound);
    }
    let solver = solve_semilinear(&p, &cfg)?;
    let smooth = e.smooth.clone().expect("closed form");
    let points = sample_points(&e, 20, 1)?;
    let ends: Vec<DiscretePath> = points.iter().map(|(_, q)| q.clone()).collect();
    for (c, side) in [(0.1, Side::Super), (-0.1, Side::Sub)] {
        let f = smooth.with_time_bump(c, 1.0, 0.0);
        let r = partial_comparison_probe(&f, &e.generator, side, &solver, e.terminal.as_ref(), 1.0, &points, &ends, 1e-6)?;
        println!("{side}solution u {c:+} (T - t): margin {:.4}, ordered {}", r.margin, r.ordered);
    }
    Ok(())
}
