//! Semilinear solver: the running-maximum heat value, a nonlinear driver on
//! an exact tree, and the dynamic programming check.

use std::f64::consts::PI;

use ppde::oracles::find;
use ppde::pathspace::HittingTimeSpec;
use ppde::solvers::{dpp_consistency, solve_semilinear, Restart, SolveConfig};

fn main() -> ppde::Result<()> {
    let runmax = find("HEAT-RUNMAX")?.semilinear_problem()?;
    for dt in [0.02, 0.005] {
        let o = solve_semilinear(&runmax, &SolveConfig::new(dt, 40_000, 1))?;
        println!("E[max B] with dt {dt}: {:.4} +- {:.4} (exact {:.4})", o.value, o.stderr, (2.0 / PI).sqrt());
    }

    let square = find("QUADRATIC")?.semilinear_problem()?;
    let driven = square.clone().with_driver(0.5, |_, s, y, z| 0.5 * y - 0.25 * z[0].abs() + 0.1 * s.max[0]);
    for dt in [0.25, 0.125, 1.0 / 12.0] {
        let o = solve_semilinear(&driven, &SolveConfig::exact(dt))?;
        println!("tree with dt {dt:.4}: {:.6}", o.value);
    }

    let cfg = SolveConfig::new(0.05, 20_000, 2);
    let r = dpp_consistency(&square, &Restart::Hitting(HittingTimeSpec::radius(0.5)?), &cfg)?;
    println!("DPP at the exit of a ball: full {:.4}, restarted {:.4}, defect {:.2e}", r.full, r.restarted, r.defect);
    Ok(())
}
