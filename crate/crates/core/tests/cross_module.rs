//! Closed forms reproduced through the solvers.

use ppde::oracles;
use ppde::pathspace::{DiscretePath, HittingTimeSpec};
use ppde::solvers::{dpp_consistency, solve_semilinear, Restart, SolveConfig};

#[test]
fn quadratic_oracle_matches_the_semilinear_solver() {
    let e = oracles::find("QUADRATIC").unwrap();
    let out = solve_semilinear(&e.semilinear_problem().unwrap(), &SolveConfig::new(0.02, 20_000, 17)).unwrap();
    let exact = e.u.eval(0.0, &DiscretePath::at_origin(0.0, 1));
    assert!((out.value - exact).abs() <= 3.0 * out.stderr, "{} vs {exact}", out.value);
}

#[test]
fn heat_integral_matches_the_tree_solver() {
    let e = oracles::find("HEAT-INTEGRAL").unwrap();
    let out = solve_semilinear(&e.semilinear_problem().unwrap(), &SolveConfig::exact(0.1)).unwrap();
    assert!(out.value.abs() < 1e-12);
}

#[test]
fn dynamic_programming_holds_for_heat_oracles() {
    let cfg = SolveConfig::new(0.05, 4000, 23);
    let spec = HittingTimeSpec::radius(0.5).unwrap();
    for name in ["HEAT-INTEGRAL", "HEAT-RUNMAX", "KINK", "QUADRATIC", "RUNMAX-NONSMOOTH"] {
        let p = oracles::find(name).unwrap().semilinear_problem().unwrap();
        for restart in [Restart::Fixed(0.5), Restart::Hitting(spec.clone())] {
            let r = dpp_consistency(&p, &restart, &cfg).unwrap();
            assert!(r.within(3.0), "{name} {restart:?}: {r:?}");
        }
    }
}
