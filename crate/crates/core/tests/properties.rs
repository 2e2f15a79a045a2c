//! Randomised invariants across modules.

use std::sync::Arc;

use proptest::prelude::*;

use ppde::expectation::{lower_expectation, upper_expectation, McConfig};
use ppde::measures::{build_lattice, simulate_paths, ControlPair, ControlProcess, Refinement};
use ppde::pathspace::{concat, dist_infty, hitting_time, shift_functional, AdaptedFunctional, ConvexDomain, DiscretePath, HittingTimeSpec, TimeGrid};
use ppde::snell::{snell_envelope, TreeKernel, TreeSpec};
use ppde::oracles::find;
use ppde::solvers::{solve_first_order, solve_semilinear, FirstOrderTerminal, SemilinearProblem, SolveConfig};
use ppde::viscosity::{check_candidates, default_family, CheckConfig, Generator, MeasureFamily, Side, Verdict};

const STEPS: usize = 8;

/// Paths on the grid `k/8` with values `j/64`, so every distance is exact.
fn dyadic_path() -> impl Strategy<Value = DiscretePath> {
    prop::collection::vec(-128i32..128, STEPS).prop_map(|v| {
        let mut values = vec![0.0];
        values.extend(v.iter().map(|&j| j as f64 / 64.0));
        DiscretePath::scalar(&TimeGrid::uniform(0.0, 1.0, STEPS).unwrap(), &values).unwrap()
    })
}

fn knot_time() -> impl Strategy<Value = f64> {
    (0..=STEPS).prop_map(|k| k as f64 / STEPS as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_symmetric_and_triangular(
        a in dyadic_path(), b in dyadic_path(), c in dyadic_path(),
        ta in knot_time(), tb in knot_time(), tc in knot_time(),
    ) {
        let ab = dist_infty(ta, &a, tb, &b).unwrap();
        prop_assert_eq!(ab, dist_infty(tb, &b, ta, &a).unwrap());
        let bc = dist_infty(tb, &b, tc, &c).unwrap();
        let ac = dist_infty(ta, &a, tc, &c).unwrap();
        prop_assert!(ac <= ab + bc);
    }

    #[test]
    fn distance_ignores_suffix(a in dyadic_path(), b in dyadic_path(), k in 0..=STEPS) {
        let t = k as f64 / STEPS as f64;
        let mut values: Vec<f64> = a.values()[..=k].to_vec();
        values.extend_from_slice(&b.values()[k + 1..]);
        let mixed = DiscretePath::new(a.knots().to_vec(), values, 1).unwrap();
        prop_assert_eq!(dist_infty(t, &a, t, &mixed).unwrap(), 0.0);
    }

    #[test]
    fn concatenation_is_associative(a in dyadic_path(), b in dyadic_path(), c in dyadic_path(), i in 0..STEPS, j in 0..STEPS) {
        let (s, r) = ((i.min(j)) as f64 / 8.0, (i.max(j)) as f64 / 8.0);
        let tail = |p: &DiscretePath, from: f64| {
            let g = TimeGrid::uniform(from, 1.0, ((1.0 - from) * 8.0).round() as usize).unwrap();
            let vals: Vec<f64> = g.knots().iter().map(|&t| p.x(t - from) - p.x(0.0)).collect();
            DiscretePath::scalar(&g, &vals).unwrap()
        };
        let left = concat(&concat(&a, s, &tail(&b, s)).unwrap(), r, &tail(&c, r)).unwrap();
        let inner = concat(&tail(&b, s), r, &tail(&c, r)).unwrap();
        let right = concat(&a, s, &inner).unwrap();
        prop_assert_eq!(left.knots(), right.knots());
        prop_assert_eq!(left.values(), right.values());
    }

    #[test]
    fn radius_hitting_precedes_larger_domain(p in dyadic_path(), eps in 0.05f64..1.0, extra in 0.0f64..1.0) {
        let small = HittingTimeSpec::radius(eps).unwrap();
        let big = HittingTimeSpec::domain(ConvexDomain::Ball { radius: eps + extra }, eps + extra).unwrap();
        prop_assert!(hitting_time(&small, &p) <= hitting_time(&big, &p));
        prop_assert!(hitting_time(&small, &p) > 0.0);
    }

    #[test]
    fn shifted_functionals_ignore_the_suffix(a in dyadic_path(), b in dyadic_path(), k in 1..STEPS) {
        let s = k as f64 / 8.0;
        let x: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.coord_max(t, 0) + p.coord_integral(t, 0));
        let mut values: Vec<f64> = a.values()[..=k].to_vec();
        values.extend_from_slice(&b.values()[k + 1..]);
        let perturbed = DiscretePath::new(a.knots().to_vec(), values, 1).unwrap();
        let f = shift_functional(x.clone(), s, &a).unwrap();
        let g = shift_functional(x, s, &perturbed).unwrap();
        let cont = DiscretePath::scalar(&TimeGrid::uniform(s, 1.0, 2).unwrap(), &[0.0, 0.25, -0.5]).unwrap();
        prop_assert_eq!(f.eval(1.0, &cont), g.eval(1.0, &cont));
    }

    #[test]
    fn lattices_nest_in_larger_bounds(l1 in 0.1f64..4.0, factor in 1.0f64..3.0, dp in 1usize..6, sp in 2usize..6) {
        let lat = build_lattice(l1, 1, Refinement::new(dp, sp)).unwrap();
        prop_assert!(lat.members().iter().all(|m| m.admissible(l1 * factor)));
    }

    #[test]
    fn estimator_duality_and_constants(c in -5.0f64..5.0, seed in 0u64..1000) {
        let lat = build_lattice(1.0, 1, Refinement::MINIMAL).unwrap();
        let cfg = McConfig::new(TimeGrid::uniform(0.0, 1.0, 4).unwrap(), 64, seed);
        let k = move |_: f64, _: &DiscretePath| c;
        prop_assert_eq!(upper_expectation(&k, &lat, &cfg).unwrap().value, c);
        prop_assert_eq!(lower_expectation(&k, &lat, &cfg).unwrap().value, c);
        let x = |t: f64, p: &DiscretePath| p.x(t).sin();
        let neg = |t: f64, p: &DiscretePath| -p.x(t).sin();
        prop_assert_eq!(lower_expectation(&x, &lat, &cfg).unwrap().value, -upper_expectation(&neg, &lat, &cfg).unwrap().value);
    }

    #[test]
    fn snell_value_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, bump in 0.0f64..1.0, depth in 1usize..6) {
        let kernel = TreeKernel::second_order(&build_lattice(1.0, 1, Refinement::MINIMAL).unwrap(), 0.1).unwrap();
        let h = HittingTimeSpec::horizon(1.0).unwrap();
        let spec = TreeSpec::new(depth, 0.1);
        let x = move |t: f64, p: &DiscretePath| a * p.x(t) + b * p.coord_max(t, 0);
        let y = move |t: f64, p: &DiscretePath| a * p.x(t) + b * p.coord_max(t, 0) + bump * p.x(t).abs();
        let vx = snell_envelope(&x, &h, &kernel, spec).unwrap().y0();
        prop_assert!(vx <= snell_envelope(&y, &h, &kernel, spec).unwrap().y0());
        // Same bound, more controls: the refined kernel shares the grid step.
        let fine = TreeKernel::second_order(&build_lattice(1.0, 1, Refinement::default()).unwrap(), 0.1).unwrap();
        prop_assert!(vx <= snell_envelope(&x, &h, &fine, spec).unwrap().y0());
    }

    #[test]
    fn first_order_value_respects_the_reachable_bound(p in dyadic_path(), k in 0..STEPS, l in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let e = find("MAXDRIFT").unwrap();
        let problem = e.first_order_problem(l, Refinement::default()).unwrap();
        let FirstOrderTerminal::XMax(xi) = &problem.terminal else { panic!("expected an (x, max) terminal") };
        let t = k as f64 / STEPS as f64;
        let v = solve_first_order(&problem, t, &p, 0.125, 1 << 20).unwrap().value;
        // Drift at most L: the endpoint stays within L(T - t) and the maximum below max(m, x + L(T - t));
        // the terminal is linear in (x, max), so the corners bound it.
        let reach = l * (1.0 - t);
        let (x0, m0) = (p.x(t), p.coord_max(t, 0));
        let cheapest = problem.lattice.drifts().iter().map(|a| (problem.running_cost)(t, a.as_slice())).fold(f64::INFINITY, f64::min);
        let top = m0.max(x0 + reach);
        let corners = [(x0 - reach, top), (x0 + reach, top), (x0 - reach, m0.max(x0 - reach)), (x0 + reach, m0.max(x0 + reach))];
        let sup = corners.iter().map(|&(x, m)| xi(x, m)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v <= sup - cheapest * (1.0 - t) + 1e-12, "value {v} above bound {}", sup - cheapest * (1.0 - t));
    }
}

#[test]
fn path_batches_are_reproducible() {
    let c = ControlProcess::constant(
        TimeGrid::uniform(0.0, 1.0, 16).unwrap(),
        ControlPair::scalar(1, &[0.3], 0.8).unwrap(),
        1.0,
    )
    .unwrap();
    assert_eq!(simulate_paths(&c, 20, 9), simulate_paths(&c, 20, 9));
    assert_ne!(simulate_paths(&c, 20, 9), simulate_paths(&c, 20, 10));
}

#[test]
fn increments_reproduce_the_control() {
    let (alpha, beta, dt) = (0.4, 0.7, 0.1);
    let c = ControlProcess::constant(
        TimeGrid::uniform(0.0, dt, 1).unwrap(),
        ControlPair::scalar(1, &[alpha], beta).unwrap(),
        1.0,
    )
    .unwrap();
    let inc: Vec<f64> = simulate_paths(&c, 10_000, 4).iter().map(|p| p.x(dt)).collect();
    let n = inc.len() as f64;
    let mean = inc.iter().sum::<f64>() / n;
    let var = inc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean / dt - alpha).abs() <= 3.0 * (var / n).sqrt() / dt, "{mean}");
    // Var of the sample variance of a Gaussian is 2σ⁴/(n − 1).
    let target = beta * beta * dt;
    assert!((var - target).abs() <= 3.0 * (2.0 * target * target / (n - 1.0)).sqrt(), "{var}");
}

#[test]
fn terminal_data_order_is_preserved_by_the_tree_solver() {
    let lo: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.x(t).powi(2));
    let hi: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.x(t).powi(2) + p.coord_max(t, 0).abs());
    let cfg = SolveConfig::exact(0.1);
    let a = solve_semilinear(&SemilinearProblem::heat("lo", 1, 1.0, lo).with_driver(1.0, |_, _, y, z| 0.2 * y - 0.3 * z[0]), &cfg).unwrap();
    let b = solve_semilinear(&SemilinearProblem::heat("hi", 1, 1.0, hi).with_driver(1.0, |_, _, y, z| 0.2 * y - 0.3 * z[0]), &cfg).unwrap();
    assert!(a.value <= b.value);
}

#[test]
fn larger_families_admit_fewer_candidates() {
    let u: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.coord_integral(t, 0) + (1.0 - t) * p.x(t));
    let g = Generator::heat();
    let path = DiscretePath::scalar(&TimeGrid::uniform(0.0, 0.5, 4).unwrap(), &[0.0, 0.1, -0.2, 0.05, 0.15]).unwrap();
    let cfg = CheckConfig::new(1.0);
    let cands = default_family(u.as_ref(), 0.5, &path, &cfg).unwrap();
    for side in [Side::Sub, Side::Super] {
        let mut counts = Vec::new();
        for l in [0.5, 1.0, 2.0] {
            let fam = MeasureFamily::second_order(build_lattice(l, 1, Refinement::default()).unwrap()).unwrap().with_alphabet_bound(2.0);
            let rep = check_candidates(u.clone(), &g, side, 0.5, &path, &cands, &fam, &cfg).unwrap();
            let members: Vec<bool> = rep.records.iter().map(|r| r.member).collect();
            counts.push(members);
        }
        for w in counts.windows(2) {
            assert!(w[0].iter().zip(&w[1]).all(|(small, large)| *small || !*large), "{side}");
        }
    }
}

#[test]
fn checks_without_members_are_vacuous() {
    let u: Arc<dyn AdaptedFunctional> = Arc::new(|t: f64, p: &DiscretePath| p.coord_integral(t, 0) + (1.0 - t) * p.x(t));
    let path = DiscretePath::scalar(&TimeGrid::uniform(0.0, 0.5, 2).unwrap(), &[0.0, 0.1, -0.2]).unwrap();
    let cfg = CheckConfig::new(1.0);
    // A steeply falling time slope keeps every candidate below u after the anchor.
    let cands: Vec<_> = default_family(u.as_ref(), 0.5, &path, &cfg)
        .unwrap()
        .into_iter()
        .map(|mut c| {
            c.a -= 50.0;
            c
        })
        .collect();
    let fam = MeasureFamily::second_order(build_lattice(1.0, 1, Refinement::default()).unwrap()).unwrap();
    let rep = check_candidates(u, &Generator::heat(), Side::Sub, 0.5, &path, &cands, &fam, &cfg).unwrap();
    assert_eq!(rep.members().count(), 0);
    assert_eq!(rep.verdict, Verdict::Vacuous);
}
