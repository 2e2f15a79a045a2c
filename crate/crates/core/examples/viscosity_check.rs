//! Viscosity checks of a first-order solution that is not differentiable, and
//! of a classical solution with a deliberate error.

use std::sync::Arc;

use ppde::oracles::{find, sample_points};
use ppde::pathspace::{AdaptedFunctional, DiscretePath};
use ppde::viscosity::{check_both, CheckConfig};

fn main() -> ppde::Result<()> {
    let cfg = CheckConfig::new(1.0);
    let maxdrift = find("MAXDRIFT")?;
    for (t, p) in sample_points(&maxdrift, 3, 11)? {
        let (sub, sup) = check_both(maxdrift.u.clone(), &maxdrift.generator, 1.0, t, &p, &cfg)?;
        println!(
            "MAXDRIFT t = {t:.3}: sub {} ({} members), super {} ({} members)",
            sub.verdict,
            sub.members().count(),
            sup.verdict,
            sup.members().count()
        );
    }
    let quad = find("QUADRATIC")?;
    let u = quad.u.clone();
    let wrong: Arc<dyn AdaptedFunctional> = Arc::new(move |t: f64, p: &DiscretePath| u.eval(t, p) + 0.1 * (1.0 - t));
    let (t, p) = sample_points(&quad, 1, 5)?.remove(0);
    let (sub, sup) = check_both(wrong, &quad.generator, 1.0, t, &p, &cfg)?;
    println!("QUADRATIC + 0.1(T - t): sub {}, super {}", sub.verdict, sup.verdict);
    Ok(())
}
