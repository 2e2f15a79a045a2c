//! Path derivatives and the functional Itô formula on the running-maximum
//! heat solution, and the failure of the formula for the bare running maximum.

use ppde::calculus::{jet, FiniteDifference, SmoothFunctional};
use ppde::oracles::{find, ito_residuals};
use ppde::pathspace::{DiscretePath, TimeGrid};

fn main() -> ppde::Result<()> {
    let e = find("HEAT-RUNMAX")?;
    let analytic = e.smooth.clone().expect("closed-form derivatives");
    let path = DiscretePath::scalar(&TimeGrid::uniform(0.0, 0.4, 4)?, &[0.0, 0.3, 0.5, 0.2, 0.1])?;
    let fd = FiniteDifference::new(e.u.clone(), 1, 1e-4, 1e-3, e.horizon)?;
    let (a, b) = (jet(&analytic, 0.4, &path), jet(&fd, 0.4, &path));
    println!("analytic: u = {:.6}, du/dt = {:.6}, du/dw = {:.6}, d2u = {:.6}", a.value, a.time, a.gradient[0], a.hessian[(0, 0)]);
    println!("finite  : u = {:.6}, du/dt = {:.6}, du/dw = {:.6}, d2u = {:.6}", b.value, b.time, b.gradient[0], b.hessian[(0, 0)]);
    println!("heat residual -du/dt - d2u/2 = {:.2e}", -a.time - 0.5 * a.hessian[(0, 0)]);

    let steps = [128, 256, 512];
    let r = ito_residuals(&analytic, e.probe, &steps, 200, 1)?;
    println!("Ito residual RMS for {steps:?} steps: {r:.5?}");
    let nonsmooth = find("RUNMAX-NONSMOOTH")?;
    let r = ito_residuals(nonsmooth.smooth.as_ref().unwrap() as &dyn SmoothFunctional, nonsmooth.probe, &steps, 200, 1)?;
    println!("running maximum, any derivative choice: {r:.3?}");
    Ok(())
}
