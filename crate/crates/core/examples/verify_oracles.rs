//! Runs the classification checks of every registered oracle and prints the CSV report.

use ppde::oracles::{verify_all, Tolerances};

fn main() -> ppde::Result<()> {
    let report = verify_all(&Tolerances::default())?;
    report.write_csv(std::io::stdout())?;
    eprintln!("all checks pass: {}", report.pass());
    Ok(())
}
