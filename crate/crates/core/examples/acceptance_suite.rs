//! Runs selected acceptance criteria: `cargo run --example acceptance_suite -- 3 5 12`.

use ppde::acceptance::{run_criterion, Suite, CRITERIA};

fn main() {
    let ids: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids = if ids.is_empty() { CRITERIA.iter().map(|c| c.id).collect() } else { ids };
    for id in ids {
        println!("{}", run_criterion(id, &Suite::default()).line());
    }
}
