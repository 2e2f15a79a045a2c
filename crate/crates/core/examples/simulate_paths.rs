//! Simulates a few controlled paths and prints their summary statistics.

use ppde::measures::{simulate_paths, ControlPair, ControlProcess};
use ppde::pathspace::{write_batch_csv, TimeGrid};

fn main() -> ppde::Result<()> {
    let grid = TimeGrid::uniform(0.0, 1.0, 200)?;
    // Drift 0.5 and diffusion 0.8: both within the bound L = 1.
    let control = ControlProcess::constant(grid, ControlPair::scalar(1, &[0.5], 0.8)?, 1.0)?;
    let paths = simulate_paths(&control, 5, 42);
    for (i, p) in paths.iter().enumerate() {
        let s = p.summary(1.0);
        println!("path {i}: x_T = {:+.4}, max = {:.4}, integral = {:+.4}", s.x[0], s.max[0], s.integral[0]);
    }
    let file = std::env::temp_dir().join("ppde_paths.csv");
    write_batch_csv(&paths, std::fs::File::create(&file)?)?;
    println!("wrote {}", file.display());
    Ok(())
}
