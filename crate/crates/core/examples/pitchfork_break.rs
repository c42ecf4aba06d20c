//! Break of the planar pitchfork under the symplectic Euler discretisation
//! at two step counts.
//!
//! `cargo run --release --example pitchfork_break`

use hamshoot::cli::break_at;
use hamshoot::scenario::{Command, RunConfig};

fn main() -> hamshoot::Result<()> {
    let cfg = RunConfig::new(Command::Pitchfork).resolve()?;
    let mut gaps = Vec::new();
    for steps in [14, 28] {
        let (_, run) = break_at(&cfg, steps)?;
        println!(
            "N = {steps:>2}: gap {:.6e} at mu = {:.9}",
            run.report.gap, run.report.fold.mu[run.report.fold.mu.len() - 1]
        );
        gaps.push(run.report.gap);
    }
    println!("ratio {:.2}", gaps[0] / gaps[1]);
    Ok(())
}
