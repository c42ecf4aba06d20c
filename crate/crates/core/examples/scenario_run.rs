//! Run a command from a TOML scenario and print the run manifest location.
//!
//! `cargo run --release --example scenario_run -- scenarios/bratu_fold.toml`

use hamshoot::cli::run;
use hamshoot::scenario::RunConfig;

fn main() -> hamshoot::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/bratu_fold.toml".into());
    let cfg = RunConfig::from_path(path.as_ref())?;
    let outcome = run(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serialises"));
    Ok(())
}
