//! Locate the umbilic of the Hénon–Heiles shooting family.
//!
//! `cargo run --release --example umbilic`

use hamshoot::cli::build_problem;
use hamshoot::scenario::{Command, RunConfig};
use hamshoot::singular::{locate_umbilic, umbilic_seed, GridBox, ShootingFamily};

fn main() -> hamshoot::Result<()> {
    let cfg = RunConfig::new(Command::LocateUmbilic).resolve()?;
    let pb = build_problem(&cfg, cfg.steps.unwrap_or(10))?;
    let fam = ShootingFamily::henon_heiles(&pb.map, pb.bvp.tau);
    let grid = GridBox::new(vec![0.5, -1.0, 0.0], vec![2.0, 1.0, 3.0], vec![16; 3])?;
    let seed = umbilic_seed(&fam, &grid)?;
    let u = locate_umbilic(&fam, &seed)?;
    println!("seed     {seed:?}");
    println!("umbilic  {:?}", u.w);
    println!("residual {:e} after {} iterations", u.residual, u.iterations);
    println!("corank   {}  singular values {:?}", u.point.corank, u.point.singular_values);
    Ok(())
}
