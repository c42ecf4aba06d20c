//! Level bifurcation set around the Hénon–Heiles umbilic and the degree of
//! the cusp ridges at the hub.
//!
//! `cargo run --release --example level_set`

use hamshoot::cli::build_problem;
use hamshoot::scenario::{Command, RunConfig};
use hamshoot::singular::{
    cusp_ridges, level_bifurcation_set, locate_umbilic, ridge_degree, umbilic_seed, GridBox, ShootingFamily,
};

fn main() -> hamshoot::Result<()> {
    let cfg = RunConfig::new(Command::LevelSet).resolve()?;
    let pb = build_problem(&cfg, cfg.steps.unwrap_or(10))?;
    let fam = ShootingFamily::henon_heiles(&pb.map, pb.bvp.tau);
    let seed = umbilic_seed(&fam, &GridBox::new(vec![0.5, -1.0, 0.0], vec![2.0, 1.0, 3.0], vec![16; 3])?)?;
    let c = locate_umbilic(&fam, &seed)?.w;

    let grid = GridBox::around(&c, 0.5, 41)?;
    let set = level_bifurcation_set(&fam, &grid)?;
    let ridges = cusp_ridges(&set)?;
    let cell = grid.cell_diameter();
    let degree = ridge_degree(&ridges, [c[0], c[1], c[2]], 4.0 * cell, cell);
    println!("{} vertices, {} triangles", set.vertices.len(), set.triangles.len());
    println!("{} ridge segments, degree per nappe {degree:?}", ridges.segments.len());
    Ok(())
}
