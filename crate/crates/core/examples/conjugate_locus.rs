//! First conjugate locus on a triaxial ellipsoid and its cusps.
//!
//! `cargo run --release --example conjugate_locus`

use hamshoot::georattle::{conjugate_locus, RayGrid, DEFAULT_H};
use hamshoot::systems::hypersurface_catalog;

fn main() -> hamshoot::Result<()> {
    let surface = hypersurface_catalog("ellipsoid")?;
    let q = surface.q_star.clone().expect("catalog surfaces carry a base point");
    let locus = conjugate_locus(&surface, &q, &RayGrid::Circle { count: 120 }, DEFAULT_H, None)?;
    let arcs: Vec<f64> = locus.rays.iter().filter_map(|r| r.arc).collect();
    println!("{} of {} rays reach a conjugate point", arcs.len(), locus.rays.len());
    println!(
        "arc range [{:.6}, {:.6}]",
        arcs.iter().copied().fold(f64::INFINITY, f64::min),
        arcs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    );
    for c in &locus.cusp_points {
        println!("cusp at theta = {:+.4}, arc {:.6}, endpoint {:?}", c.params[0], c.arc, c.endpoint);
    }
    Ok(())
}
