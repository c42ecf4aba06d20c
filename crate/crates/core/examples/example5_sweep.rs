//! Multistart sweep of the cubic fold map and the linked branches.
//!
//! `cargo run --release --example example5_sweep`

use hamshoot::bvp::{linspace, start_grid, sweep, SweepSpec};
use hamshoot::systems::{ExplicitSymplecticMap, SeparatedBvp};

fn main() -> hamshoot::Result<()> {
    let map = ExplicitSymplecticMap::example5_fold(0.0);
    let bvp = SeparatedBvp::example5();
    let spec = SweepSpec {
        base_mu: vec![0.0],
        mu_index: 0,
        mu_grid: linspace(-0.1, 0.1, 21),
        starts: start_grid(&[(-1.0, 1.0)], 9),
        bounds: Some(vec![(-1.0, 1.0)]),
    };
    let diagram = sweep(&map, &bvp, &spec)?;
    for (i, b) in diagram.branches.iter().enumerate() {
        let first = &b.points[0];
        let last = &b.points[b.points.len() - 1];
        println!(
            "branch {i}: {} points, mu {:+.3} -> {:+.3}",
            b.points.len(),
            first.mu[0],
            last.mu[0]
        );
    }
    println!("worst residual {:e}", diagram.verify(&map, &bvp)?);
    Ok(())
}
