//! Continuation around the fold of the cubic map, with `det D_y h` at the
//! flagged point.
//!
//! `cargo run --release --example continuation`

use hamshoot::bvp::{branch_determinants, continue_branch, shoot, ContinuationParams, Tag};
use hamshoot::systems::{ExplicitSymplecticMap, SeparatedBvp};

fn main() -> hamshoot::Result<()> {
    let map = ExplicitSymplecticMap::example5_fold(0.0);
    let bvp = SeparatedBvp::example5();
    let seed = shoot(&map, &bvp, &[-0.1], &[0.3])?;
    let params = ContinuationParams {
        ds: 5e-3,
        mu_bounds: (-0.1, 0.1),
        y_bounds: Some(vec![(-1.0, 1.0)]),
        ..ContinuationParams::default()
    };
    let branch = continue_branch(&map, &bvp, &seed, &params)?;
    let dets = branch_determinants(&map, &bvp, &branch)?;
    for (p, d) in branch.points.iter().zip(&dets) {
        if p.tag == Tag::Fold {
            println!("fold near mu = {:+.6}, y = {:+.6}, det = {d:+.3e}", p.mu[0], p.y[0]);
        }
    }
    println!("{} points, stopped: {:?}", branch.points.len(), branch.termination);
    Ok(())
}
