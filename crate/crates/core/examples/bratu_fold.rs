//! Fold of the Bratu problem by pseudo-arclength continuation.
//!
//! `cargo run --release --example bratu_fold`

use hamshoot::bvp::{continue_branch, refine_fold, roots_at, shoot, start_grid, ContinuationParams, Tag};
use hamshoot::integrate::{Discretized, FlowSpec, Method};
use hamshoot::singular::ShootingFamily;
use hamshoot::systems::{HamiltonianSystem, Model, SeparatedBvp};

fn main() -> hamshoot::Result<()> {
    let c = 0.5;
    let sys = HamiltonianSystem::new(Model::Bratu, "bratu", vec![c]);
    let map = Discretized::new(sys, FlowSpec::new(Method::Sv, 20, 1.0));
    let bvp = SeparatedBvp::bratu();

    let roots = roots_at(&map, &bvp, &[c], &start_grid(&[(0.0, 12.0)], 60), &None);
    println!("roots at C = {c}: {roots:?}");

    let seed = shoot(&map, &bvp, &[c], &roots[0])?;
    let params = ContinuationParams {
        mu_bounds: (0.05, 4.0),
        y_bounds: Some(vec![(0.0, 12.0)]),
        ..ContinuationParams::default()
    };
    let branch = continue_branch(&map, &bvp, &seed, &params)?;
    println!("{} branch points, stopped: {:?}", branch.points.len(), branch.termination);

    for p in branch.points.iter().filter(|p| p.tag == Tag::Fold) {
        let f = refine_fold(&map, &bvp, &p.mu, &p.y, 0)?;
        let fam = ShootingFamily::new(&map, bvp.clone(), f.mu.clone()).with_free_mu(0);
        let class = fam.classify(&[f.mu[0], f.y[0]])?;
        println!("fold C* = {:.12}  p0 = {:.12}  class {class:?}", f.mu[0], f.y[0]);
    }
    Ok(())
}
