//! Level bifurcation sets of the elliptic and hyperbolic umbilic unfoldings.
//!
//! `cargo run --release --example d4_level_set`

use hamshoot::catastrophe::{d4_level_set, D4Grid, D4Kind};

fn main() -> hamshoot::Result<()> {
    for kind in [D4Kind::Plus, D4Kind::Minus] {
        for mu4 in [0.0, 0.2] {
            let set = d4_level_set(kind, mu4, &D4Grid::default())?;
            let worst = set.most_degenerate().expect("non-empty sampling");
            println!(
                "{kind:?} mu4 = {mu4}: {} samples, {} cusps, min |Df| = {:.3e} at ({:+.4}, {:+.4})",
                set.samples().count(),
                set.cusps().count(),
                worst.jac_norm,
                worst.x,
                worst.y
            );
        }
    }
    Ok(())
}
