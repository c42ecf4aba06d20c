//! Swallowtail points of the perturbed hyperbolic umbilic, traced and in
//! closed form.
//!
//! `cargo run --release --example swallowtail`

use hamshoot::catastrophe::D4Grid;
use hamshoot::cli::compare_swallowtails;

fn main() -> hamshoot::Result<()> {
    for mu4 in [0.1, 0.24] {
        let c = compare_swallowtails(mu4, &D4Grid::default())?;
        for (src, pts) in [("traced", &c.traced), ("exact", &c.closed_form)] {
            for p in pts.iter() {
                println!("mu4 = {mu4}: {src:<6} ({:+.6}, {:+.6}, {:+.6})", p.x, p.y, p.mu3);
            }
        }
        println!("max error {:.2e}", c.max_error);
    }
    Ok(())
}
