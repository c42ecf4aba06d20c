//! Write a bifurcation diagram as CSV, JSON and SVG.
//!
//! `cargo run --release --example export -- [out-dir]`

use hamshoot::bvp::{linspace, start_grid, sweep, SweepSpec};
use hamshoot::export::{write_all, Exportable, Format};
use hamshoot::systems::{ExplicitSymplecticMap, SeparatedBvp};

fn main() -> hamshoot::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "out/export-example".into());
    let map = ExplicitSymplecticMap::example5_fold(0.0);
    let spec = SweepSpec {
        base_mu: vec![0.0],
        mu_index: 0,
        mu_grid: linspace(-0.1, 0.1, 11),
        starts: start_grid(&[(-1.0, 1.0)], 9),
        bounds: None,
    };
    let diagram = sweep(&map, &SeparatedBvp::example5(), &spec)?;
    print!("{}", diagram.render(Format::Csv)?);
    for path in write_all(&diagram, dir.as_ref(), "diagram", &[Format::Csv, Format::Json, Format::Svg])? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
