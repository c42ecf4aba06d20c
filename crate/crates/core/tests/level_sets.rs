use std::f64::consts::PI;

use hamshoot::bvp::linspace;
use hamshoot::georattle::{rho_of, GeodesicFan};
use hamshoot::singular::marching_square;
use hamshoot::systems::hypersurface_catalog;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Degeneracy set of the sphere's exponential map on a (direction, arc)
/// box: a line at arc π whose image collapses to the antipode.
#[test]
fn sphere_degeneracy_set_collapses_to_the_antipode() {
    let s = hypersurface_catalog("sphere").unwrap();
    let q = [0.0, 0.0, 1.0];
    let fan = GeodesicFan::new(&s, &q, 0.01, None).unwrap();
    let thetas = linspace(0.0, 2.0 * PI, 25);
    let arcs = linspace(2.6, 3.6, 11);
    let field: Vec<Vec<f64>> = thetas
        .iter()
        .map(|&th| {
            arcs.iter()
                .map(|&t| fan.monitor(&fan.shoot(&rho_of(&[th]), t).unwrap()).0)
                .collect()
        })
        .collect();

    let mut segments = Vec::new();
    for i in 0..thetas.len() - 1 {
        for j in 0..arcs.len() - 1 {
            let pos = [
                [thetas[i], arcs[j]],
                [thetas[i + 1], arcs[j]],
                [thetas[i + 1], arcs[j + 1]],
                [thetas[i], arcs[j + 1]],
            ];
            let vals = [field[i][j], field[i + 1][j], field[i + 1][j + 1], field[i][j + 1]];
            segments.extend(marching_square(&pos, &vals));
        }
    }
    assert_eq!(segments.len(), thetas.len() - 1);

    let antipode = [0.0, 0.0, -1.0];
    let mut worst: f64 = 0.0;
    for seg in &segments {
        for v in seg {
            assert!((v[1] - PI).abs() < 1e-2, "zero at arc {}", v[1]);
            let end = fan.shoot(&rho_of(&[v[0]]), v[1]).unwrap().state.q;
            worst = worst.max(dist(&end, &antipode));
        }
    }
    let box_edge = fan.shoot(&rho_of(&[0.0]), arcs[0]).unwrap().state.q;
    assert!(dist(&box_edge, &antipode) > 0.5);
    assert!(worst < 5e-3, "image spread {worst}");
}
