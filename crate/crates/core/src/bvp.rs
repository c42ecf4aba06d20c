//! Shooting residuals, Newton solves, multistart sweeps, pseudo-arclength
//! continuation and the pitchfork break metric.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::PhaseMap;
use crate::jets::{partials_matrix, values, Jet, Scalar};
use crate::linalg::{norm2, norm_inf};
use crate::systems::SeparatedBvp;

/// Residual tolerance for accepted solutions.
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 40;
pub const MAX_HALVINGS: usize = 8;
/// Condition number above which a Jacobian counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;
/// Roots closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Regular,
    Fold,
    CuspCandidate,
    UmbilicCandidate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub mu: Vec<f64>,
    pub y: Vec<f64>,
    /// Start point `z₀` of the solution motion.
    pub z_full: Vec<f64>,
    pub tag: Tag,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Why the branch ended, for continuation runs.
    pub termination: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BifurcationDiagram {
    pub branches: Vec<Branch>,
    pub method: String,
    /// Parameter values at which no start converged.
    pub empty_cells: Vec<f64>,
}

impl BifurcationDiagram {
    pub fn points(&self) -> impl Iterator<Item = &BranchPoint> {
        self.branches.iter().flat_map(|b| b.points.iter())
    }

    /// Re-evaluate every stored point; returns the worst residual norm.
    pub fn verify<M: PhaseMap>(&self, map: &M, bvp: &SeparatedBvp) -> Result<f64> {
        let mut worst = 0.0f64;
        for p in self.points() {
            let r = residual(map, bvp, &p.y, &p.mu)?;
            worst = worst.max(norm2(&r));
        }
        Ok(worst)
    }
}

/// `h_μ(y) = end-section residual of φ_μ(start(y))`.
pub fn residual<M: PhaseMap, S: Scalar>(
    map: &M,
    bvp: &SeparatedBvp,
    y: &[S],
    mu: &[S],
) -> Result<Vec<S>> {
    if y.len() != bvp.half_dim() || bvp.half_dim() != map.half_dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: y has {}, boundary problem {}, map {}",
            y.len(),
            bvp.half_dim(),
            map.half_dim()
        )));
    }
    let z0 = bvp.start_point(y);
    let z = map.apply(&z0, mu)?;
    Ok(bvp.end_residual(&z))
}

/// Residual and its Jacobian `D_y h_μ`.
pub fn residual_jacobian<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    y: &[f64],
    mu: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = y.len();
    let yj = crate::jets::lift_all(y);
    let mj: Vec<Jet<f64>> = mu.iter().map(|&m| Jet::constant(m, n)).collect();
    let r = residual(map, bvp, &yj, &mj)?;
    Ok((values(&r), partials_matrix(&r)))
}

/// Residual and its Jacobian with respect to `(y, μ_k)`.
pub fn residual_jacobian_mu<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    y: &[f64],
    mu: &[f64],
    k: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = y.len();
    let yj: Vec<Jet<f64>> = (0..n).map(|i| Jet::variable(y[i], i, n + 1)).collect();
    let mj: Vec<Jet<f64>> = mu
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if i == k {
                Jet::variable(m, n, n + 1)
            } else {
                Jet::constant(m, n + 1)
            }
        })
        .collect();
    let r = residual(map, bvp, &yj, &mj)?;
    Ok((values(&r), partials_matrix(&r)))
}

/// Detailed outcome of a Newton solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootReport {
    pub y: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest Jacobian condition number met along the way.
    pub condition: f64,
    pub message: String,
}

fn condition_number(j: &DMatrix<f64>) -> f64 {
    let sv = j.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Damped Newton on the shooting residual.
pub fn shoot_report<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    mu: &[f64],
    y0: &[f64],
) -> Result<ShootReport> {
    let mut y = y0.to_vec();
    let mut cond = 0.0f64;
    let (mut r, mut jac) = residual_jacobian(map, bvp, &y, mu)?;
    let mut rn = norm2(&r);
    for it in 0..=NEWTON_MAX_ITER {
        if rn < NEWTON_TOL {
            return Ok(ShootReport {
                y,
                residual_norm: rn,
                iterations: it,
                converged: true,
                condition: cond,
                message: "converged".into(),
            });
        }
        if it == NEWTON_MAX_ITER {
            break;
        }
        let c = condition_number(&jac);
        cond = cond.max(c);
        if c > SINGULAR_CONDITION {
            return Ok(ShootReport {
                y,
                residual_norm: rn,
                iterations: it,
                converged: false,
                condition: cond,
                message: format!("singular Jacobian (condition {c:.3e})"),
            });
        }
        let dy = match jac.clone().lu().solve(&DVector::from_column_slice(&r)) {
            Some(d) => d,
            None => break,
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let yt: Vec<f64> = y.iter().zip(dy.iter()).map(|(a, d)| a - lambda * d).collect();
            if let Ok((rt, jt)) = residual_jacobian(map, bvp, &yt, mu) {
                let rtn = norm2(&rt);
                if rtn.is_finite() && rtn < rn {
                    y = yt;
                    r = rt;
                    jac = jt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Ok(ShootReport {
                y,
                residual_norm: rn,
                iterations: it,
                converged: rn < NEWTON_TOL,
                condition: cond,
                message: "damping failed to reduce the residual".into(),
            });
        }
    }
    Ok(ShootReport {
        y,
        residual_norm: rn,
        iterations: NEWTON_MAX_ITER,
        converged: rn < NEWTON_TOL,
        condition: cond,
        message: "iteration limit reached".into(),
    })
}

/// Newton shooting; fails with diagnostics when no root is reached.
pub fn shoot<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    mu: &[f64],
    y0: &[f64],
) -> Result<BranchPoint> {
    let rep = shoot_report(map, bvp, mu, y0)?;
    if !rep.converged {
        return Err(Error::NoConvergence(format!(
            "shooting from {:?}: {} after {} iterations, best |res| = {:.3e} at y = {:?}",
            y0, rep.message, rep.iterations, rep.residual_norm, rep.y
        )));
    }
    Ok(BranchPoint {
        mu: mu.to_vec(),
        z_full: bvp.start_point(&rep.y),
        y: rep.y,
        tag: Tag::Regular,
    })
}

/// Axis-aligned box in `y`.
pub type YBox = Vec<(f64, f64)>;

fn in_box(y: &[f64], b: &Option<YBox>) -> bool {
    match b {
        None => true,
        Some(b) => y.iter().zip(b).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi),
    }
}

/// Converged roots farther apart than [`DEDUP_TOL`] but within this
/// distance are merged when the residual at their midpoint also passes the
/// Newton tolerance (Newton stalls at scattered points around a multiple
/// root).
pub const CLUSTER_TOL: f64 = 1e-2;

fn same_degenerate_root<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, mu: &[f64], a: &[f64], b: &[f64]) -> bool {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    residual(map, bvp, &mid, mu).is_ok_and(|r| norm2(&r) < NEWTON_TOL)
}

/// Converged, deduplicated roots at one parameter value.
pub fn roots_at<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    mu: &[f64],
    starts: &[Vec<f64>],
    bounds: &Option<YBox>,
) -> Vec<Vec<f64>> {
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for s in starts {
        if let Ok(p) = shoot(map, bvp, mu, s) {
            if !in_box(&p.y, bounds) {
                continue;
            }
            let dup = roots.iter().any(|r| {
                let d = dist(r, &p.y);
                d < DEDUP_TOL || (d < CLUSTER_TOL && same_degenerate_root(map, bvp, mu, r, &p.y))
            });
            if !dup {
                roots.push(p.y);
            }
        }
    }
    roots.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    roots
}

/// Sweep configuration: parameter `mu_index` of `base_mu` takes the grid
/// values in order.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base_mu: Vec<f64>,
    pub mu_index: usize,
    pub mu_grid: Vec<f64>,
    pub starts: Vec<Vec<f64>>,
    /// Roots outside the box are discarded.
    pub bounds: Option<YBox>,
}

/// Uniform multistart grid over a box, `per_axis` points per coordinate.
pub fn start_grid(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for &(lo, hi) in bounds {
        let mut next = Vec::new();
        for prefix in &out {
            for k in 0..per_axis {
                let t = if per_axis == 1 { 0.5 } else { k as f64 / (per_axis - 1) as f64 };
                let mut v: Vec<f64> = prefix.clone();
                v.push(lo + t * (hi - lo));
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Evenly spaced values including both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Roots for every grid value, in grid order.
pub fn sweep_roots<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, spec: &SweepSpec) -> Vec<(f64, Vec<Vec<f64>>)> {
    spec.mu_grid
        .par_iter()
        .map(|&m| {
            let mut mu = spec.base_mu.clone();
            mu[spec.mu_index] = m;
            (m, roots_at(map, bvp, &mu, &spec.starts, &spec.bounds))
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Multistart sweep with nearest-neighbour branch linking.
pub fn sweep<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, spec: &SweepSpec) -> Result<BifurcationDiagram> {
    if spec.mu_grid.is_empty() || spec.starts.is_empty() {
        return Err(Error::InvalidInput("sweep grids must be non-empty".into()));
    }
    if spec.mu_index >= spec.base_mu.len() {
        return Err(Error::InvalidInput(format!(
            "parameter index {} out of range",
            spec.mu_index
        )));
    }
    let cells = sweep_roots(map, bvp, spec);
    Ok(link_branches(&cells, spec, bvp, map.describe()))
}

/// Link per-parameter roots into branches.  Two consecutive roots are
/// linked when their distance is below ten times the median
/// nearest-neighbour displacement.
pub fn link_branches(
    cells: &[(f64, Vec<Vec<f64>>)],
    spec: &SweepSpec,
    bvp: &SeparatedBvp,
    method: String,
) -> BifurcationDiagram {
    let mut disp: Vec<f64> = Vec::new();
    for w in cells.windows(2) {
        for r in &w[1].1 {
            if let Some(d) = w[0].1.iter().map(|s| dist(r, s)).min_by(f64::total_cmp) {
                disp.push(d);
            }
        }
    }
    disp.sort_by(f64::total_cmp);
    let median = disp.get(disp.len() / 2).copied().unwrap_or(0.0);
    let bound = (10.0 * median).max(1e-9);

    let point = |m: f64, y: &Vec<f64>| {
        let mut mu = spec.base_mu.clone();
        mu[spec.mu_index] = m;
        BranchPoint {
            mu,
            z_full: bvp.start_point(y),
            y: y.clone(),
            tag: Tag::Regular,
        }
    };

    let mut finished: Vec<Branch> = Vec::new();
    let mut active: Vec<Branch> = Vec::new();
    let mut empty = Vec::new();
    for (m, roots) in cells {
        if roots.is_empty() {
            empty.push(*m);
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, b) in active.iter().enumerate() {
            let last = &b.points.last().unwrap().y;
            for (ri, r) in roots.iter().enumerate() {
                let d = dist(last, r);
                if d <= bound {
                    pairs.push((d, bi, ri));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut used_b = vec![false; active.len()];
        let mut used_r = vec![false; roots.len()];
        let mut next: Vec<Branch> = Vec::new();
        for (_, bi, ri) in pairs {
            if used_b[bi] || used_r[ri] {
                continue;
            }
            used_b[bi] = true;
            used_r[ri] = true;
            let mut b = std::mem::take(&mut active[bi]);
            b.points.push(point(*m, &roots[ri]));
            next.push(b);
        }
        for (bi, b) in active.into_iter().enumerate() {
            if !used_b[bi] {
                finished.push(b);
            }
        }
        for (ri, r) in roots.iter().enumerate() {
            if !used_r[ri] {
                next.push(Branch {
                    points: vec![point(*m, r)],
                    termination: None,
                });
            }
        }
        active = next;
    }
    finished.extend(active);
    finished.retain(|b| !b.points.is_empty());
    finished.sort_by(|a, b| {
        let (pa, pb) = (&a.points[0], &b.points[0]);
        pa.mu[spec.mu_index]
            .total_cmp(&pb.mu[spec.mu_index])
            .then_with(|| pa.y[0].total_cmp(&pb.y[0]))
    });
    BifurcationDiagram {
        branches: finished,
        method,
        empty_cells: empty,
    }
}

/// Pseudo-arclength continuation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationParams {
    pub mu_index: usize,
    pub ds: f64,
    pub ds_min: f64,
    pub max_steps: usize,
    /// Initial direction of travel in the parameter.
    pub direction: f64,
    pub mu_bounds: (f64, f64),
    pub y_bounds: Option<YBox>,
}

impl Default for ContinuationParams {
    fn default() -> Self {
        ContinuationParams {
            mu_index: 0,
            ds: 1e-2,
            ds_min: 1e-6,
            max_steps: 20_000,
            direction: 1.0,
            mu_bounds: (f64::NEG_INFINITY, f64::INFINITY),
            y_bounds: None,
        }
    }
}

fn null_tangent(j: &DMatrix<f64>, prev: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let n = j.nrows();
    let solve_with = |border: &DVector<f64>| {
        let mut b = DMatrix::zeros(n + 1, n + 1);
        b.view_mut((0, 0), (n, n + 1)).copy_from(j);
        b.row_mut(n).copy_from(&border.transpose());
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        b.lu().solve(&rhs).filter(|t| t.iter().all(|x| x.is_finite()))
    };
    let t = match prev {
        Some(p) => solve_with(p),
        None => (0..=n).rev().find_map(|c| {
            let e = DVector::from_fn(n + 1, |i, _| if i == c { 1.0 } else { 0.0 });
            solve_with(&e)
        }),
    }
    .ok_or_else(|| Error::Singular("bordered tangent system".into()))?;
    let nn = t.norm();
    if nn == 0.0 || !nn.is_finite() {
        return Err(Error::Singular("degenerate continuation tangent".into()));
    }
    Ok(t / nn)
}

fn det_of(j: &DMatrix<f64>) -> f64 {
    if j.nrows() == 0 {
        1.0
    } else {
        j.determinant()
    }
}

/// Pseudo-arclength continuation from a converged seed.
///
/// Points whose parameter component of the tangent changes sign are tagged
/// as folds.  The branch ends at the parameter or state bounds, after
/// `max_steps`, or when the step size falls below `ds_min`.
pub fn continue_branch<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    seed: &BranchPoint,
    params: &ContinuationParams,
) -> Result<Branch> {
    let n = seed.y.len();
    let k = params.mu_index;
    let mut u = DVector::from_fn(n + 1, |i, _| if i < n { seed.y[i] } else { seed.mu[k] });
    let mu_of = |u: &DVector<f64>| {
        let mut m = seed.mu.clone();
        m[k] = u[n];
        m
    };
    let (r0, j0) = residual_jacobian_mu(map, bvp, &seed.y, &seed.mu, k)?;
    if norm2(&r0) > NEWTON_TOL {
        return Err(Error::InvalidInput(format!(
            "continuation seed is not a solution (|res| = {:.3e})",
            norm2(&r0)
        )));
    }
    let mut t = null_tangent(&j0, None)?;
    if t[n] * params.direction < 0.0 || (t[n] == 0.0 && params.direction < 0.0) {
        t = -t;
    }
    let mut branch = Branch::default();
    branch.points.push(BranchPoint {
        mu: seed.mu.clone(),
        y: seed.y.clone(),
        z_full: bvp.start_point(&seed.y),
        tag: Tag::Regular,
    });
    let mut ds = params.ds;
    let mut steps = 0;
    let termination;
    loop {
        if steps >= params.max_steps {
            termination = "step limit".to_string();
            break;
        }
        let pred = &u + &t * ds;
        let mut v = pred.clone();
        let mut ok = false;
        let mut jac_at_v = None;
        for _ in 0..15 {
            let y: Vec<f64> = v.iter().take(n).copied().collect();
            let (r, j) = match residual_jacobian_mu(map, bvp, &y, &mu_of(&v), k) {
                Ok(x) => x,
                Err(_) => break,
            };
            let rn = norm2(&r);
            let arc = t.dot(&(&v - &pred));
            if rn < NEWTON_TOL && arc.abs() < 1e-12 {
                ok = true;
                jac_at_v = Some(j);
                break;
            }
            let mut b = DMatrix::zeros(n + 1, n + 1);
            b.view_mut((0, 0), (n, n + 1)).copy_from(&j);
            b.row_mut(n).copy_from(&t.transpose());
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&DVector::from_vec(r));
            rhs[n] = arc;
            match b.lu().solve(&rhs) {
                Some(d) if d.iter().all(|x| x.is_finite()) => v -= d,
                _ => break,
            }
        }
        if !ok {
            ds *= 0.5;
            if ds < params.ds_min {
                termination = format!("corrector failed at step floor {:.1e}", params.ds_min);
                break;
            }
            continue;
        }
        let j = jac_at_v.unwrap();
        let t_new = null_tangent(&j, Some(&t))?;
        let yv: Vec<f64> = v.iter().take(n).copied().collect();
        let mut tag = Tag::Regular;
        if t_new[n] * t[n] < 0.0 {
            tag = Tag::Fold;
        }
        let mu_v = mu_of(&v);
        if mu_v[k] < params.mu_bounds.0 || mu_v[k] > params.mu_bounds.1 || !in_box(&yv, &params.y_bounds) {
            termination = "left the domain".to_string();
            break;
        }
        branch.points.push(BranchPoint {
            mu: mu_v,
            z_full: bvp.start_point(&yv),
            y: yv,
            tag,
        });
        u = v;
        t = t_new;
        steps += 1;
        ds = (ds * 1.5).min(params.ds);
    }
    branch.termination = Some(termination);
    Ok(branch)
}

/// `det D_y h_μ` at every stored point of a branch.
pub fn branch_determinants<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, branch: &Branch) -> Result<Vec<f64>> {
    branch
        .points
        .iter()
        .map(|p| residual_jacobian(map, bvp, &p.y, &p.mu).map(|(_, j)| det_of(&j)))
        .collect()
}

/// A fold point refined on the extended system `(h_μ(y), det D_y h_μ(y)) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPoint {
    pub mu: Vec<f64>,
    pub y: Vec<f64>,
    pub residual_norm: f64,
    pub det: f64,
}

/// Newton on the extended fold system in `(y, μ_k)`; the derivative of the
/// determinant row is taken by central differences of jet Jacobians.
pub fn refine_fold<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    mu: &[f64],
    y: &[f64],
    k: usize,
) -> Result<FoldPoint> {
    let n = y.len();
    let mut u: Vec<f64> = y.to_vec();
    u.push(mu[k]);
    let mu_of = |u: &[f64]| {
        let mut m = mu.to_vec();
        m[k] = u[n];
        m
    };
    let det_at = |u: &[f64]| -> Result<f64> {
        let (_, j) = residual_jacobian(map, bvp, &u[..n], &mu_of(u))?;
        Ok(det_of(&j))
    };
    let mut last: Option<(FoldPoint, f64)> = None;
    let mut small_steps = 0;
    for _ in 0..40 {
        let (r, j) = residual_jacobian_mu(map, bvp, &u[..n], &mu_of(&u), k)?;
        let jy = j.columns(0, n).into_owned();
        let d = det_of(&jy);
        let hadamard: f64 = j.row_iter().map(|r| r.norm()).product::<f64>().max(1.0);
        last = Some((
            FoldPoint {
                mu: mu_of(&u),
                y: u[..n].to_vec(),
                residual_norm: norm2(&r),
                det: d,
            },
            hadamard,
        ));
        if small_steps >= 2 {
            break;
        }
        let mut g = DMatrix::zeros(n + 1, n + 1);
        g.view_mut((0, 0), (n, n + 1)).copy_from(&j);
        let scale = norm_inf(&u).max(1.0);
        for c in 0..=n {
            let e = 1e-6 * scale;
            let mut up = u.clone();
            let mut um = u.clone();
            up[c] += e;
            um[c] -= e;
            g[(n, c)] = (det_at(&up)? - det_at(&um)?) / (2.0 * e);
        }
        let rhs = DVector::from_vec(r).push(d);
        let du = g
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("extended fold system".into()))?;
        for i in 0..=n {
            u[i] -= du[i];
        }
        if u.iter().any(|v| !v.is_finite()) {
            break;
        }
        if du.amax() < 1e-13 * scale {
            small_steps += 1;
        }
    }
    let (b, hadamard) = last.unwrap();
    if b.residual_norm < NEWTON_TOL && b.det.abs() < 1e-8 * hadamard {
        Ok(b)
    } else {
        Err(Error::NoConvergence(format!(
            "fold refinement stalled with |res| = {:.3e}, det = {:.3e}",
            b.residual_norm, b.det
        )))
    }
}

/// Extra undamped Newton steps on a converged root until the update is at
/// roundoff level.
pub fn polish<M: PhaseMap>(map: &M, bvp: &SeparatedBvp, mu: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let mut y = y.to_vec();
    for _ in 0..6 {
        let (r, j) = residual_jacobian(map, bvp, &y, mu)?;
        let Some(d) = j.lu().solve(&DVector::from_vec(r)) else { break };
        let scale = norm_inf(&y).max(1.0);
        for i in 0..y.len() {
            y[i] -= d[i];
        }
        if d.amax() < 1e-15 * scale {
            break;
        }
    }
    Ok(y)
}

/// Region searched by [`pitchfork_break`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub mu_index: usize,
    pub base_mu: Vec<f64>,
    pub mu_range: (f64, f64),
    pub mu_points: usize,
    pub y_box: YBox,
    pub starts_per_axis: usize,
}

/// Measured break of a numerical pitchfork.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakReport {
    /// Minimal gap between continuing branch and fold pair at the fold.
    pub gap: f64,
    pub fold: FoldPoint,
    pub continuing_y: Vec<f64>,
    /// Maximal number of coexisting roots seen in the window.
    pub max_roots: usize,
}

/// Break magnitude of a pitchfork inside `window`.
///
/// The fold is bracketed from the sweep (root count drops by two between
/// adjacent parameter values), refined on the extended system, and the
/// root on the single-root side is continued in the parameter to the fold.
/// `metric` maps `y` differences before taking the Euclidean norm.
pub fn pitchfork_break<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    diagram: &BifurcationDiagram,
    window: &Window,
    metric: Option<&DMatrix<f64>>,
) -> Result<BreakReport> {
    let k = window.mu_index;
    let mut cells: Vec<(f64, Vec<Vec<f64>>)> = Vec::new();
    for p in diagram.points() {
        let m = p.mu[k];
        if m < window.mu_range.0 || m > window.mu_range.1 {
            continue;
        }
        match cells.iter_mut().find(|c| c.0 == m) {
            Some(c) => c.1.push(p.y.clone()),
            None => cells.push((m, vec![p.y.clone()])),
        }
    }
    let mut grid: Vec<f64> = crate::bvp::linspace(window.mu_range.0, window.mu_range.1, window.mu_points);
    grid.retain(|m| !cells.iter().any(|c| c.0 == *m));
    for m in grid {
        cells.push((m, Vec::new()));
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_roots = cells.iter().map(|c| c.1.len()).max().unwrap_or(0);

    // Bracket: adjacent cells whose counts differ by two, pick the one
    // whose many-root side has the closest root pair.
    let mut best: Option<(f64, usize, usize, Vec<f64>)> = None;
    for i in 0..cells.len().saturating_sub(1) {
        let (a, b) = (&cells[i], &cells[i + 1]);
        let (many, few_idx) = if a.1.len() == b.1.len() + 2 {
            (i, i + 1)
        } else if b.1.len() == a.1.len() + 2 {
            (i + 1, i)
        } else {
            continue;
        };
        let roots = &cells[many].1;
        for x in 0..roots.len() {
            for y in x + 1..roots.len() {
                let d = dist(&roots[x], &roots[y]);
                if best.as_ref().map_or(true, |b| d < b.0) {
                    let mid: Vec<f64> = roots[x].iter().zip(&roots[y]).map(|(p, q)| 0.5 * (p + q)).collect();
                    best = Some((d, many, few_idx, mid));
                }
            }
        }
    }
    let (_, many, few, mid) = best.ok_or_else(|| {
        Error::NoConvergence("window contains no fold (root count never changes by two)".into())
    })?;
    let mut mu_many = window.base_mu.clone();
    mu_many[k] = cells[many].0;
    let fold = refine_fold(map, bvp, &mu_many, &mid, k)?;

    // Continuing root: on the few-root side, the root that is not part of a
    // pair, continued to the fold parameter.
    let few_roots = &cells[few].1;
    let cont0 = few_roots
        .iter()
        .min_by(|a, b| dist(a, &fold.y).total_cmp(&dist(b, &fold.y)))
        .cloned()
        .ok_or_else(|| Error::NoConvergence("no continuing root beside the fold".into()))?;
    let m0 = cells[few].0;
    let m1 = fold.mu[k];
    let mut y = cont0;
    let sub = 40;
    for s in 1..=sub {
        let mut mu = window.base_mu.clone();
        mu[k] = m0 + (m1 - m0) * s as f64 / sub as f64;
        y = shoot(map, bvp, &mu, &y)?.y;
    }
    let mut mu_f = window.base_mu.clone();
    mu_f[k] = m1;
    y = polish(map, bvp, &mu_f, &y)?;
    let diff: Vec<f64> = y.iter().zip(&fold.y).map(|(a, b)| a - b).collect();
    let gap = match metric {
        Some(g) => (g * DVector::from_vec(diff)).norm(),
        None => norm2(&diff),
    };
    Ok(BreakReport {
        gap,
        fold,
        continuing_y: y,
        max_roots,
    })
}

/// Sweep a window and measure the break in one call.
pub fn measure_break<M: PhaseMap>(
    map: &M,
    bvp: &SeparatedBvp,
    window: &Window,
    metric: Option<&DMatrix<f64>>,
) -> Result<(BifurcationDiagram, BreakReport)> {
    let spec = SweepSpec {
        base_mu: window.base_mu.clone(),
        mu_index: window.mu_index,
        mu_grid: linspace(window.mu_range.0, window.mu_range.1, window.mu_points),
        starts: start_grid(&window.y_box, window.starts_per_axis),
        bounds: Some(window.y_box.clone()),
    };
    let diagram = sweep(map, bvp, &spec)?;
    let report = pitchfork_break(map, bvp, &diagram, window, metric)?;
    Ok((diagram, report))
}
