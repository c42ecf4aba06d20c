//! Corank tests, umbilic location and level bifurcation sets.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvp::{linspace, residual, residual_jacobian};
use crate::error::{Error, Result};
use crate::integrate::PhaseMap;
use crate::linalg::norm2;
use crate::systems::SeparatedBvp;

/// Default relative tolerance for [`corank`].
pub const CORANK_TOL: f64 = 1e-6;

/// Number of singular values at or below `tol * max(σ_max, 1)`.
///
/// A zero matrix has full corank.
pub fn corank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thr = tol * smax.max(1.0);
    sv.iter().filter(|&&s| s <= thr).count()
}

/// Singular values sorted in decreasing order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Finite-difference step for the umbilic Gauss–Newton Jacobian.
pub const UMBILIC_FD_STEP: f64 = 1e-5;
/// Frobenius norm of `D_yφ^X` below which an umbilic counts as located.
pub const UMBILIC_TOL: f64 = 1e-8;
pub const UMBILIC_MAX_ITER: usize = 60;
/// Stagnation: relative decrease below [`STAGNATION_DECREASE`] over this
/// many iterations.
pub const STAGNATION_WINDOW: usize = 5;
pub const STAGNATION_DECREASE: f64 = 1e-3;
/// Step and threshold of the directional determinacy test.
pub const CLASSIFY_STEP: f64 = 1e-3;
pub const CLASSIFY_TOL: f64 = 1e-4;
/// Step of the central differences behind `∇_y det`.
pub const DET_GRAD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassHint {
    A2,
    A3,
    A4Candidate,
    D4Candidate,
    Unknown,
}

/// Outcome of [`classify_a`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AClass {
    A2,
    A3,
    Higher,
}

/// A point of a shooting family together with its Jacobian `D_yφ^X`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularPoint {
    pub mu: Vec<f64>,
    /// Values of the free start sections.
    pub params: Vec<f64>,
    pub y: Vec<f64>,
    pub jac: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub corank: usize,
    pub class_hint: ClassHint,
}

/// Coordinates `w` of a degeneracy search: optionally one parameter `μ_k`,
/// then the values of selected start sections, then the free shooting
/// variables `y`.
#[derive(Clone, Debug)]
pub struct ShootingFamily<'a, M> {
    pub map: &'a M,
    pub bvp: SeparatedBvp,
    pub mu: Vec<f64>,
    pub free_mu: Option<usize>,
    pub free_start: Vec<usize>,
}

impl<'a, M: PhaseMap> ShootingFamily<'a, M> {
    pub fn new(map: &'a M, bvp: SeparatedBvp, mu: Vec<f64>) -> Self {
        ShootingFamily {
            map,
            bvp,
            mu,
            free_mu: None,
            free_start: Vec::new(),
        }
    }

    pub fn with_free_mu(mut self, k: usize) -> Self {
        self.free_mu = Some(k);
        self
    }

    pub fn with_free_start(mut self, sections: Vec<usize>) -> Self {
        self.free_start = sections;
        self
    }

    /// `x₂` free, `q(0) = (0, x₂)`: the umbilic search of Hénon–Heiles type
    /// problems.
    pub fn henon_heiles(map: &'a M, tau: f64) -> Self {
        Self::new(map, SeparatedBvp::dirichlet(&[0.0, 0.0], &[0.0, 0.0], tau), Vec::new())
            .with_free_start(vec![1])
    }

    pub fn half_dim(&self) -> usize {
        self.bvp.half_dim()
    }

    pub fn n_params(&self) -> usize {
        self.free_mu.is_some() as usize + self.free_start.len()
    }

    pub fn dim(&self) -> usize {
        self.n_params() + self.half_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.half_dim();
        if n != self.map.half_dim() {
            return Err(Error::InvalidInput(format!(
                "boundary problem has {n} free variables, map has {}",
                self.map.half_dim()
            )));
        }
        if let Some(k) = self.free_mu {
            if k >= self.mu.len() {
                return Err(Error::InvalidInput(format!("no parameter with index {k}")));
            }
        }
        if let Some(&i) = self.free_start.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!("no start section with index {i}")));
        }
        Ok(())
    }

    fn split<'w>(&self, w: &'w [f64]) -> Result<(SeparatedBvp, Vec<f64>, &'w [f64])> {
        if w.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                w.len()
            )));
        }
        let mut mu = self.mu.clone();
        let mut at = 0;
        if let Some(k) = self.free_mu {
            mu[k] = w[0];
            at = 1;
        }
        let mut bvp = self.bvp.clone();
        for &i in &self.free_start {
            bvp.start[i] = bvp.start[i].with_value(w[at]);
            at += 1;
        }
        Ok((bvp, mu, &w[at..]))
    }

    /// Residual and `D_yφ^X` at `w`.
    pub fn jacobian(&self, w: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (bvp, mu, y) = self.split(w)?;
        residual_jacobian(self.map, &bvp, y, &mu)
    }

    pub fn residual(&self, w: &[f64]) -> Result<Vec<f64>> {
        let (bvp, mu, y) = self.split(w)?;
        residual(self.map, &bvp, y, &mu)
    }

    /// Parameter-space image: the free parameters followed by the end-section
    /// values reached.
    pub fn image(&self, w: &[f64], r: &[f64]) -> Vec<f64> {
        let mut out = w[..self.n_params()].to_vec();
        out.extend(r.iter().zip(&self.bvp.end).map(|(r, s)| r + s.value()));
        out
    }

    pub fn point(&self, w: &[f64]) -> Result<SingularPoint> {
        let (_, jac) = self.jacobian(w)?;
        let (_, mu, y) = self.split(w)?;
        let k = self.free_mu.is_some() as usize;
        let sv = singular_values_desc(&jac);
        let c = corank(&jac, CORANK_TOL);
        Ok(SingularPoint {
            mu,
            params: w[k..self.n_params()].to_vec(),
            y: y.to_vec(),
            jac,
            singular_values: sv,
            corank: c,
            class_hint: match c {
                0 => ClassHint::Unknown,
                1 => ClassHint::A2,
                _ => ClassHint::D4Candidate,
            },
        })
    }

    /// [`classify_a`] at `w`, varying `y` only.
    pub fn classify(&self, w: &[f64]) -> Result<AClass> {
        let (_, jac) = self.jacobian(w)?;
        let p = self.n_params();
        let g = |y: &[f64]| {
            let mut v = w[..p].to_vec();
            v.extend_from_slice(y);
            self.residual(&v)
        };
        classify_a(&jac, &w[p..], g)
    }
}

/// Determinacy test at a corank-1 point of a residual `g`.
///
/// With `v` spanning the kernel and `u` the left kernel of `jac`, the second
/// and third directional differences of `⟨u, g⟩` along `v` decide between a
/// fold, a cusp and anything more degenerate.
pub fn classify_a<F>(jac: &DMatrix<f64>, y: &[f64], g: F) -> Result<AClass>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let c = corank(jac, CORANK_TOL);
    if c != 1 {
        return Err(Error::InvalidInput(format!("classification needs corank 1, got {c}")));
    }
    let svd = jac.clone().svd(true, true);
    let i = svd.singular_values.imin();
    let v_t = svd.v_t.unwrap();
    let u = svd.u.unwrap();
    let v: Vec<f64> = v_t.row(i).iter().cloned().collect();
    let left: Vec<f64> = u.column(i).iter().cloned().collect();
    let h = CLASSIFY_STEP;
    let phi = |s: f64| -> Result<f64> {
        let ys: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        Ok(g(&ys)?.iter().zip(&left).map(|(a, b)| a * b).sum())
    };
    let scale = jac.norm().max(1.0);
    let (m2, m1, z, p1, p2) = (phi(-2.0 * h)?, phi(-h)?, phi(0.0)?, phi(h)?, phi(2.0 * h)?);
    let c2 = (p1 - 2.0 * z + m1) / (h * h);
    if c2.abs() > CLASSIFY_TOL * scale {
        return Ok(AClass::A2);
    }
    let c3 = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h);
    Ok(if c3.abs() > CLASSIFY_TOL * scale {
        AClass::A3
    } else {
        AClass::Higher
    })
}

/// Axis-aligned sampling box with `points[i]` nodes along axis `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != points.len() {
            return Err(Error::InvalidInput("grid box bounds and sizes disagree".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) || points.iter().any(|&p| p < 2) {
            return Err(Error::InvalidInput("grid box must be nondegenerate with at least 2 points per axis".into()));
        }
        Ok(GridBox { lo, hi, points })
    }

    /// Box of half-width `half` around `centre` with `n` points per axis.
    pub fn around(centre: &[f64], half: f64, n: usize) -> Result<Self> {
        Self::new(
            centre.iter().map(|c| c - half).collect(),
            centre.iter().map(|c| c + half).collect(),
            vec![n; centre.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (self.hi[i] - self.lo[i]) / (self.points[i] - 1) as f64)
            .collect()
    }

    pub fn cell_diameter(&self) -> f64 {
        norm2(&self.spacing())
    }

    /// Linear index of a multi-index, first axis fastest.
    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().zip(self.points.iter().rev()).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        self.points
            .iter()
            .map(|&n| {
                let i = k % n;
                k /= n;
                i
            })
            .collect()
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(k)
            .iter()
            .enumerate()
            .map(|(a, &i)| if i + 1 == self.points[a] { self.hi[a] } else { self.lo[a] + i as f64 * h[a] })
            .collect()
    }
}

/// Minimiser of `‖D_yφ^X‖_F` over a regular grid, used to seed
/// [`locate_umbilic`].
pub fn umbilic_seed<M: PhaseMap>(family: &ShootingFamily<M>, grid: &GridBox) -> Result<Vec<f64>> {
    family.validate()?;
    if grid.dim() != family.dim() {
        return Err(Error::InvalidInput(format!(
            "grid has dimension {}, family {}",
            grid.dim(),
            family.dim()
        )));
    }
    let best = (0..grid.len())
        .into_par_iter()
        .filter_map(|k| {
            let w = grid.node(k);
            let (_, j) = family.jacobian(&w).ok()?;
            let s = j.norm();
            s.is_finite().then_some((s, k))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .ok_or_else(|| Error::NoConvergence("no grid point could be evaluated".into()))?;
    Ok(grid.node(best.1))
}

/// Result of [`locate_umbilic`].
#[derive(Clone, Debug, PartialEq)]
pub struct UmbilicSearch {
    pub w: Vec<f64>,
    pub point: SingularPoint,
    /// Best Frobenius norm of `D_yφ^X` reached: the residual floor.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
}

fn jac_entries<M: PhaseMap>(family: &ShootingFamily<M>, w: &[f64]) -> Result<DVector<f64>> {
    let (_, j) = family.jacobian(w)?;
    Ok(DVector::from_column_slice(j.as_slice()))
}

/// Gauss–Newton on all entries of `D_yφ^X` over the family coordinates.
///
/// Iterates past the success threshold until the decrease stagnates, so the
/// reported residual is the floor reachable for this discretisation.
pub fn locate_umbilic<M: PhaseMap>(family: &ShootingFamily<M>, seed: &[f64]) -> Result<UmbilicSearch> {
    family.validate()?;
    if family.half_dim() != 2 {
        return Err(Error::InvalidInput(format!(
            "umbilic location needs two free variables, got {}",
            family.half_dim()
        )));
    }
    let dim = family.dim();
    let mut w = seed.to_vec();
    let mut r = jac_entries(family, &w)?;
    let mut history = vec![r.norm()];
    let mut iterations = 0;
    while iterations < UMBILIC_MAX_ITER && r.norm() > 0.0 {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), dim);
        for c in 0..dim {
            let e = UMBILIC_FD_STEP;
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[c] += e;
            wm[c] -= e;
            let col = (jac_entries(family, &wp)? - jac_entries(family, &wm)?) / (2.0 * e);
            jac.set_column(c, &col);
        }
        let step = jac
            .svd(true, true)
            .solve(&(-&r), 1e-14)
            .map_err(|e| Error::Singular(e.into()))?;
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..12 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Ok(rt) = jac_entries(family, &trial) {
                if rt.norm() < r.norm() {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((wt, rt)) = accepted else { break };
        w = wt;
        r = rt;
        history.push(r.norm());
        let k = history.len();
        if k > STAGNATION_WINDOW {
            let old = history[k - 1 - STAGNATION_WINDOW];
            if (old - r.norm()) < STAGNATION_DECREASE * old {
                break;
            }
        }
    }
    let residual = r.norm();
    let mut point = family.point(&w)?;
    if point.corank == 2 {
        point.class_hint = ClassHint::D4Candidate;
    }
    Ok(UmbilicSearch {
        point,
        w,
        residual,
        converged: residual < UMBILIC_TOL,
        iterations,
        history,
    })
}

/// One vertex of a level bifurcation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelVertex {
    /// Family coordinates.
    pub domain: Vec<f64>,
    /// Parameter-space image.
    pub image: Vec<f64>,
    pub det: f64,
    pub trace: f64,
    pub corank: usize,
    /// `σ_min / σ_max` of `D_yφ^X`.
    pub sigma_ratio: f64,
    pub sigma_max: f64,
    /// Unit kernel direction in `y` (sign arbitrary).
    pub kernel: Vec<f64>,
    /// `∇_y det D_yφ^X` by central differences.
    pub det_grad: Vec<f64>,
}

impl LevelVertex {
    /// `⟨k, ∇_y det⟩`: vanishes where the kernel is tangent to the fold
    /// surface, i.e. on cusp ridges.
    pub fn cusp_value(&self) -> f64 {
        self.kernel.iter().zip(&self.det_grad).map(|(a, b)| a * b).sum()
    }
}

/// Zero set of `det D_yφ^X` sampled on a grid and mapped to parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelBifurcationSet {
    pub grid: GridBox,
    pub vertices: Vec<LevelVertex>,
    /// Polyline pieces in 2-D boxes.
    pub segments: Vec<[usize; 2]>,
    /// Triangles in 3-D boxes.
    pub triangles: Vec<[usize; 3]>,
    /// Set when the sampled determinant has one sign on the whole grid.
    pub note: Option<String>,
}

impl LevelBifurcationSet {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

fn det_of(j: &DMatrix<f64>) -> f64 {
    j.clone().determinant()
}

fn level_vertex<M: PhaseMap>(family: &ShootingFamily<M>, w: Vec<f64>) -> Result<LevelVertex> {
    let (r, j) = family.jacobian(&w)?;
    let p = family.n_params();
    let n = family.half_dim();
    let svd = j.clone().svd(false, true);
    let i = svd.singular_values.imin();
    let smax = svd.singular_values.max();
    let kernel: Vec<f64> = svd.v_t.unwrap().row(i).iter().cloned().collect();
    let mut det_grad = Vec::with_capacity(n);
    for c in 0..n {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[p + c] += DET_GRAD_STEP;
        wm[p + c] -= DET_GRAD_STEP;
        let dp = det_of(&family.jacobian(&wp)?.1);
        let dm = det_of(&family.jacobian(&wm)?.1);
        det_grad.push((dp - dm) / (2.0 * DET_GRAD_STEP));
    }
    Ok(LevelVertex {
        image: family.image(&w, &r),
        domain: w,
        det: det_of(&j),
        trace: j.trace(),
        corank: corank(&j, CORANK_TOL),
        sigma_ratio: if smax > 0.0 { svd.singular_values.min() / smax } else { 0.0 },
        sigma_max: smax,
        kernel,
        det_grad,
    })
}

/// Vertex on grid edge `(a, b)` after one secant step from the linear
/// interpolant.
fn refine_on_edge<M: PhaseMap>(
    family: &ShootingFamily<M>,
    xa: &[f64],
    xb: &[f64],
    da: f64,
    db: f64,
) -> Result<LevelVertex> {
    let t0 = da / (da - db);
    let x0 = lerp(xa, xb, t0);
    let d0 = det_of(&family.jacobian(&x0)?.1);
    let t1 = if d0 == 0.0 {
        t0
    } else if (d0 < 0.0) == (da < 0.0) {
        t0 + (1.0 - t0) * d0 / (d0 - db)
    } else {
        t0 * da / (da - d0)
    };
    let v = level_vertex(family, lerp(xa, xb, t1))?;
    if v.det.abs() <= d0.abs() {
        Ok(v)
    } else {
        level_vertex(family, x0)
    }
}

/// Corners of the six tetrahedra sharing the main diagonal of a unit cube;
/// corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
const KUHN: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Sample `det D_yφ^X` on `grid`, extract its zero set (marching squares in
/// 2-D, marching tetrahedra in 3-D), refine every vertex by one secant step
/// along its grid edge and map it to parameter space.
pub fn level_bifurcation_set<M: PhaseMap>(family: &ShootingFamily<M>, grid: &GridBox) -> Result<LevelBifurcationSet> {
    family.validate()?;
    let dim = grid.dim();
    if dim != family.dim() {
        return Err(Error::InvalidInput(format!(
            "grid has dimension {dim}, family {}",
            family.dim()
        )));
    }
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidInput(format!("level sets need a 2-D or 3-D box, got {dim}")));
    }
    let dets: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| Ok(det_of(&family.jacobian(&grid.node(k))?.1)))
        .collect::<Result<_>>()?;
    let neg = |k: usize| dets[k] < 0.0;

    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut edge = |a: usize, b: usize| -> usize {
        let key = (a.min(b), a.max(b));
        *edge_ids.entry(key).or_insert_with(|| {
            edges.push(key);
            edges.len() - 1
        })
    };
    let mut segments = Vec::new();
    let mut triangles = Vec::new();
    let pts = &grid.points;
    if dim == 2 {
        for j in 0..pts[1] - 1 {
            for i in 0..pts[0] - 1 {
                let c = [
                    grid.index(&[i, j]),
                    grid.index(&[i + 1, j]),
                    grid.index(&[i + 1, j + 1]),
                    grid.index(&[i, j + 1]),
                ];
                let crossing: Vec<usize> = (0..4).filter(|&e| neg(c[e]) != neg(c[(e + 1) % 4])).collect();
                let id = |e: usize, edge: &mut dyn FnMut(usize, usize) -> usize| edge(c[e], c[(e + 1) % 4]);
                match crossing.len() {
                    2 => segments.push([id(crossing[0], &mut edge), id(crossing[1], &mut edge)]),
                    4 => {
                        let centre = c.iter().map(|&k| dets[k]).sum::<f64>() / 4.0;
                        let pairs = if (centre < 0.0) == neg(c[0]) { [(0, 1), (2, 3)] } else { [(3, 0), (1, 2)] };
                        for (a, b) in pairs {
                            segments.push([id(a, &mut edge), id(b, &mut edge)]);
                        }
                    }
                    _ => {}
                }
            }
        }
    } else {
        for k in 0..pts[2] - 1 {
            for j in 0..pts[1] - 1 {
                for i in 0..pts[0] - 1 {
                    let corner = |c: usize| grid.index(&[i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1)]);
                    for tet in KUHN {
                        let v = tet.map(corner);
                        let (inside, outside): (Vec<usize>, Vec<usize>) = v.iter().partition(|&&x| neg(x));
                        match (inside.len(), outside.len()) {
                            (1, 3) | (3, 1) => {
                                let (lone, rest) = if inside.len() == 1 { (inside[0], outside) } else { (outside[0], inside) };
                                triangles.push([edge(lone, rest[0]), edge(lone, rest[1]), edge(lone, rest[2])]);
                            }
                            (2, 2) => {
                                let (a, b, c, d) = (inside[0], inside[1], outside[0], outside[1]);
                                let q = [edge(a, c), edge(a, d), edge(b, d), edge(b, c)];
                                triangles.push([q[0], q[1], q[2]]);
                                triangles.push([q[0], q[2], q[3]]);
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }
    let vertices: Vec<LevelVertex> = edges
        .par_iter()
        .map(|&(a, b)| refine_on_edge(family, &grid.node(a), &grid.node(b), dets[a], dets[b]))
        .collect::<Result<_>>()?;
    let note = vertices
        .is_empty()
        .then(|| "determinant has one sign on the whole grid".to_string());
    Ok(LevelBifurcationSet {
        grid: grid.clone(),
        vertices,
        segments,
        triangles,
        note,
    })
}

/// Cusp ridges on a 3-D level set, split into the two nappes of the fold
/// surface by the sign of `tr D_yφ^X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuspRidges {
    pub segments: Vec<[[f64; 3]; 2]>,
    /// `+1` or `−1` per segment.
    pub nappe: Vec<i8>,
}

impl CuspRidges {
    pub fn on_nappe(&self, sign: i8) -> Vec<[[f64; 3]; 2]> {
        self.segments
            .iter()
            .zip(&self.nappe)
            .filter(|(_, &s)| s == sign)
            .map(|(s, _)| *s)
            .collect()
    }
}

/// Zero set of the cusp function on every triangle, with kernel directions
/// aligned to the triangle's first vertex.
pub fn cusp_ridges(set: &LevelBifurcationSet) -> Result<CuspRidges> {
    if set.grid.dim() != 3 {
        return Err(Error::InvalidInput("cusp ridges need a 3-D level set".into()));
    }
    let mut segments = Vec::new();
    let mut nappe = Vec::new();
    for tri in &set.triangles {
        let vs = tri.map(|i| &set.vertices[i]);
        let k0 = &vs[0].kernel;
        let c: Vec<f64> = vs
            .iter()
            .map(|v| {
                let s: f64 = v.kernel.iter().zip(k0).map(|(a, b)| a * b).sum();
                v.cusp_value() * s.signum()
            })
            .collect();
        let pos = |i: usize| -> [f64; 3] { [vs[i].domain[0], vs[i].domain[1], vs[i].domain[2]] };
        let mut pts = Vec::new();
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            if (c[a] < 0.0) != (c[b] < 0.0) {
                let t = c[a] / (c[a] - c[b]);
                let (pa, pb) = (pos(a), pos(b));
                pts.push([0, 1, 2].map(|i| pa[i] + t * (pb[i] - pa[i])));
            }
        }
        if pts.len() == 2 {
            let tr: f64 = vs.iter().map(|v| v.trace).sum();
            segments.push([pts[0], pts[1]]);
            nappe.push(if tr >= 0.0 { 1 } else { -1 });
        }
    }
    Ok(CuspRidges { segments, nappe })
}

/// Ridge degree of `centre` on each nappe, `[+, −]`.
pub fn ridge_degree(ridges: &CuspRidges, centre: [f64; 3], radius: f64, cell: f64) -> [usize; 2] {
    [1, -1].map(|s| hub_degree(&ridges.on_nappe(s), centre, radius, cell))
}

/// Evenly spaced grid values along one axis of a box.
pub fn axis_values(grid: &GridBox, axis: usize) -> Vec<f64> {
    linspace(grid.lo[axis], grid.hi[axis], grid.points[axis])
}

/// Zero-crossing segments of a bilinear cell with corners listed
/// counter-clockwise.  Saddle cells are resolved by the sign of the
/// bilinear centre value.
pub fn marching_square(pos: &[[f64; 2]], vals: &[f64]) -> Vec<[[f64; 2]; 2]> {
    let cross = |a: usize, b: usize| -> Option<[f64; 2]> {
        let (va, vb) = (vals[a], vals[b]);
        if (va < 0.0) == (vb < 0.0) {
            return None;
        }
        let t = va / (va - vb);
        Some([
            pos[a][0] + t * (pos[b][0] - pos[a][0]),
            pos[a][1] + t * (pos[b][1] - pos[a][1]),
        ])
    };
    let edges: Vec<(usize, [f64; 2])> = (0..4)
        .filter_map(|e| cross(e, (e + 1) % 4).map(|p| (e, p)))
        .collect();
    match edges.len() {
        2 => vec![[edges[0].1, edges[1].1]],
        4 => {
            let centre = vals.iter().sum::<f64>() / 4.0;
            // Connect around the corner whose sign differs from the centre.
            if (centre < 0.0) == (vals[0] < 0.0) {
                vec![[edges[0].1, edges[1].1], [edges[2].1, edges[3].1]]
            } else {
                vec![[edges[3].1, edges[0].1], [edges[1].1, edges[2].1]]
            }
        }
        _ => Vec::new(),
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of a segment soup, joining endpoints closer than
/// `eps`.  Returns the component label of every segment.
pub fn segment_components<const D: usize>(segments: &[[[f64; D]; 2]], eps: f64) -> Vec<usize> {
    let key = |p: &[f64; D]| -> Vec<i64> { p.iter().map(|x| (x / eps).round() as i64).collect() };
    let mut parent: Vec<usize> = (0..segments.len()).collect();
    let mut seen: std::collections::HashMap<Vec<i64>, usize> = std::collections::HashMap::new();
    for (i, s) in segments.iter().enumerate() {
        for p in s {
            match seen.get(&key(p)) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
                None => {
                    seen.insert(key(p), i);
                }
            }
        }
    }
    (0..segments.len()).map(|i| find(&mut parent, i)).collect()
}

/// Number of curve pieces that reach a disk around `centre` once the
/// segments inside the disk are removed: the degree of `centre` in the
/// ridge graph.
pub fn hub_degree<const D: usize>(segments: &[[[f64; D]; 2]], centre: [f64; D], radius: f64, cell: f64) -> usize {
    let dist = |p: &[f64; D]| p.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let outside: Vec<[[f64; D]; 2]> = segments
        .iter()
        .filter(|s| dist(&s[0]).min(dist(&s[1])) > radius)
        .cloned()
        .collect();
    let labels = segment_components(&outside, cell * 1e-6);
    let mut touching: Vec<usize> = outside
        .iter()
        .zip(&labels)
        .filter(|(s, _)| dist(&s[0]).min(dist(&s[1])) < radius + 1.5 * cell)
        .map(|(_, &l)| l)
        .collect();
    touching.sort_unstable();
    touching.dedup();
    touching.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{Discretized, FlowSpec, Method};
    use crate::systems::{ExplicitSymplecticMap, HamiltonianSystem, Model};
    use proptest::prelude::*;

    fn example5_family(map: &ExplicitSymplecticMap) -> ShootingFamily<'_, ExplicitSymplecticMap> {
        ShootingFamily::new(map, SeparatedBvp::example5(), vec![0.0]).with_free_mu(0)
    }

    fn hh_map() -> Discretized<HamiltonianSystem> {
        Discretized::new(
            HamiltonianSystem::new(Model::HenonHeiles, "henon_heiles", vec![]),
            FlowSpec::new(Method::Sv, 10, 1.0),
        )
    }

    #[test]
    fn corank_examples() {
        assert_eq!(corank(&DMatrix::zeros(2, 2), CORANK_TOL), 2);
        assert_eq!(corank(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), CORANK_TOL), 1);
        assert_eq!(corank(&DMatrix::identity(3, 3), CORANK_TOL), 0);
    }

    proptest! {
        #[test]
        fn corank_survives_conditioning(
            entries in proptest::collection::vec(-1.0f64..1.0, 9),
            rank in 0usize..=3,
            scales in proptest::collection::vec(1.0f64..31.6, 6),
            angles in proptest::collection::vec(0.0f64..6.3, 2),
        ) {
            let base = DMatrix::from_row_slice(3, 3, &entries) + DMatrix::identity(3, 3) * 2.5;
            let mut d = DMatrix::zeros(3, 3);
            for i in 0..rank {
                d[(i, i)] = 1.0 + i as f64;
            }
            let m = &base * d * base.transpose();
            let rot = |a: f64| {
                let (s, c) = a.sin_cos();
                DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
            };
            let left = rot(angles[0]) * DMatrix::from_diagonal(&DVector::from_column_slice(&scales[..3]));
            let right = DMatrix::from_diagonal(&DVector::from_column_slice(&scales[3..])) * rot(angles[1]);
            let c0 = corank(&m, CORANK_TOL);
            prop_assert_eq!(c0, 3 - rank);
            prop_assert_eq!(corank(&(left * m * right), CORANK_TOL), c0);
        }

        #[test]
        fn grid_index_roundtrip(a in 2usize..7, b in 2usize..7, c in 2usize..7, k in 0usize..1000) {
            let g = GridBox::new(vec![0.0; 3], vec![1.0; 3], vec![a, b, c]).unwrap();
            let k = k % g.len();
            prop_assert_eq!(g.index(&g.multi_index(k)), k);
        }
    }

    #[test]
    fn example5_level_set_is_the_diagonal() {
        let map = ExplicitSymplecticMap::example5_fold(0.0);
        let fam = example5_family(&map);
        let grid = GridBox::new(vec![-1.0, -0.5], vec![1.0, 0.5], vec![20, 20]).unwrap();
        let set = level_bifurcation_set(&fam, &grid).unwrap();
        assert_eq!(set.vertices.len(), 20);
        assert_eq!(set.segments.len(), 19);
        for v in &set.vertices {
            assert!(v.domain[1].abs() < 1e-12);
            assert!(v.det.abs() < 1e-12);
            assert!((v.image[0] - v.image[1]).abs() < 1e-12);
            assert_eq!(v.corank, 1);
        }
    }

    #[test]
    fn one_signed_grid_is_empty() {
        let map = ExplicitSymplecticMap::example5_fold(0.0);
        let fam = example5_family(&map);
        let grid = GridBox::new(vec![-1.0, 0.1], vec![1.0, 0.5], vec![9, 9]).unwrap();
        let set = level_bifurcation_set(&fam, &grid).unwrap();
        assert!(set.is_empty());
        assert!(set.note.is_some());
    }

    #[test]
    fn umbilic_needs_two_free_variables() {
        let map = ExplicitSymplecticMap::example5_fold(0.0);
        let fam = example5_family(&map);
        assert!(matches!(locate_umbilic(&fam, &[0.0, 0.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn example5_fold_is_a2() {
        let map = ExplicitSymplecticMap::example5_fold(0.0);
        let fam = example5_family(&map);
        assert_eq!(fam.classify(&[0.0, 0.0]).unwrap(), AClass::A2);
        let p = fam.point(&[0.0, 0.0]).unwrap();
        assert_eq!(p.corank, 1);
        assert_eq!(p.class_hint, ClassHint::A2);
    }

    #[test]
    fn germs_of_higher_order() {
        // x⁴ + μ₂x² + μ₁x at μ = 0: gradient 4x³.
        let jac = DMatrix::zeros(1, 1);
        assert_eq!(classify_a(&jac, &[0.0], |x| Ok(vec![4.0 * x[0].powi(3)])).unwrap(), AClass::A3);
        assert_eq!(classify_a(&jac, &[0.0], |x| Ok(vec![5.0 * x[0].powi(4)])).unwrap(), AClass::Higher);
        assert!(classify_a(&DMatrix::identity(1, 1), &[0.0], |x| Ok(x.to_vec())).is_err());
    }

    #[test]
    fn henon_heiles_umbilic() {
        let map = hh_map();
        let fam = ShootingFamily::henon_heiles(&map, 1.0);
        let u = locate_umbilic(&fam, &[1.3, 0.0, 1.9]).unwrap();
        assert!(u.converged, "residual {}", u.residual);
        assert_eq!(u.point.corank, 2);
        assert_eq!(u.point.class_hint, ClassHint::D4Candidate);
        assert!(u.point.params[0] > 1.0 && u.point.params[0] < 2.0);
    }

    #[test]
    fn level_mesh_is_a_surface_and_converges() {
        let map = hh_map();
        let fam = ShootingFamily::henon_heiles(&map, 1.0);
        let centre = [1.2, 0.2, 1.7];
        let coarse = level_bifurcation_set(&fam, &GridBox::around(&centre, 0.2, 9).unwrap()).unwrap();
        let fine = level_bifurcation_set(&fam, &GridBox::around(&centre, 0.2, 17).unwrap()).unwrap();
        assert!(!coarse.triangles.is_empty());
        let mut uses: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &coarse.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        assert!(uses.values().all(|&u| u == 1 || u == 2));
        let cell = coarse.grid.cell_diameter();
        for v in &coarse.vertices {
            let d = fine
                .vertices
                .iter()
                .map(|f| norm2(&f.domain.iter().zip(&v.domain).map(|(a, b)| a - b).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min);
            assert!(d < cell, "vertex moved by {d}");
        }
    }
}
