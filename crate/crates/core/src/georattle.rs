//! RATTLE and jet-RATTLE for geodesics on hypersurfaces `f(q) = 0`, and
//! conjugate loci built on top of them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::Scalar;
use crate::linalg::{dot, norm2};
use crate::singular::{corank, singular_values_desc, CORANK_TOL};
use crate::systems::Hypersurface;

pub const LAMBDA_TOL: f64 = 1e-13;
pub const LAMBDA_MAX_ITER: usize = 30;
/// Bisection fallback gives up once the bracket half-width exceeds this.
pub const LAMBDA_MAX: f64 = 1024.0;
/// Target for the secant refinement of a conjugate point.
pub const DET_TOL: f64 = 1e-9;
pub const DEFAULT_H: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstrainedState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl ConstrainedState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        ConstrainedState { q, p }
    }

    /// `|f(q)|` and the normal component of `p`.
    pub fn residuals(&self, surface: &Hypersurface) -> (f64, f64) {
        let g = surface.grad_real(&self.q);
        let ng = norm2(&g);
        (surface.f_real(&self.q).abs(), (dot(&g, &self.p) / ng).abs())
    }
}

/// State plus the derivative of the accumulated step map.
///
/// `v` has 2n rows; its columns are propagated tangent vectors, so the
/// identity gives the full Jacobian and a 2n×k seed gives k directional
/// derivatives.
#[derive(Clone, Debug)]
pub struct JetRattleState {
    pub state: ConstrainedState,
    pub v: DMatrix<f64>,
    /// Multiplier of the last step, used to warm-start the next solve.
    pub lambda: f64,
}

impl JetRattleState {
    pub fn new(state: ConstrainedState) -> Self {
        let m = 2 * state.q.len();
        JetRattleState {
            state,
            v: DMatrix::identity(m, m),
            lambda: 0.0,
        }
    }

    pub fn with_seed(state: ConstrainedState, v: DMatrix<f64>) -> Self {
        JetRattleState { state, v, lambda: 0.0 }
    }
}

/// Drift position `q + h(p − (h/2) g λ)`.
fn drift<S: Scalar>(q: &[S], p: &[S], g: &[S], h: f64, l: &S) -> Vec<S> {
    q.iter()
        .zip(p)
        .zip(g)
        .map(|((qi, pi), gi)| qi.clone() + (pi.clone() - gi.clone() * l.clone() * (0.5 * h)) * h)
        .collect()
}

fn newton_lambda<S: Scalar>(
    surface: &Hypersurface,
    q: &[S],
    p: &[S],
    g: &[S],
    h: f64,
    mut l: S,
    iters: usize,
) -> (S, bool) {
    let g_real: Vec<f64> = g.iter().map(|x| x.real()).collect();
    for _ in 0..iters {
        let q1 = drift(q, p, g, h, &l);
        let phi = surface.f(&q1);
        let q1r: Vec<f64> = q1.iter().map(|x| x.real()).collect();
        let d = -0.5 * h * h * dot(&surface.grad_real(&q1r), &g_real);
        if d == 0.0 || !d.is_finite() {
            return (l, false);
        }
        let done = phi.real().abs() < LAMBDA_TOL;
        l = l - phi / d;
        if done {
            return (l, true);
        }
        if !l.real().is_finite() {
            return (l, false);
        }
    }
    (l, false)
}

/// Solve `f(q + h(p − (h/2)∇f(q)λ)) = 0` for λ.
///
/// Newton from `lambda0`; on failure a bisection over a doubling bracket
/// followed by two Newton sweeps so that jet partials are carried through.
pub fn solve_lambda<S: Scalar>(surface: &Hypersurface, q: &[S], p: &[S], h: f64, lambda0: f64) -> Result<S> {
    let g = surface.grad(q);
    let gr: Vec<f64> = g.iter().map(|x| x.real()).collect();
    if norm2(&gr) == 0.0 {
        return Err(Error::Domain("zero constraint gradient".into()));
    }
    let (l, ok) = newton_lambda(surface, q, p, &g, h, q[0].cst(lambda0), LAMBDA_MAX_ITER);
    if ok {
        return Ok(l);
    }
    let qr: Vec<f64> = q.iter().map(|x| x.real()).collect();
    let pr: Vec<f64> = p.iter().map(|x| x.real()).collect();
    let phi = |l: f64| surface.f_real(&drift(&qr, &pr, &gr, h, &l));
    let mut half = 1.0;
    while half <= LAMBDA_MAX {
        let (mut a, mut b) = (-half, half);
        let (mut fa, fb) = (phi(a), phi(b));
        if fa * fb <= 0.0 {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = phi(m);
                if fm == 0.0 || (b - a) < 1e-15 * (1.0 + m.abs()) {
                    a = m;
                    b = m;
                    break;
                }
                if fa * fm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            let (l, _) = newton_lambda(surface, q, p, &g, h, q[0].cst(0.5 * (a + b)), 2);
            return Ok(l);
        }
        half *= 2.0;
    }
    Err(Error::StepFailure {
        step: 0,
        reason: format!("no multiplier found for q={qr:?}, p={pr:?}, h={h}"),
    })
}

/// One RATTLE step on generic scalars.  Returns `(q', p', λ)`.
///
/// With `project = false` the final tangent projection is skipped and
/// `p' = p_{n+1/2}`.
pub fn rattle_step_generic<S: Scalar>(
    surface: &Hypersurface,
    q: &[S],
    p: &[S],
    h: f64,
    lambda0: f64,
    project: bool,
) -> Result<(Vec<S>, Vec<S>, f64)> {
    let l = solve_lambda(surface, q, p, h, lambda0)?;
    let g = surface.grad(q);
    let ph: Vec<S> = p
        .iter()
        .zip(&g)
        .map(|(pi, gi)| pi.clone() - gi.clone() * l.clone() * (0.5 * h))
        .collect();
    let q1: Vec<S> = q.iter().zip(&ph).map(|(qi, pi)| qi.clone() + pi.clone() * h).collect();
    if !project {
        return Ok((q1, ph, l.real()));
    }
    let g1 = surface.grad(&q1);
    let norm = g1.iter().fold(q[0].cst(0.0), |acc, x| acc + x.sq()).sqrt();
    let nv: Vec<S> = g1.into_iter().map(|x| x / norm.clone()).collect();
    let c = dot(&nv, &ph);
    let p1 = ph
        .iter()
        .zip(&nv)
        .map(|(pi, ni)| pi.clone() - ni.clone() * c.clone())
        .collect();
    Ok((q1, p1, l.real()))
}

/// One RATTLE step.
pub fn rattle_step(surface: &Hypersurface, s: &ConstrainedState, h: f64, lambda0: f64) -> Result<(ConstrainedState, f64)> {
    let (q, p, l) = rattle_step_generic(surface, &s.q, &s.p, h, lambda0, true)?;
    Ok((ConstrainedState { q, p }, l))
}

/// `steps` RATTLE steps of size `h`.
pub fn rattle_flow(surface: &Hypersurface, s: &ConstrainedState, h: f64, steps: usize) -> Result<ConstrainedState> {
    let mut cur = s.clone();
    let mut l = 0.0;
    for k in 0..steps {
        let (next, ln) = rattle_step(surface, &cur, h, l).map_err(|e| at_step(e, k))?;
        cur = next;
        l = ln;
    }
    Ok(cur)
}

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::StepFailure { reason, .. } => Error::StepFailure { step: k, reason },
        other => other,
    }
}

fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// Derivative of the RATTLE step map at `(q, p)` with the multiplier `lambda`
/// already solved.  Block layout `[[D_q q', D_p q'], [D_q p', D_p p']]`.
pub fn d_psi(surface: &Hypersurface, q: &[f64], p: &[f64], h: f64, lambda: f64) -> DMatrix<f64> {
    let n = q.len();
    let id = DMatrix::<f64>::identity(n, n);
    let g0 = DVector::from_vec(surface.grad_real(q));
    let h0 = surface.hess(q);
    let ph = DVector::from_vec(p.to_vec()) - &g0 * (0.5 * h * lambda);
    let q1 = DVector::from_vec(q.to_vec()) + &ph * h;
    let q1v: Vec<f64> = q1.iter().cloned().collect();
    let g1 = DVector::from_vec(surface.grad_real(&q1v));
    let g1n = g1.norm();
    let nv = &g1 / g1n;
    let h1 = surface.hess(&q1v);

    let denom = nv.dot(&g0);
    let grad_q_l = (&nv * (2.0 / (h * h)) - &h0 * &nv * lambda) / denom;
    let grad_p_l = &nv * (2.0 / (h * denom));
    let dq_ph = (&h0 * lambda + outer(&g0, &grad_q_l)) * (-0.5 * h);
    let dp_ph = &id - outer(&g0, &grad_p_l) * (0.5 * h);
    let dq_q1 = &id + &dq_ph * h;
    let dp_q1 = &dp_ph * h;
    let nnt = outer(&nv, &nv);
    let dq_n = (&h1 * &dq_q1 - &nnt * &h1 * &dq_q1) / g1n;
    let dp_n = (&h1 * &dp_q1 - &nnt * &h1 * &dp_q1) / g1n;
    let c = nv.dot(&ph);
    let dq_p1 = &dq_ph - &dq_n * c - &nv * (ph.transpose() * &dq_n) - &nnt * &dq_ph;
    let dp_p1 = &dp_ph - &dp_n * c - &nv * (ph.transpose() * &dp_n) - &nnt * &dp_ph;

    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&dq_q1);
    m.view_mut((0, n), (n, n)).copy_from(&dp_q1);
    m.view_mut((n, 0), (n, n)).copy_from(&dq_p1);
    m.view_mut((n, n), (n, n)).copy_from(&dp_p1);
    m
}

/// One jet-RATTLE step: RATTLE on the state and `V' = DΨ_h V`.
pub fn jet_rattle_step(surface: &Hypersurface, js: &JetRattleState, h: f64) -> Result<JetRattleState> {
    let (next, l) = rattle_step(surface, &js.state, h, js.lambda)?;
    let dpsi = d_psi(surface, &js.state.q, &js.state.p, h, l);
    Ok(JetRattleState {
        state: next,
        v: dpsi * &js.v,
        lambda: l,
    })
}

pub fn jet_rattle_flow(surface: &Hypersurface, js: &JetRattleState, h: f64, steps: usize) -> Result<JetRattleState> {
    let mut cur = js.clone();
    for k in 0..steps {
        cur = jet_rattle_step(surface, &cur, h).map_err(|e| at_step(e, k))?;
    }
    Ok(cur)
}

/// Move `q` onto the surface by Newton steps along the gradient.
pub fn project_to_surface(surface: &Hypersurface, q: &[f64]) -> Result<Vec<f64>> {
    let mut x = q.to_vec();
    for _ in 0..50 {
        let f = surface.f_real(&x);
        if f.abs() < 1e-15 {
            return Ok(x);
        }
        let g = surface.grad_real(&x);
        let gg = dot(&g, &g);
        if gg == 0.0 {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= f * gi / gg;
        }
    }
    if surface.f_real(&x).abs() < 1e-13 {
        Ok(x)
    } else {
        Err(Error::NoConvergence("projection onto surface".into()))
    }
}

/// Tangential part of `p` at `q`, scaled to unit length.
pub fn unit_tangent(surface: &Hypersurface, q: &[f64], p: &[f64]) -> Vec<f64> {
    let g = surface.grad_real(q);
    let c = dot(&g, p) / dot(&g, &g);
    let v: Vec<f64> = p.iter().zip(&g).map(|(pi, gi)| pi - c * gi).collect();
    let n = norm2(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Index of the largest gradient component; dropped when charting the
/// surface by the remaining ambient coordinates.
pub fn chart_drop_index(grad: &[f64]) -> usize {
    (0..grad.len())
        .max_by(|&i, &j| grad[i].abs().total_cmp(&grad[j].abs()))
        .unwrap_or(0)
}

/// Basis of the tangent space at `q_star`, one column per direction.
///
/// Graphs `q₃ = h(q₁, q₂)` use the columns `(e_i, ∂f/∂q_i)`.  Otherwise the
/// coordinate directions other than the chart index are projected onto the
/// tangent space and orthonormalised in order.
pub fn tangent_basis(surface: &Hypersurface, q_star: &[f64]) -> Result<DMatrix<f64>> {
    let g = surface.grad_real(q_star);
    let n = g.len();
    let gn = norm2(&g);
    if gn == 0.0 {
        return Err(Error::Domain("zero gradient at base point".into()));
    }
    if surface.is_graph() {
        let mut a = DMatrix::zeros(n, n - 1);
        for i in 0..n - 1 {
            a[(i, i)] = 1.0;
            a[(n - 1, i)] = g[i];
        }
        return Ok(a);
    }
    let gv = DVector::from_vec(g.clone()) / gn;
    let drop = chart_drop_index(&g);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for j in (0..n).filter(|&j| j != drop) {
        let mut v = DVector::zeros(n);
        v[j] = 1.0;
        v -= &gv * gv[j];
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let nv = v.norm();
        if nv < 1e-12 {
            return Err(Error::Singular("degenerate tangent basis".into()));
        }
        cols.push(v / nv);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Principal curvatures at `q` (eigenvalues of the shape operator), using
/// an orthonormal tangent basis.
pub fn principal_curvatures(surface: &Hypersurface, q: &[f64]) -> Result<Vec<f64>> {
    let g = surface.grad_real(q);
    let gn = norm2(&g);
    let a = if surface.is_graph() {
        orthonormal_columns(&tangent_basis(surface, q)?)
    } else {
        tangent_basis(surface, q)?
    };
    let s = a.transpose() * surface.hess(q) * &a / gn;
    let sym = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        let nv = v.norm();
        cols.push(v / nv);
    }
    DMatrix::from_columns(&cols)
}

/// Arc cap for conjugate-point searches: 1.2·π/√k with k the smallest
/// absolute principal curvature at the base point (floored at 1e-2).
pub fn default_max_arc(surface: &Hypersurface, q_star: &[f64]) -> Result<f64> {
    let k = principal_curvatures(surface, q_star)?
        .iter()
        .map(|x| x.abs())
        .fold(f64::INFINITY, f64::min)
        .max(1e-2);
    Ok(1.2 * PI / k.sqrt())
}

/// Directions in the tangent space, in the coordinates of the basis `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RayGrid {
    /// `ρ = (cos θ, sin θ)` for `θ = 2πk/count` (2-dimensional surfaces).
    Circle { count: usize },
    /// `ρ = (sin θ cos φ, sin θ sin φ, cos θ)` on an `n_theta × n_phi` grid
    /// with `θ` at cell centres of `(0, π)` (3-dimensional surfaces).
    Sphere { n_theta: usize, n_phi: usize },
    /// Explicit list of angle tuples.
    List { params: Vec<Vec<f64>> },
}

impl RayGrid {
    pub fn params(&self) -> Vec<Vec<f64>> {
        match self {
            RayGrid::Circle { count } => (0..*count)
                .map(|k| vec![2.0 * PI * k as f64 / *count as f64])
                .collect(),
            RayGrid::Sphere { n_theta, n_phi } => {
                let mut out = Vec::with_capacity(n_theta * n_phi);
                for i in 0..*n_theta {
                    let th = PI * (i as f64 + 0.5) / *n_theta as f64;
                    for j in 0..*n_phi {
                        out.push(vec![th, 2.0 * PI * j as f64 / *n_phi as f64]);
                    }
                }
                out
            }
            RayGrid::List { params } => params.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RayGrid::Circle { count } => *count,
            RayGrid::Sphere { n_theta, n_phi } => n_theta * n_phi,
            RayGrid::List { params } => params.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unit vector in ρ-coordinates for the given angles.
pub fn rho_of(params: &[f64]) -> Vec<f64> {
    match params.len() {
        1 => vec![params[0].cos(), params[0].sin()],
        2 => {
            let (t, f) = (params[0], params[1]);
            vec![t.sin() * f.cos(), t.sin() * f.sin(), t.cos()]
        }
        _ => params.to_vec(),
    }
}

/// Geodesic problem from a fixed base point.
#[derive(Clone, Debug)]
pub struct GeodesicFan {
    pub surface: Hypersurface,
    pub q_star: Vec<f64>,
    pub basis: DMatrix<f64>,
    pub h: f64,
    pub max_arc: f64,
}

/// Degeneracy record for one ray.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RayRecord {
    pub params: Vec<f64>,
    /// Arc of the first conjugate point; `None` if none before the cap.
    pub arc: Option<f64>,
    pub endpoint: Option<Vec<f64>>,
    pub corank: usize,
    /// `|det|` of the reduced Jacobian at the recorded point.
    pub det: f64,
    /// Second-smallest over largest singular value of the reduced Jacobian.
    pub sigma_ratio: f64,
}

/// Conjugate point of corank two with the residual of the solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorankTwoPoint {
    pub params: Vec<f64>,
    pub arc: f64,
    pub endpoint: Vec<f64>,
    pub residual: f64,
    pub corank: usize,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CuspPoint {
    pub params: Vec<f64>,
    pub arc: f64,
    pub endpoint: Vec<f64>,
    pub corank: usize,
    /// Derivative of the conjugate arc along the kernel direction.
    pub kernel_slope: f64,
}

/// Cusp-function sign changes on one circle around a corank-two point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RingScan {
    pub radius: f64,
    /// Chart angles of the sign changes.
    pub angles: Vec<f64>,
}

/// Lines of cusps near a corank-two point, on a chart of directions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CuspRidges {
    /// Chart half-width in direction space.
    pub radius: f64,
    pub grid: usize,
    /// Segments of the zero set of the cusp function, in chart coordinates.
    pub segments: Vec<[[f64; 2]; 2]>,
    pub rings: Vec<RingScan>,
    /// Degree of the corank-two point in the ridge graph: the most frequent
    /// crossing count over the rings.
    pub degree: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugateLocus {
    pub surface: String,
    pub q_star: Vec<f64>,
    pub h: f64,
    pub max_arc: f64,
    pub rays: Vec<RayRecord>,
    pub cusp_points: Vec<CuspPoint>,
    /// Distinct corank-two points found from the best grid seeds, with the
    /// ridge degree measured on small rings.
    pub corank_two: Vec<(CorankTwoPoint, usize)>,
    /// The corank-two point where three cusp ridges meet, if any.
    pub umbilic: Option<CorankTwoPoint>,
    pub ridges: Option<CuspRidges>,
}

impl GeodesicFan {
    pub fn new(surface: &Hypersurface, q_star: &[f64], h: f64, max_arc: Option<f64>) -> Result<Self> {
        if h <= 0.0 {
            return Err(Error::InvalidInput("step size must be positive".into()));
        }
        if surface.f_real(q_star).abs() > 1e-4 {
            return Err(Error::InvalidInput("base point is not on the surface".into()));
        }
        let basis = tangent_basis(surface, q_star)?;
        let max_arc = match max_arc {
            Some(a) => a,
            None => default_max_arc(surface, q_star)?,
        };
        Ok(GeodesicFan {
            surface: surface.clone(),
            q_star: q_star.to_vec(),
            basis,
            h,
            max_arc,
        })
    }

    pub fn dim(&self) -> usize {
        self.q_star.len()
    }

    /// Unit initial momentum `Aρ/‖Aρ‖` and its seed matrix `[0; A/‖Aρ‖]`.
    pub fn initial(&self, rho: &[f64]) -> JetRattleState {
        let n = self.dim();
        let ap = &self.basis * DVector::from_column_slice(rho);
        let norm = ap.norm();
        let p: Vec<f64> = (ap / norm).iter().cloned().collect();
        let mut seed = DMatrix::zeros(2 * n, n - 1);
        seed.view_mut((n, 0), (n, n - 1)).copy_from(&(&self.basis / norm));
        JetRattleState::with_seed(ConstrainedState::new(self.q_star.clone(), p), seed)
    }

    /// Reduced square matrix `P · D_pΦ^Q · A`, with `P` dropping the
    /// coordinate of the largest gradient component at the endpoint.
    pub fn reduced(&self, js: &JetRattleState) -> DMatrix<f64> {
        self.reduced_with_drop(js).0
    }

    fn reduced_with_drop(&self, js: &JetRattleState) -> (DMatrix<f64>, usize) {
        let n = self.dim();
        let drop = chart_drop_index(&self.surface.grad_real(&js.state.q));
        let rows: Vec<usize> = (0..n).filter(|&i| i != drop).collect();
        (DMatrix::from_fn(n - 1, n - 1, |i, j| js.v[(rows[i], j)]), drop)
    }

    /// Reduced determinant rescaled by `(−1)^drop / n_drop` (unit normal).
    /// This equals `det[n, D_pΦ^Q · A]` for tangent columns, so its sign does
    /// not jump when the chart index changes along the geodesic.
    pub fn monitor(&self, js: &JetRattleState) -> (f64, f64) {
        let (m, drop) = self.reduced_with_drop(js);
        let g = self.surface.grad_real(&js.state.q);
        let nd = g[drop] / norm2(&g);
        let d = m.determinant();
        let sign = if drop % 2 == 0 { 1.0 } else { -1.0 };
        (sign * d / nd, d)
    }

    /// Geodesic of arc `t` for direction `rho`: whole steps of size `h`
    /// followed by one partial step.
    pub fn shoot(&self, rho: &[f64], t: f64) -> Result<JetRattleState> {
        let k = (t / self.h).floor() as usize;
        let mut js = jet_rattle_flow(&self.surface, &self.initial(rho), self.h, k)?;
        let s = t - k as f64 * self.h;
        if s > 1e-14 {
            js = jet_rattle_step(&self.surface, &js, s)?;
        }
        Ok(js)
    }

    /// First sign change of the reduced determinant along the ray,
    /// refined by the Illinois secant rule in the final partial step.
    pub fn first_conjugate(&self, params: &[f64]) -> Result<RayRecord> {
        let rho = rho_of(params);
        let mut prev: Option<(JetRattleState, f64)> = None;
        let mut js = jet_rattle_step(&self.surface, &self.initial(&rho), self.h)?;
        let mut d_cur = self.monitor(&js).0;
        let steps = (self.max_arc / self.h).ceil() as usize;
        for k in 1..steps {
            let next = jet_rattle_step(&self.surface, &js, self.h)?;
            let d = self.monitor(&next).0;
            let mut hit = None;
            if d == 0.0 || d.signum() != d_cur.signum() {
                hit = Some((k, self.refine_in_step(&js, self.h, d_cur, d)?));
            } else if let Some((pj, pd)) = &prev {
                // Two roots inside one step leave no sign change; look for
                // them where |det| has a local minimum.
                if d_cur.abs() < pd.abs() && d_cur.abs() < d.abs() {
                    if let Some(r) = self.dip_root(pj, *pd)? {
                        hit = Some((k - 1, r));
                    } else if let Some(r) = self.dip_root(&js, d_cur)? {
                        hit = Some((k, r));
                    }
                }
            }
            if let Some((base, (s, jr))) = hit {
                let m = self.reduced(&jr);
                let sv = singular_values_desc(&m);
                return Ok(RayRecord {
                    params: params.to_vec(),
                    arc: Some(base as f64 * self.h + s),
                    endpoint: Some(jr.state.q.clone()),
                    corank: corank(&m, CORANK_TOL),
                    det: m.determinant().abs(),
                    sigma_ratio: sigma_ratio(&sv),
                });
            }
            prev = Some((js, d_cur));
            js = next;
            d_cur = d;
        }
        Ok(RayRecord {
            params: params.to_vec(),
            arc: None,
            endpoint: None,
            corank: 0,
            det: d_cur.abs(),
            sigma_ratio: f64::NAN,
        })
    }

    /// Golden-section search for a sign reversal of the monitor inside one
    /// step starting at `js`; refines the first root when one is found.
    fn dip_root(&self, js: &JetRattleState, d0: f64) -> Result<Option<(f64, JetRattleState)>> {
        let sgn = d0.signum();
        let f = |s: f64| -> Result<f64> { Ok(sgn * self.monitor(&jet_rattle_step(&self.surface, js, s)?).0) };
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0, self.h);
        let mut x1 = b - r * (b - a);
        let mut x2 = a + r * (b - a);
        let (mut f1, mut f2) = (f(x1)?, f(x2)?);
        for _ in 0..40 {
            if f1 < 0.0 {
                return Ok(Some(self.refine_in_step(js, x1, d0, sgn * f1)?));
            }
            if f2 < 0.0 {
                return Ok(Some(self.refine_in_step(js, x2, d0, sgn * f2)?));
            }
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = f(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = f(x2)?;
            }
        }
        Ok(None)
    }

    fn refine_in_step(&self, js: &JetRattleState, end: f64, d0: f64, d1: f64) -> Result<(f64, JetRattleState)> {
        let eval = |s: f64| -> Result<(f64, f64, JetRattleState)> {
            let j = jet_rattle_step(&self.surface, js, s)?;
            let (g, d) = self.monitor(&j);
            Ok((g, d, j))
        };
        let (mut a, mut fa) = (0.0, d0);
        let (mut b, mut fb) = (end, d1);
        let mut best = eval(b)?;
        let mut side = 0i32;
        for _ in 0..100 {
            let s = (a * fb - b * fa) / (fb - fa);
            let (fs, det, j) = eval(s)?;
            best = (fs, det, j);
            if det.abs() < DET_TOL || (b - a).abs() < 1e-15 {
                return Ok((s, best.2));
            }
            if fs.signum() == fb.signum() {
                b = s;
                fb = fs;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            } else {
                a = s;
                fa = fs;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            }
        }
        Err(Error::NoConvergence(format!(
            "conjugate point refinement stalled at |det|={:e}",
            best.1.abs()
        )))
    }
}

fn sigma_ratio(sv: &[f64]) -> f64 {
    if sv.len() < 2 || sv[0] == 0.0 {
        return f64::NAN;
    }
    sv[sv.len() - 2] / sv[0]
}

/// Conjugate locus of `q_star` over a ray grid.
///
/// On 2-dimensional surfaces cusps are extracted from the extrema of the
/// conjugate arc along the ray circle.  On 3-dimensional surfaces the
/// corank-two point is located from the best seed on the grid and the cusp
/// ridges around it are traced on a local chart.
pub fn conjugate_locus(
    surface: &Hypersurface,
    q_star: &[f64],
    ray_grid: &RayGrid,
    h: f64,
    max_arc: Option<f64>,
) -> Result<ConjugateLocus> {
    let fan = GeodesicFan::new(surface, q_star, h, max_arc)?;
    let params = ray_grid.params();
    if let Some(bad) = params.iter().find(|p| p.len() + 2 != fan.dim()) {
        return Err(Error::InvalidInput(format!(
            "ray grid gives {} angle(s) per ray, a surface in R^{} needs {}",
            bad.len(),
            fan.dim(),
            fan.dim() - 2
        )));
    }
    let rays = params
        .par_iter()
        .map(|p| fan.first_conjugate(p))
        .collect::<Result<Vec<_>>>()?;
    let mut locus = ConjugateLocus {
        surface: surface.label.clone(),
        q_star: q_star.to_vec(),
        h,
        max_arc: fan.max_arc,
        rays,
        cusp_points: Vec::new(),
        corank_two: Vec::new(),
        umbilic: None,
        ridges: None,
    };
    match (fan.dim(), ray_grid) {
        (3, RayGrid::Circle { .. }) => locus.cusp_points = circle_cusps(&fan, &locus.rays)?,
        (4, _) => {
            for seed in corank_two_seeds(&locus.rays, UMBILIC_SEEDS) {
                let Ok(pt) = locate_corank_two(&fan, &seed.0, seed.1) else {
                    continue;
                };
                if pt.corank < 2
                    || locus
                        .corank_two
                        .iter()
                        .any(|(o, _)| norm2(&sub(&o.endpoint, &pt.endpoint)) < 1e-6)
                {
                    continue;
                }
                let degree = ring_degree(&fan, &pt, &UMBILIC_RINGS, RING_SAMPLES)?.0;
                locus.corank_two.push((pt, degree));
            }
            if let Some((pt, _)) = locus.corank_two.iter().find(|(_, d)| *d == 3) {
                locus.ridges = Some(cusp_ridges(&fan, pt, RIDGE_CHART, RIDGE_GRID)?);
                locus.umbilic = Some(pt.clone());
            }
        }
        _ => {}
    }
    Ok(locus)
}

/// Grid seeds tried for corank-two points.
pub const UMBILIC_SEEDS: usize = 12;
/// Chart radii of the rings used to count cusp ridges.
pub const UMBILIC_RINGS: [f64; 3] = [0.01, 0.03, 0.06];
pub const RING_SAMPLES: usize = 360;
pub const RIDGE_CHART: f64 = 0.1;
pub const RIDGE_GRID: usize = 41;

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Relative spread below which the conjugate arc counts as constant over
/// the ray circle (as on a sphere), so that no extremum is a cusp.
pub const CONSTANT_ARC_TOL: f64 = 1e-9;

/// Cusps on a circular ray grid: local extrema of the conjugate arc,
/// refined by a parabola through the three neighbouring samples.
pub fn circle_cusps(fan: &GeodesicFan, rays: &[RayRecord]) -> Result<Vec<CuspPoint>> {
    let m = rays.len();
    if m < 3 {
        return Ok(Vec::new());
    }
    let arcs: Vec<f64> = rays.iter().map(|r| r.arc.unwrap_or(f64::NAN)).collect();
    let dth = 2.0 * PI / m as f64;
    let mut out = Vec::new();
    let finite = arcs.iter().copied().filter(|a| a.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), a| (l.min(a), h.max(a)));
    if hi - lo <= CONSTANT_ARC_TOL * hi.abs() {
        return Ok(out);
    }
    for i in 0..m {
        let (a, b, c) = (arcs[(i + m - 1) % m], arcs[i], arcs[(i + 1) % m]);
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            continue;
        }
        let is_max = b > a && b >= c;
        let is_min = b < a && b <= c;
        if !(is_max || is_min) {
            continue;
        }
        let curv = a - 2.0 * b + c;
        let off = if curv != 0.0 { 0.5 * (a - c) / curv } else { 0.0 };
        let th = rays[i].params[0] + off * dth;
        let rec = fan.first_conjugate(&[th])?;
        let (Some(arc), Some(end)) = (rec.arc, rec.endpoint) else {
            continue;
        };
        let ds = 1e-4;
        let plus = fan.first_conjugate(&[th + ds])?.arc;
        let minus = fan.first_conjugate(&[th - ds])?.arc;
        let slope = match (plus, minus) {
            (Some(p), Some(q)) => (p - q) / (2.0 * ds),
            _ => f64::NAN,
        };
        out.push(CuspPoint {
            params: vec![th.rem_euclid(2.0 * PI)],
            arc,
            endpoint: end,
            corank: rec.corank,
            kernel_slope: slope,
        });
    }
    Ok(out)
}

/// Rays with the smallest second singular value ratio, best first.
fn corank_two_seeds(rays: &[RayRecord], count: usize) -> Vec<(Vec<f64>, f64)> {
    let mut c: Vec<&RayRecord> = rays
        .iter()
        .filter(|r| r.arc.is_some() && r.sigma_ratio.is_finite())
        .collect();
    c.sort_by(|a, b| a.sigma_ratio.total_cmp(&b.sigma_ratio));
    c.into_iter()
        .take(count)
        .map(|r| (r.params.clone(), r.arc.unwrap()))
        .collect()
}

fn spherical_frame(params: &[f64]) -> [DVector<f64>; 3] {
    let (t, f) = (params[0], params[1]);
    [
        DVector::from_vec(rho_of(params)),
        DVector::from_vec(vec![t.cos() * f.cos(), t.cos() * f.sin(), -t.sin()]),
        DVector::from_vec(vec![-f.sin(), f.cos(), 0.0]),
    ]
}

/// Transverse Jacobi fields at arc `t` along direction `params`, with the
/// normal and velocity components removed.  Both vanish at a corank-two
/// conjugate point.
pub fn transverse_residual(fan: &GeodesicFan, params: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = fan.dim();
    let [rho, e1, e2] = spherical_frame(params);
    let js = fan.shoot(rho.as_slice(), t)?;
    let dq = js.v.rows(0, n).into_owned();
    let nv = DVector::from_vec(fan.surface.grad_real(&js.state.q)).normalize();
    let mut vel = DVector::from_vec(js.state.p.clone());
    vel -= &nv * nv.dot(&vel);
    let vel = vel.normalize();
    let mut out = Vec::with_capacity(2 * n);
    for e in [e1, e2] {
        let mut c = &dq * &e;
        c -= &nv * nv.dot(&c);
        c -= &vel * vel.dot(&c);
        out.extend(c.iter().cloned());
    }
    Ok(out)
}

/// Gauss–Newton on the transverse residual over `(θ, φ, t)`.
pub fn locate_corank_two(fan: &GeodesicFan, params: &[f64], arc: f64) -> Result<CorankTwoPoint> {
    if fan.dim() != 4 {
        return Err(Error::InvalidInput("corank-two search needs a 3-dimensional surface".into()));
    }
    let mut x = DVector::from_vec(vec![params[0], params[1], arc]);
    let res = |x: &DVector<f64>| transverse_residual(fan, &[x[0], x[1]], x[2]);
    let mut r = DVector::from_vec(res(&x)?);
    let step = 1e-6;
    for _ in 0..40 {
        if r.norm() < 1e-11 {
            break;
        }
        let mut jac = DMatrix::zeros(r.len(), 3);
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let d = (DVector::from_vec(res(&xp)?) - DVector::from_vec(res(&xm)?)) / (2.0 * step);
            jac.set_column(j, &d);
        }
        let svd = jac.svd(true, true);
        let dx = svd
            .solve(&(-&r), 1e-12)
            .map_err(|e| Error::Singular(e.to_string()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let xn = &x + &dx * t;
            if let Ok(v) = res(&xn) {
                let rn = DVector::from_vec(v);
                if rn.norm() < r.norm() {
                    x = xn;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let js = fan.shoot(&rho_of(&[x[0], x[1]]), x[2])?;
    let m = fan.reduced(&js);
    Ok(CorankTwoPoint {
        params: vec![x[0], x[1]],
        arc: x[2],
        endpoint: js.state.q.clone(),
        residual: r.norm(),
        corank: corank(&m, CORANK_TOL),
        singular_values: singular_values_desc(&m),
    })
}

/// Chart of directions around a corank-two point:
/// `u(x, y) ∝ u₀ + x a + y b` with `(u₀, a, b)` the spherical frame there.
struct DirectionChart<'a> {
    fan: &'a GeodesicFan,
    frame: [DVector<f64>; 3],
}

/// First conjugate arc, its chart gradient and the kernel direction of the
/// reduced Jacobian in chart components.
#[derive(Clone, Copy, Debug)]
struct CuspSample {
    grad: [f64; 2],
    kernel: [f64; 2],
}

impl CuspSample {
    fn value(&self, reference: [f64; 2]) -> f64 {
        let k = self.kernel;
        let s = if k[0] * reference[0] + k[1] * reference[1] < 0.0 { -1.0 } else { 1.0 };
        s * (k[0] * self.grad[0] + k[1] * self.grad[1])
    }
}

impl<'a> DirectionChart<'a> {
    fn new(fan: &'a GeodesicFan, params: &[f64]) -> Self {
        DirectionChart {
            fan,
            frame: spherical_frame(params),
        }
    }

    fn direction(&self, x: f64, y: f64) -> DVector<f64> {
        let [u0, a, b] = &self.frame;
        (u0 + a * x + b * y).normalize()
    }

    fn arc(&self, x: f64, y: f64) -> Result<Option<f64>> {
        let u = self.direction(x, y);
        let th = u[2].clamp(-1.0, 1.0).acos();
        let ph = u[1].atan2(u[0]);
        Ok(self.fan.first_conjugate(&[th, ph])?.arc)
    }

    fn sample(&self, x: f64, y: f64) -> Result<Option<CuspSample>> {
        const STEP: f64 = 1e-4;
        let Some(t) = self.arc(x, y)? else { return Ok(None) };
        let mut g = [0.0; 2];
        for (d, (dx, dy)) in [(STEP, 0.0), (0.0, STEP)].into_iter().enumerate() {
            let (Some(p), Some(m)) = (self.arc(x + dx, y + dy)?, self.arc(x - dx, y - dy)?) else {
                return Ok(None);
            };
            g[d] = (p - m) / (2.0 * STEP);
        }
        let js = self.fan.shoot(self.direction(x, y).as_slice(), t)?;
        let svd = self.fan.reduced(&js).svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Singular("svd failed".into()))?;
        let imin = (0..svd.singular_values.len())
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .unwrap_or(0);
        let k = vt.row(imin).transpose();
        let [_, a, b] = &self.frame;
        Ok(Some(CuspSample {
            grad: g,
            kernel: [k.dot(a), k.dot(b)],
        }))
    }
}

/// Sign changes of the cusp function `⟨k, ∇t*⟩` around circles centred at
/// a corank-two point.  The kernel is a line field, so its orientation is
/// carried continuously along each circle.  Returns the most frequent
/// crossing count and the per-ring scans.
pub fn ring_degree(fan: &GeodesicFan, pt: &CorankTwoPoint, radii: &[f64], samples: usize) -> Result<(usize, Vec<RingScan>)> {
    let chart = DirectionChart::new(fan, &pt.params);
    let mut rings = Vec::new();
    for &r in radii {
        let angles: Vec<f64> = (0..samples).map(|k| 2.0 * PI * k as f64 / samples as f64).collect();
        let vals = angles
            .par_iter()
            .map(|a| chart.sample(r * a.cos(), r * a.sin()))
            .collect::<Result<Vec<_>>>()?;
        let mut crossings = Vec::new();
        let mut prev: Option<([f64; 2], f64)> = None;
        for k in 0..=samples {
            let Some(s) = vals[k % samples] else {
                prev = None;
                continue;
            };
            let mut kern = s.kernel;
            if let Some((pk, pc)) = prev {
                if pk[0] * kern[0] + pk[1] * kern[1] < 0.0 {
                    kern = [-kern[0], -kern[1]];
                }
                let c = kern[0] * s.grad[0] + kern[1] * s.grad[1];
                if pc * c < 0.0 {
                    crossings.push(angles[k % samples]);
                }
            }
            prev = Some((kern, kern[0] * s.grad[0] + kern[1] * s.grad[1]));
        }
        rings.push(RingScan { radius: r, angles: crossings });
    }
    let mut counts: Vec<usize> = rings.iter().map(|r| r.angles.len()).collect();
    counts.sort_unstable();
    let mode = counts
        .iter()
        .max_by_key(|&&c| (counts.iter().filter(|&&d| d == c).count(), std::cmp::Reverse(c)))
        .cloned()
        .unwrap_or(0);
    Ok((mode, rings))
}

/// Zero set of the cusp function on a square chart grid around a
/// corank-two point, plus ring scans at 20, 40 and 60 percent of the chart
/// half-width.  Each cell orients its kernels against its first corner.
pub fn cusp_ridges(fan: &GeodesicFan, pt: &CorankTwoPoint, radius: f64, grid: usize) -> Result<CuspRidges> {
    let chart = DirectionChart::new(fan, &pt.params);
    let coords = crate::bvp::linspace(-radius, radius, grid);
    let nodes: Vec<(usize, usize)> = (0..grid).flat_map(|i| (0..grid).map(move |j| (i, j))).collect();
    let field = nodes
        .par_iter()
        .map(|&(i, j)| chart.sample(coords[i], coords[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut segments = Vec::new();
    for i in 0..grid - 1 {
        for j in 0..grid - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let vals: Option<Vec<CuspSample>> = corners.iter().map(|&(a, b)| field[a * grid + b]).collect();
            let Some(vals) = vals else { continue };
            let reference = vals[0].kernel;
            let c: Vec<f64> = vals.iter().map(|v| v.value(reference)).collect();
            let pos: Vec<[f64; 2]> = corners.iter().map(|&(a, b)| [coords[a], coords[b]]).collect();
            segments.extend(crate::singular::marching_square(&pos, &c));
        }
    }
    let radii: Vec<f64> = [0.2, 0.4, 0.6].iter().map(|f| f * radius).collect();
    let (degree, rings) = ring_degree(fan, pt, &radii, RING_SAMPLES)?;
    Ok(CuspRidges {
        radius,
        grid,
        segments,
        rings,
        degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::{fd_jacobian, lift_all, partials_matrix, Jet};
    use crate::systems::{hypersurface_catalog, SURFACE_NAMES};

    fn sphere() -> Hypersurface {
        hypersurface_catalog("sphere").unwrap()
    }

    fn bisect_lambda(surface: &Hypersurface, q: &[f64], p: &[f64], h: f64) -> f64 {
        let g = surface.grad_real(q);
        let phi = |l: f64| {
            let x: Vec<f64> = (0..q.len()).map(|i| q[i] + h * (p[i] - 0.5 * h * g[i] * l)).collect();
            surface.f_real(&x)
        };
        let (mut a, mut b) = (-10.0, 10.0);
        assert!(phi(a) * phi(b) < 0.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if phi(a) * phi(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    /// Deterministic pseudo-random numbers in [-1, 1).
    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random_state(surface: &Hypersurface, seed: &mut u64) -> ConstrainedState {
        let base = surface.q_star.clone().unwrap();
        let q0: Vec<f64> = base.iter().map(|x| x + 0.05 * lcg(seed)).collect();
        let q = project_to_surface(surface, &q0).unwrap();
        let p0: Vec<f64> = (0..q.len()).map(|_| lcg(seed)).collect();
        let p = unit_tangent(surface, &q, &p0);
        ConstrainedState::new(q, p)
    }

    #[test]
    fn plane_multiplier_is_zero_and_motion_straight() {
        let s = Hypersurface::plane(0.3);
        let st = ConstrainedState::new(vec![0.1, 0.2, 0.3], vec![0.6, 0.8, 0.0]);
        let l: f64 = solve_lambda(&s, &st.q, &st.p, 0.1, 0.0).unwrap();
        assert_eq!(l, 0.0);
        let out = rattle_flow(&s, &st, 0.1, 10).unwrap();
        assert!((out.q[0] - 0.7).abs() < 1e-14 && (out.q[1] - 1.0).abs() < 1e-14);
        assert_eq!(out.p, st.p);
    }

    #[test]
    fn plane_jet_block_is_h_identity() {
        let s = Hypersurface::plane(0.0);
        let js = JetRattleState::new(ConstrainedState::new(vec![0.0; 3], vec![1.0, 0.0, 0.0]));
        let out = jet_rattle_step(&s, &js, 0.1).unwrap();
        // Tangent directions move by h; the normal one is removed by λ.
        let dpq = out.v.view((0, 3), (3, 3)).into_owned();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1, 0.0]));
        assert!((dpq - expect).amax() < 1e-15);
    }

    #[test]
    fn sphere_multiplier_matches_bisection() {
        let s = sphere();
        let (q, p) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let l: f64 = solve_lambda(&s, &q, &p, 0.1, 0.0).unwrap();
        assert!((l - bisect_lambda(&s, &q, &p, 0.1)).abs() < 1e-12);
        let (st, _) = rattle_step(&s, &ConstrainedState::new(q.to_vec(), p.to_vec()), 1e-4, 0.0).unwrap();
        assert!(s.f_real(&st.q).abs() < 1e-13);
    }

    #[test]
    fn sphere_reaches_antipode() {
        let s = sphere();
        let h = 0.01;
        let n = (PI / h).ceil() as usize;
        let out = rattle_flow(&s, &ConstrainedState::new(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]), h, n).unwrap();
        // n h overshoots π by less than h.
        let err = ((out.q[0] + 1.0).powi(2) + out.q[1].powi(2) + out.q[2].powi(2)).sqrt();
        assert!(err < 2.0 * h, "distance to antipode {err}");
    }

    #[test]
    fn constraint_and_tangency_hold_on_catalog() {
        let mut seed = 7;
        for name in SURFACE_NAMES {
            let s = hypersurface_catalog(name).unwrap();
            let mut st = random_state(&s, &mut seed);
            let mut l = 0.0;
            for _ in 0..200 {
                let (next, ln) = rattle_step(&s, &st, 0.01, l).unwrap();
                st = next;
                l = ln;
                let (fr, tr) = st.residuals(&s);
                assert!(fr < 1e-10 && tr < 1e-10, "{name}: {fr:e} {tr:e}");
            }
        }
    }

    #[test]
    fn jet_rattle_matches_finite_differences_on_catalog() {
        let mut seed = 11;
        for name in SURFACE_NAMES {
            let s = hypersurface_catalog(name).unwrap();
            for _ in 0..3 {
                let st = random_state(&s, &mut seed);
                let n = st.q.len();
                let out = jet_rattle_flow(&s, &JetRattleState::new(st.clone()), 0.01, 20).unwrap();
                let z0: Vec<f64> = st.q.iter().chain(&st.p).cloned().collect();
                let fd = fd_jacobian(
                    |z| {
                        let r = rattle_flow(&s, &ConstrainedState::new(z[..n].to_vec(), z[n..].to_vec()), 0.01, 20)?;
                        Ok(r.q.into_iter().chain(r.p).collect())
                    },
                    &z0,
                    1e-6,
                )
                .unwrap();
                let rel = (&out.v - &fd).amax() / (1.0 + fd.amax());
                assert!(rel < 1e-5, "{name}: {rel:e}");
            }
        }
    }

    #[test]
    fn jet_rattle_equals_jets_end_to_end() {
        let s = hypersurface_catalog("ellipsoid_perturbed").unwrap();
        let mut seed = 3;
        let st = random_state(&s, &mut seed);
        let n = st.q.len();
        let out = jet_rattle_flow(&s, &JetRattleState::new(st.clone()), 0.01, 30).unwrap();
        let z: Vec<Jet<f64>> = lift_all(&st.q.iter().chain(&st.p).cloned().collect::<Vec<_>>());
        let (mut q, mut p) = (z[..n].to_vec(), z[n..].to_vec());
        let mut l = 0.0;
        for _ in 0..30 {
            let (q1, p1, ln) = rattle_step_generic(&s, &q, &p, 0.01, l, true).unwrap();
            q = q1;
            p = p1;
            l = ln;
        }
        let jac = partials_matrix(&q.into_iter().chain(p).collect::<Vec<_>>());
        assert!((&out.v - jac).amax() < 1e-9);
    }

    #[test]
    fn skipping_projection_leaves_next_position() {
        let s = hypersurface_catalog("gaussian_graph_perturbed").unwrap();
        let mut seed = 5;
        let st = random_state(&s, &mut seed);
        let (q1, p1, l1) = rattle_step_generic(&s, &st.q, &st.p, 0.05, 0.0, true).unwrap();
        let (r1, s1, m1) = rattle_step_generic(&s, &st.q, &st.p, 0.05, 0.0, false).unwrap();
        let (q2, _, _) = rattle_step_generic(&s, &q1, &p1, 0.05, l1, true).unwrap();
        let (r2, _, _) = rattle_step_generic(&s, &r1, &s1, 0.05, m1, true).unwrap();
        for i in 0..3 {
            assert!((q2[i] - r2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_basis_examples() {
        let a = tangent_basis(&sphere(), &[0.0, 0.0, 1.0]).unwrap();
        assert!((a - DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).amax() < 1e-15);
        for name in SURFACE_NAMES {
            let s = hypersurface_catalog(name).unwrap();
            let q = s.q_star.clone().unwrap();
            let a = tangent_basis(&s, &q).unwrap();
            let g = DVector::from_vec(s.grad_real(&q));
            assert!((g.transpose() * &a).amax() < 1e-12, "{name}");
            if !s.is_graph() {
                for c in a.column_iter() {
                    assert!((c.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
        let s = hypersurface_catalog("ellipsoid3_perturbed").unwrap();
        let a = tangent_basis(&s, s.q_star.as_ref().unwrap()).unwrap();
        let mut target = DMatrix::zeros(4, 3);
        target.view_mut((1, 0), (3, 3)).copy_from(&DMatrix::identity(3, 3));
        assert!((a - target).amax() < 0.5);
    }

    #[test]
    fn sphere_conjugate_arc_is_pi() {
        let s = sphere();
        let fan = GeodesicFan::new(&s, &[0.0, 0.0, 1.0], 0.01, None).unwrap();
        let r = fan.first_conjugate(&[0.7]).unwrap();
        let arc = r.arc.unwrap();
        assert!((arc - PI).abs() < 5.0 * 0.01 * 0.01);
        assert!(r.det < DET_TOL);
        let end = r.endpoint.unwrap();
        assert!((end[2] + 1.0).abs() < 1e-3);
        assert_eq!(r.corank, 1);
    }

    #[test]
    fn mismatched_ray_grid_is_an_error() {
        let s = sphere();
        let grid = RayGrid::Sphere { n_theta: 1, n_phi: 1 };
        assert!(matches!(
            conjugate_locus(&s, &[0.0, 0.0, 1.0], &grid, 0.05, None),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ray_grid_counts() {
        assert_eq!(RayGrid::Circle { count: 200 }.params().len(), 200);
        assert_eq!(RayGrid::Sphere { n_theta: 4, n_phi: 5 }.len(), 20);
        let r = rho_of(&[0.3, 1.1]);
        assert!((norm2(&r) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hess_matches_jets_through_d_psi_inputs() {
        let s = hypersurface_catalog("ellipsoid3_perturbed").unwrap();
        let q = [-0.3, 0.05, 0.02, -0.01];
        let x: Vec<Jet<f64>> = lift_all(&q);
        let h = partials_matrix(&s.grad(&x));
        assert!((h - s.hess(&q)).amax() < 1e-12);
    }
}
