//! One-step methods and N-step flow maps.
//!
//! Every step function is generic over [`Scalar`]: running it on jets
//! propagates the derivative of the discrete flow alongside the state.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{lift_all, partials_matrix, values, Jet, Scalar};
use crate::linalg;
use crate::systems::{ExplicitSymplecticMap, Hamiltonian};

/// Integration scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Störmer–Verlet; explicit for separable systems, implicit otherwise.
    Sv,
    /// Implicit partitioned Störmer–Verlet, used for every system.
    SvImplicit,
    /// Explicit midpoint rule (not symplectic).
    Rk2,
    /// Classical Runge–Kutta with 100 substeps per requested step.
    RefRk4,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sv => "sv",
            Method::SvImplicit => "sv_implicit",
            Method::Rk2 => "rk2",
            Method::RefRk4 => "ref_rk4",
        }
    }

    pub fn is_symplectic(&self) -> bool {
        matches!(self, Method::Sv | Method::SvImplicit)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sv" => Ok(Method::Sv),
            "sv_implicit" => Ok(Method::SvImplicit),
            "rk2" => Ok(Method::Rk2),
            "ref_rk4" => Ok(Method::RefRk4),
            _ => Err(Error::Parse(format!("unknown method '{s}'"))),
        }
    }
}

/// How to integrate: scheme, step count and total time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub method: Method,
    pub steps: usize,
    pub tau: f64,
    pub with_jets: bool,
    pub record_trajectory: bool,
}

impl FlowSpec {
    pub fn new(method: Method, steps: usize, tau: f64) -> Self {
        FlowSpec {
            method,
            steps,
            tau,
            with_jets: false,
            record_trajectory: false,
        }
    }

    pub fn with_jets(mut self) -> Self {
        self.with_jets = true;
        self
    }

    pub fn with_trajectory(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    /// Number of elementary steps actually taken.
    pub fn substeps(&self) -> usize {
        match self.method {
            Method::RefRk4 => self.steps * 100,
            _ => self.steps,
        }
    }

    pub fn h(&self) -> f64 {
        self.tau / self.substeps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Output of [`flow`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowResult {
    pub z_final: Vec<f64>,
    pub jac: Option<DMatrix<f64>>,
    pub trajectory: Option<Vec<Vec<f64>>>,
}

/// Tolerance and iteration cap of the implicit inner solves.
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

fn axpy<S: Scalar>(x: &[S], a: f64, d: &[S]) -> Vec<S> {
    x.iter().zip(d).map(|(x, d)| x.clone() + d.clone() * a).collect()
}

/// Explicit Störmer–Verlet for `H = T(p) + V(q)`, momentum first.
pub fn step_sv_separable<H: Hamiltonian, S: Scalar>(
    sys: &H,
    q: &[S],
    p: &[S],
    mu: &[S],
    h: f64,
) -> (Vec<S>, Vec<S>) {
    let ph = axpy(p, -0.5 * h, &sys.grad_q(q, p, mu));
    let q1 = axpy(q, h, &sys.grad_p(q, &ph, mu));
    let p1 = axpy(&ph, -0.5 * h, &sys.grad_q(&q1, &ph, mu));
    (q1, p1)
}

/// Value-level Jacobian of a gradient component with respect to one block.
fn block_jacobian<H: Hamiltonian>(
    sys: &H,
    q: &[f64],
    p: &[f64],
    mu: &[f64],
    wrt_q: bool,
    grad_q: bool,
) -> DMatrix<f64> {
    let n = q.len();
    let lift = |v: &[f64], active: bool| -> Vec<Jet<f64>> {
        if active {
            lift_all(v)
        } else {
            v.iter().map(|&x| Jet::constant(x, n)).collect()
        }
    };
    let qj = lift(q, wrt_q);
    let pj = lift(p, !wrt_q);
    let mj: Vec<Jet<f64>> = mu.iter().map(|&x| Jet::constant(x, n)).collect();
    let g = if grad_q {
        sys.grad_q(&qj, &pj, &mj)
    } else {
        sys.grad_p(&qj, &pj, &mj)
    };
    partials_matrix(&g)
}

fn reals<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.real()).collect()
}

/// Newton iteration in `S` arithmetic with a real Jacobian.  Once the
/// value converges, the derivative part equals the implicit-function
/// derivative of the solution.
fn newton_solve<S, G, J>(mut x: Vec<S>, residual: G, jacobian: J, what: &str) -> Result<Vec<S>>
where
    S: Scalar,
    G: Fn(&[S]) -> Vec<S>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    for _ in 0..NEWTON_MAX_ITER {
        let xr = reals(&x);
        let lu = jacobian(&xr).lu();
        let r = residual(&x);
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("{what}: singular Newton matrix")))?;
        let dx = linalg::mat_vec(&inv, &r);
        let step = linalg::norm_inf(&reals(&dx));
        x = x.iter().zip(dx).map(|(a, d)| a.clone() - d).collect();
        if !step.is_finite() {
            break;
        }
        if step <= NEWTON_TOL * (1.0 + linalg::norm_inf(&xr)) {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence(format!(
        "{what}: inner Newton did not reach {NEWTON_TOL:e} in {NEWTON_MAX_ITER} iterations"
    )))
}

/// Implicit partitioned Störmer–Verlet for general `H(q, p)`.
pub fn step_sv_general<H: Hamiltonian, S: Scalar>(
    sys: &H,
    q: &[S],
    p: &[S],
    mu: &[S],
    h: f64,
) -> Result<(Vec<S>, Vec<S>)> {
    let n = q.len();
    let qr = reals(q);
    let mur = reals(mu);
    let eye = DMatrix::<f64>::identity(n, n);

    let ph0 = axpy(p, -0.5 * h, &sys.grad_q(q, p, mu));
    let ph = newton_solve(
        ph0,
        |ph| {
            let g = sys.grad_q(q, ph, mu);
            (0..n)
                .map(|i| ph[i].clone() - p[i].clone() + g[i].clone() * (0.5 * h))
                .collect()
        },
        |phr| &eye + block_jacobian(sys, &qr, phr, &mur, false, true) * (0.5 * h),
        "half-step momentum",
    )?;

    let phr = reals(&ph);
    let v0 = sys.grad_p(q, &ph, mu);
    let q0 = axpy(q, h, &v0);
    let q1 = newton_solve(
        q0,
        |q1| {
            let v1 = sys.grad_p(q1, &ph, mu);
            (0..n)
                .map(|i| q1[i].clone() - q[i].clone() - (v0[i].clone() + v1[i].clone()) * (0.5 * h))
                .collect()
        },
        |q1r| &eye - block_jacobian(sys, q1r, &phr, &mur, true, false) * (0.5 * h),
        "position update",
    )?;

    let p1 = axpy(&ph, -0.5 * h, &sys.grad_q(&q1, &ph, mu));
    Ok((q1, p1))
}

fn split<S: Clone>(z: &[S]) -> (Vec<S>, Vec<S>) {
    let n = z.len() / 2;
    (z[..n].to_vec(), z[n..].to_vec())
}

/// Explicit midpoint rule.
pub fn step_rk2<H: Hamiltonian, S: Scalar>(sys: &H, z: &[S], mu: &[S], h: f64) -> Vec<S> {
    let k1 = sys.vector_field(z, mu);
    let zm = axpy(z, 0.5 * h, &k1);
    axpy(z, h, &sys.vector_field(&zm, mu))
}

/// Classical fourth-order Runge–Kutta.
pub fn step_rk4<H: Hamiltonian, S: Scalar>(sys: &H, z: &[S], mu: &[S], h: f64) -> Vec<S> {
    let k1 = sys.vector_field(z, mu);
    let k2 = sys.vector_field(&axpy(z, 0.5 * h, &k1), mu);
    let k3 = sys.vector_field(&axpy(z, 0.5 * h, &k2), mu);
    let k4 = sys.vector_field(&axpy(z, h, &k3), mu);
    z.iter()
        .enumerate()
        .map(|(i, x)| {
            x.clone()
                + (k1[i].clone() + k2[i].clone() * 2.0 + k3[i].clone() * 2.0 + k4[i].clone())
                    * (h / 6.0)
        })
        .collect()
}

/// One step of the chosen method on `z = (q, p)`.
pub fn step<H: Hamiltonian, S: Scalar>(
    sys: &H,
    method: Method,
    z: &[S],
    mu: &[S],
    h: f64,
) -> Result<Vec<S>> {
    Ok(match method {
        Method::Sv if sys.is_separable() => {
            let (q, p) = split(z);
            let (q1, mut p1) = step_sv_separable(sys, &q, &p, mu, h);
            let mut out = q1;
            out.append(&mut p1);
            out
        }
        Method::Sv | Method::SvImplicit => {
            let (q, p) = split(z);
            let (q1, mut p1) = step_sv_general(sys, &q, &p, mu, h)?;
            let mut out = q1;
            out.append(&mut p1);
            out
        }
        Method::Rk2 => step_rk2(sys, z, mu, h),
        Method::RefRk4 => step_rk4(sys, z, mu, h),
    })
}

/// Compose all steps of `spec` in `S` arithmetic.
pub fn flow_generic<H: Hamiltonian, S: Scalar>(
    sys: &H,
    z0: &[S],
    mu: &[S],
    spec: &FlowSpec,
    mut record: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<S>> {
    spec.validate()?;
    if z0.len() != 2 * sys.half_dim() {
        return Err(Error::InvalidInput(format!(
            "state has length {}, expected {}",
            z0.len(),
            2 * sys.half_dim()
        )));
    }
    let h = spec.h();
    let mut z = z0.to_vec();
    if let Some(t) = record.as_deref_mut() {
        t.push(reals(&z));
    }
    for k in 0..spec.substeps() {
        z = step(sys, spec.method, &z, mu, h).map_err(|e| Error::StepFailure {
            step: k,
            reason: e.to_string(),
        })?;
        if z.iter().any(|v| !v.real().is_finite()) {
            return Err(Error::StepFailure {
                step: k,
                reason: "state is no longer finite".into(),
            });
        }
        if let Some(t) = record.as_deref_mut() {
            t.push(reals(&z));
        }
    }
    Ok(z)
}

/// Flow of `z0` with optional Jacobian (all `2n` seeds in one pass).
pub fn flow<H: Hamiltonian>(sys: &H, z0: &[f64], mu: &[f64], spec: &FlowSpec) -> Result<FlowResult> {
    let mut traj = spec.record_trajectory.then(Vec::new);
    let (z_final, jac) = if spec.with_jets {
        let zj = lift_all(z0);
        let mj: Vec<Jet<f64>> = mu.iter().map(|&m| Jet::constant(m, z0.len())).collect();
        let out = flow_generic(sys, &zj, &mj, spec, traj.as_mut())?;
        (values(&out), Some(partials_matrix(&out)))
    } else {
        (flow_generic(sys, z0, mu, spec, traj.as_mut())?, None)
    };
    Ok(FlowResult {
        z_final,
        jac,
        trajectory: traj,
    })
}

/// A map of phase space depending on parameters, evaluable on jets.
///
/// Boundary value problems are posed on top of this abstraction, so a
/// discretised Hamiltonian flow and a closed-form symplectic map are
/// interchangeable.
pub trait PhaseMap: Sync {
    fn half_dim(&self) -> usize;
    fn apply<S: Scalar>(&self, z: &[S], mu: &[S]) -> Result<Vec<S>>;
    fn describe(&self) -> String;
}

/// A Hamiltonian system together with a discretisation.
#[derive(Clone, Debug)]
pub struct Discretized<H> {
    pub system: H,
    pub spec: FlowSpec,
}

impl<H: Hamiltonian> Discretized<H> {
    pub fn new(system: H, spec: FlowSpec) -> Self {
        Discretized { system, spec }
    }
}

impl<H: Hamiltonian + std::fmt::Debug> PhaseMap for Discretized<H> {
    fn half_dim(&self) -> usize {
        self.system.half_dim()
    }

    fn apply<S: Scalar>(&self, z: &[S], mu: &[S]) -> Result<Vec<S>> {
        flow_generic(&self.system, z, mu, &self.spec, None)
    }

    fn describe(&self) -> String {
        format!(
            "{} N={} tau={}",
            self.spec.method.name(),
            self.spec.steps,
            self.spec.tau
        )
    }
}

impl PhaseMap for ExplicitSymplecticMap {
    fn half_dim(&self) -> usize {
        ExplicitSymplecticMap::half_dim(self)
    }

    fn apply<S: Scalar>(&self, z: &[S], mu: &[S]) -> Result<Vec<S>> {
        Ok(ExplicitSymplecticMap::apply(self, z, mu))
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Jacobian of any phase map at a real point.
pub fn map_jacobian<M: PhaseMap>(map: &M, z: &[f64], mu: &[f64]) -> Result<DMatrix<f64>> {
    let zj = lift_all(z);
    let mj: Vec<Jet<f64>> = mu.iter().map(|&m| Jet::constant(m, z.len())).collect();
    Ok(partials_matrix(&map.apply(&zj, &mj)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{HamiltonianSystem, Model};

    fn osc() -> HamiltonianSystem {
        HamiltonianSystem::new(Model::HarmonicOscillator, "osc", vec![])
    }

    #[test]
    fn free_particle_exact() {
        let s = HamiltonianSystem::new(Model::FreeParticle { n: 1 }, "free", vec![]);
        let (q, p) = step_sv_separable(&s, &[0.5], &[2.0], &[], 0.1);
        assert_eq!((q[0], p[0]), (0.7, 2.0));
        let z = step_rk2(&s, &[0.5, 2.0], &[], 0.1);
        assert_eq!(z, vec![0.7, 2.0]);
    }

    #[test]
    fn oscillator_single_step_by_hand() {
        let (q, p) = step_sv_separable(&osc(), &[1.0], &[0.0], &[], 0.1);
        assert!((q[0] - 0.995).abs() < 1e-15);
        assert!((p[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn implicit_step_reduces_to_explicit_when_separable() {
        let s = HamiltonianSystem::new(Model::PlanarPitchfork, "pf", vec![-0.3]);
        let (q1, p1) = step_sv_separable(&s, &[0.2], &[0.7], &[-0.3], 0.05);
        let (q2, p2) = step_sv_general(&s, &[0.2], &[0.7], &[-0.3], 0.05).unwrap();
        assert!((q1[0] - q2[0]).abs() < 1e-12 && (p1[0] - p2[0]).abs() < 1e-12);
    }

    #[test]
    fn sv_is_time_reversible() {
        let s = HamiltonianSystem::new(Model::HenonHeiles, "hh", vec![]);
        let z0 = [0.1, 0.2, 0.3, -0.4];
        let z1 = step(&s, Method::Sv, &z0, &[], 0.05).unwrap();
        let z2 = step(&s, Method::Sv, &z1, &[], -0.05).unwrap();
        for i in 0..4 {
            assert!((z2[i] - z0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_step_flow_matches_step() {
        let s = osc();
        let r = flow(&s, &[1.0, 0.0], &[], &FlowSpec::new(Method::Sv, 1, 0.1)).unwrap();
        assert!((r.z_final[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn flow_spec_validation() {
        assert!(FlowSpec::new(Method::Sv, 0, 1.0).validate().is_err());
        assert!(FlowSpec::new(Method::Sv, 3, -1.0).validate().is_err());
        assert_eq!(FlowSpec::new(Method::RefRk4, 3, 1.5).substeps(), 300);
    }

    #[test]
    fn trajectory_recorded_per_step() {
        let spec = FlowSpec::new(Method::Rk2, 7, 1.0).with_trajectory();
        let r = flow(&osc(), &[1.0, 0.0], &[], &spec).unwrap();
        assert_eq!(r.trajectory.unwrap().len(), 8);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Sv, Method::SvImplicit, Method::Rk2, Method::RefRk4] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
