//! Catalog of Hamiltonian systems, boundary conditions, explicit symplectic
//! maps and constraint hypersurfaces.
//!
//! Phase-space points are stored as `z = (q, p)` with `q, p ∈ ℝⁿ`.  The
//! parameter vector `μ` is passed explicitly to every evaluation so that it
//! can itself carry jets during continuation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{constants_nested, lift_nested, Jet, Scalar};
use crate::linalg;

/// A Hamiltonian `H(q, p; μ)` that can be evaluated on any [`Scalar`].
pub trait Hamiltonian: Sync {
    /// Half the phase-space dimension.
    fn half_dim(&self) -> usize;

    fn energy<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> S;

    /// True when `H = T(p) + V(q)`.
    fn is_separable(&self) -> bool {
        false
    }

    /// `∇_q H`; defaults to nested-jet differentiation of [`Self::energy`].
    fn grad_q<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> Vec<S>
    where
        Self: Sized,
    {
        jet_grad_q(self, q, p, mu)
    }

    /// `∇_p H`; defaults to nested-jet differentiation of [`Self::energy`].
    fn grad_p<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> Vec<S>
    where
        Self: Sized,
    {
        jet_grad_p(self, q, p, mu)
    }

    /// Hamilton's vector field `(∇_p H, −∇_q H)` at `z = (q, p)`.
    fn vector_field<S: Scalar>(&self, z: &[S], mu: &[S]) -> Vec<S>
    where
        Self: Sized,
    {
        let n = self.half_dim();
        let (q, p) = z.split_at(n);
        let mut out = self.grad_p(q, p, mu);
        out.extend(self.grad_q(q, p, mu).into_iter().map(|g| -g));
        out
    }
}

/// `∇_q H` through nested jets, independent of any hand-coded gradient.
pub fn jet_grad_q<H: Hamiltonian, S: Scalar>(h: &H, q: &[S], p: &[S], mu: &[S]) -> Vec<S> {
    let n = q.len();
    let e = h.energy(&lift_nested(q), &constants_nested(p, n), &constants_nested(mu, n));
    e.partials.into_vec()
}

/// `∇_p H` through nested jets, independent of any hand-coded gradient.
pub fn jet_grad_p<H: Hamiltonian, S: Scalar>(h: &H, q: &[S], p: &[S], mu: &[S]) -> Vec<S> {
    let n = p.len();
    let e = h.energy(&constants_nested(q, n), &lift_nested(p), &constants_nested(mu, n));
    e.partials.into_vec()
}

/// Concrete systems in the catalog.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// `½p² + C eᑫ` with `μ = (C)`.
    Bratu,
    HenonHeiles,
    /// Hénon–Heiles plus `0.01 p₂ sin p₁`.
    HenonHeilesPerturbed,
    /// `p² + 0.1p³ − 0.01 cos p + q³ − 0.01q² + μq`.
    PlanarPitchfork,
    /// `q₁³ + μq₁ + p₁p₂ + p₁² + 0.1(p₁³ + p₂³)`, optionally `+ 0.01q₂`.
    Cyclic4d { symbroken: bool },
    /// `p̄₁³ + μp̄₁ + p̄₂²` pulled back through the cotangent lift of
    /// `h(q) = (q₁ + ε cos q₂, q₂ + κ cos q₁)`.
    Torus { eps: f64, kappa: f64 },
    /// `H ∘ Ψ⁻¹` with `Ψ(q, p) = (Aq, A⁻ᵀp)`.
    Transformed {
        base: Box<Model>,
        a: DMatrix<f64>,
        a_inv: DMatrix<f64>,
    },
    /// `½(p² + q²)` in one degree of freedom.
    HarmonicOscillator,
    /// `½|p|²` in `n` degrees of freedom.
    FreeParticle { n: usize },
}

impl Model {
    fn half_dim(&self) -> usize {
        match self {
            Model::Bratu | Model::PlanarPitchfork | Model::HarmonicOscillator => 1,
            Model::HenonHeiles
            | Model::HenonHeilesPerturbed
            | Model::Cyclic4d { .. }
            | Model::Torus { .. } => 2,
            Model::Transformed { base, .. } => base.half_dim(),
            Model::FreeParticle { n } => *n,
        }
    }

    fn is_separable(&self) -> bool {
        match self {
            Model::HenonHeilesPerturbed | Model::Torus { .. } => false,
            Model::Transformed { base, .. } => base.is_separable(),
            _ => true,
        }
    }

    fn mu0<S: Scalar>(mu: &[S], like: &S) -> S {
        mu.first().cloned().unwrap_or_else(|| like.cst(0.0))
    }

    fn energy<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> S {
        match self {
            Model::Bratu => p[0].sq() * 0.5 + Self::mu0(mu, &q[0]) * q[0].exp(),
            Model::HenonHeiles => hh_energy(q, p),
            Model::HenonHeilesPerturbed => hh_energy(q, p) + p[1].clone() * p[0].sin() * 0.01,
            Model::PlanarPitchfork => {
                let (q, p) = (&q[0], &p[0]);
                p.sq() + p.powi(3) * 0.1 - p.cos() * 0.01 + q.powi(3) - q.sq() * 0.01
                    + Self::mu0(mu, q) * q.clone()
            }
            Model::Cyclic4d { symbroken } => {
                let mut e = q[0].powi(3)
                    + Self::mu0(mu, &q[0]) * q[0].clone()
                    + p[0].clone() * p[1].clone()
                    + p[0].sq()
                    + (p[0].powi(3) + p[1].powi(3)) * 0.1;
                if *symbroken {
                    e = e + q[1].clone() * 0.01;
                }
                e
            }
            Model::Torus { eps, kappa } => {
                let pb = torus_pbar(q, p, *eps, *kappa)
                    .expect("cotangent lift is regular for |eps|, |kappa| < 1");
                pb[0].powi(3) + Self::mu0(mu, &q[0]) * pb[0].clone() + pb[1].sq()
            }
            Model::Transformed { base, a, a_inv } => {
                let qo = linalg::mat_vec(a_inv, q);
                let po = linalg::mat_vec(&a.transpose(), p);
                base.energy(&qo, &po, mu)
            }
            Model::HarmonicOscillator => (p[0].sq() + q[0].sq()) * 0.5,
            Model::FreeParticle { .. } => {
                p.iter().fold(p[0].cst(0.0), |acc, v| acc + v.sq()) * 0.5
            }
        }
    }

    fn kinetic<S: Scalar>(&self, p: &[S], mu: &[S]) -> Option<S> {
        if !self.is_separable() {
            return None;
        }
        let zeros: Vec<S> = p.iter().map(|v| v.cst(0.0)).collect();
        Some(self.energy(&zeros, p, mu) - self.energy(&zeros, &zeros, mu))
    }

    fn potential<S: Scalar>(&self, q: &[S], mu: &[S]) -> Option<S> {
        if !self.is_separable() {
            return None;
        }
        let zeros: Vec<S> = q.iter().map(|v| v.cst(0.0)).collect();
        Some(self.energy(q, &zeros, mu))
    }

    fn grad_q<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> Option<Vec<S>> {
        Some(match self {
            Model::Bratu => vec![Self::mu0(mu, &q[0]) * q[0].exp()],
            Model::HenonHeiles | Model::HenonHeilesPerturbed => {
                let (x1, x2) = (&q[0], &q[1]);
                vec![
                    x1.clone() - x1.clone() * x2.clone() * 20.0,
                    x2.clone() - x1.sq() * 10.0 + x2.sq() * 10.0,
                ]
            }
            Model::PlanarPitchfork => {
                vec![q[0].sq() * 3.0 - q[0].clone() * 0.02 + Self::mu0(mu, &q[0])]
            }
            Model::Cyclic4d { symbroken } => vec![
                q[0].sq() * 3.0 + Self::mu0(mu, &q[0]),
                q[1].cst(if *symbroken { 0.01 } else { 0.0 }),
            ],
            Model::Transformed { base, a, a_inv } => {
                let qo = linalg::mat_vec(a_inv, q);
                let po = linalg::mat_vec(&a.transpose(), p);
                let g = base.grad_q(&qo, &po, mu)?;
                linalg::mat_vec(&a_inv.transpose(), &g)
            }
            Model::HarmonicOscillator => vec![q[0].clone()],
            Model::FreeParticle { .. } => q.iter().map(|v| v.cst(0.0)).collect(),
            Model::Torus { eps, kappa } => {
                let (pb, w) = torus_parts(q, p, mu, *eps, *kappa);
                vec![
                    q[0].cos() * pb[1].clone() * w[0].clone() * *kappa,
                    q[1].cos() * pb[0].clone() * w[1].clone() * *eps,
                ]
            }
        })
    }

    fn grad_p<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> Option<Vec<S>> {
        Some(match self {
            Model::Bratu | Model::HenonHeiles | Model::HarmonicOscillator => p.to_vec(),
            Model::FreeParticle { .. } => p.to_vec(),
            Model::HenonHeilesPerturbed => vec![
                p[0].clone() + p[1].clone() * p[0].cos() * 0.01,
                p[1].clone() + p[0].sin() * 0.01,
            ],
            Model::PlanarPitchfork => {
                vec![p[0].clone() * 2.0 + p[0].sq() * 0.3 + p[0].sin() * 0.01]
            }
            Model::Cyclic4d { .. } => vec![
                p[1].clone() + p[0].clone() * 2.0 + p[0].sq() * 0.3,
                p[0].clone() + p[1].sq() * 0.3,
            ],
            Model::Transformed { base, a, a_inv } => {
                let qo = linalg::mat_vec(a_inv, q);
                let po = linalg::mat_vec(&a.transpose(), p);
                let g = base.grad_p(&qo, &po, mu)?;
                linalg::mat_vec(a, &g)
            }
            Model::Torus { eps, kappa } => torus_parts(q, p, mu, *eps, *kappa).1,
        })
    }
}

fn hh_energy<S: Scalar>(q: &[S], p: &[S]) -> S {
    let (x1, x2) = (&q[0], &q[1]);
    (p[0].sq() + p[1].sq() + x1.sq() + x2.sq()) * 0.5
        - (x1.sq() * x2.clone() - x2.powi(3) / 3.0) * 10.0
}

/// `Dh(q)` for the torus coordinate change.
pub fn torus_dh<S: Scalar>(q: &[S], eps: f64, kappa: f64) -> [[S; 2]; 2] {
    let one = q[0].cst(1.0);
    [
        [one.clone(), -q[1].sin() * eps],
        [-q[0].sin() * kappa, one],
    ]
}

/// `p̄ = Dh(q)⁻ᵀ p`, obtained by solving `Dh(q)ᵀ p̄ = p`.
pub fn torus_pbar<S: Scalar>(q: &[S], p: &[S], eps: f64, kappa: f64) -> Result<Vec<S>> {
    let dh = torus_dh(q, eps, kappa);
    let det = dh[0][0].clone() * dh[1][1].clone() - dh[0][1].clone() * dh[1][0].clone();
    if det.real().abs() < 1e-12 {
        return Err(Error::Singular(format!(
            "torus coordinate change degenerate, det Dh = {}",
            det.real()
        )));
    }
    let dht = vec![
        vec![dh[0][0].clone(), dh[1][0].clone()],
        vec![dh[0][1].clone(), dh[1][1].clone()],
    ];
    linalg::solve(dht, p.to_vec())
}

/// `p̄` and `∇_p H = Dh⁻¹ ∇H̄(p̄)` for the torus system.
fn torus_parts<S: Scalar>(q: &[S], p: &[S], mu: &[S], eps: f64, kappa: f64) -> (Vec<S>, Vec<S>) {
    let pb = torus_pbar(q, p, eps, kappa).expect("cotangent lift is regular for |eps|, |kappa| < 1");
    let m = mu.first().cloned().unwrap_or_else(|| q[0].cst(0.0));
    let g = vec![pb[0].sq() * 3.0 + m, pb[1].clone() * 2.0];
    let dh = torus_dh(q, eps, kappa);
    let a = dh.iter().map(|r| r.to_vec()).collect();
    let w = linalg::solve(a, g).expect("cotangent lift is regular for |eps|, |kappa| < 1");
    (pb, w)
}

/// The coordinate change `h(q)` of the torus system.
pub fn torus_h(q: &[f64], eps: f64, kappa: f64) -> [f64; 2] {
    [q[0] + eps * q[1].cos(), q[1] + kappa * q[0].cos()]
}

/// A catalog Hamiltonian together with its default parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSystem {
    pub model: Model,
    pub label: String,
    /// Default `μ`, overridable per call.
    pub mu: Vec<f64>,
}

impl HamiltonianSystem {
    pub fn new(model: Model, label: impl Into<String>, mu: Vec<f64>) -> Self {
        HamiltonianSystem {
            model,
            label: label.into(),
            mu,
        }
    }

    /// `T(p; μ)` for separable systems, normalised so that `T(0) = 0`.
    pub fn kinetic<S: Scalar>(&self, p: &[S], mu: &[S]) -> Option<S> {
        self.model.kinetic(p, mu)
    }

    /// `V(q; μ)` for separable systems.
    pub fn potential<S: Scalar>(&self, q: &[S], mu: &[S]) -> Option<S> {
        self.model.potential(q, mu)
    }

    /// Energy at a real phase point with the default parameters.
    pub fn energy_at(&self, z: &[f64]) -> f64 {
        let n = self.half_dim();
        self.energy(&z[..n], &z[n..], &self.mu)
    }
}

impl Hamiltonian for HamiltonianSystem {
    fn half_dim(&self) -> usize {
        self.model.half_dim()
    }

    fn energy<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> S {
        self.model.energy(q, p, mu)
    }

    fn is_separable(&self) -> bool {
        self.model.is_separable()
    }

    fn grad_q<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> Vec<S> {
        self.model
            .grad_q(q, p, mu)
            .unwrap_or_else(|| jet_grad_q(self, q, p, mu))
    }

    fn grad_p<S: Scalar>(&self, q: &[S], p: &[S], mu: &[S]) -> Vec<S> {
        self.model
            .grad_p(q, p, mu)
            .unwrap_or_else(|| jet_grad_p(self, q, p, mu))
    }
}

/// Explicit symplectic maps given in closed form.
#[derive(Clone, Debug, PartialEq)]
pub enum MapKind {
    /// `(X, Y) = (3y² + μ − x, (x − 3y² − μ)/2 − y)`, generated by
    /// `S_μ(y, Y) = y³ + μy + (Y + y)²`.
    Example5Fold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitSymplecticMap {
    pub kind: MapKind,
    pub label: String,
    pub mu: Vec<f64>,
}

impl ExplicitSymplecticMap {
    pub fn example5_fold(mu: f64) -> Self {
        ExplicitSymplecticMap {
            kind: MapKind::Example5Fold,
            label: "example5_fold".into(),
            mu: vec![mu],
        }
    }

    pub fn half_dim(&self) -> usize {
        1
    }

    pub fn apply<S: Scalar>(&self, z: &[S], mu: &[S]) -> Vec<S> {
        match self.kind {
            MapKind::Example5Fold => {
                let (x, y) = (&z[0], &z[1]);
                let m = mu.first().cloned().unwrap_or_else(|| x.cst(0.0));
                let big_x = y.sq() * 3.0 + m - x.clone();
                let big_y = -big_x.clone() / 2.0 - y.clone();
                vec![big_x, big_y]
            }
        }
    }
}

/// Result of [`catalog_build`].
#[derive(Clone, Debug, PartialEq)]
pub enum CatalogEntry {
    System(HamiltonianSystem),
    Map(ExplicitSymplecticMap),
}

impl CatalogEntry {
    pub fn system(self) -> Result<HamiltonianSystem> {
        match self {
            CatalogEntry::System(s) => Ok(s),
            CatalogEntry::Map(m) => Err(Error::InvalidInput(format!(
                "'{}' is an explicit map, not a Hamiltonian system",
                m.label
            ))),
        }
    }

    pub fn map(self) -> Result<ExplicitSymplecticMap> {
        match self {
            CatalogEntry::Map(m) => Ok(m),
            CatalogEntry::System(s) => Err(Error::InvalidInput(format!(
                "'{}' is a Hamiltonian system, not an explicit map",
                s.label
            ))),
        }
    }
}

/// Names accepted by [`catalog_build`].
pub const CATALOG_NAMES: &[&str] = &[
    "bratu",
    "henon_heiles",
    "henon_heiles_perturbed",
    "planar_pitchfork",
    "cyclic_4d",
    "cyclic_4d_symbroken",
    "example5_fold",
    "torus_integrable",
    "linear_transformed",
    "harmonic_oscillator",
    "free_particle",
];

/// The matrix used for the linearly transformed cyclic example.
pub fn cyclic_transform_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 3.0, 1.0])
}

/// Build a catalog entry.  Recognised parameters: `C` (bratu, required),
/// `mu`, `eps`, `kappa`, `n` (free particle).
pub fn catalog_build(name: &str, params: &BTreeMap<String, f64>) -> Result<CatalogEntry> {
    let mu = params.get("mu").copied().unwrap_or(0.0);
    let sys = |m: Model, mu: Vec<f64>| CatalogEntry::System(HamiltonianSystem::new(m, name, mu));
    Ok(match name {
        "bratu" => {
            let c = params
                .get("C")
                .copied()
                .ok_or_else(|| Error::MissingParameter("C".into()))?;
            sys(Model::Bratu, vec![c])
        }
        "henon_heiles" => sys(Model::HenonHeiles, vec![]),
        "henon_heiles_perturbed" => sys(Model::HenonHeilesPerturbed, vec![]),
        "planar_pitchfork" => sys(Model::PlanarPitchfork, vec![mu]),
        "cyclic_4d" => sys(Model::Cyclic4d { symbroken: false }, vec![mu]),
        "cyclic_4d_symbroken" => sys(Model::Cyclic4d { symbroken: true }, vec![mu]),
        "example5_fold" => CatalogEntry::Map(ExplicitSymplecticMap::example5_fold(mu)),
        "torus_integrable" => {
            let eps = params.get("eps").copied().unwrap_or(0.1);
            let kappa = params.get("kappa").copied().unwrap_or(0.1);
            CatalogEntry::System(build_torus_system(eps, kappa, mu)?)
        }
        "linear_transformed" => {
            let base = HamiltonianSystem::new(Model::Cyclic4d { symbroken: false }, "cyclic_4d", vec![mu]);
            let (s, _) = apply_linear_transform(
                &base,
                &SeparatedBvp::cyclic_4d(),
                &cyclic_transform_matrix(),
            )?;
            CatalogEntry::System(HamiltonianSystem { label: name.into(), ..s })
        }
        "harmonic_oscillator" => sys(Model::HarmonicOscillator, vec![]),
        "free_particle" => {
            let n = params.get("n").copied().unwrap_or(1.0);
            if n < 1.0 || n.fract() != 0.0 {
                return Err(Error::InvalidInput(format!("free particle dimension {n}")));
            }
            sys(Model::FreeParticle { n: n as usize }, vec![])
        }
        _ => return Err(Error::UnknownName(name.into())),
    })
}

/// The integrable torus system for `ε, κ ∈ (−1, 1) \ {0}`.
pub fn build_torus_system(eps: f64, kappa: f64, mu: f64) -> Result<HamiltonianSystem> {
    let ok = |v: f64| v.abs() < 1.0 && v != 0.0;
    if !ok(eps) || !ok(kappa) {
        return Err(Error::InvalidInput(format!(
            "eps and kappa must lie in (-1, 1) without 0, got {eps}, {kappa}"
        )));
    }
    Ok(HamiltonianSystem::new(
        Model::Torus { eps, kappa },
        "torus_integrable",
        vec![mu],
    ))
}

/// Transform a system and its boundary problem by `Ψ(q, p) = (Aq, A⁻ᵀp)`.
///
/// Only coordinate (Dirichlet) sections transform to sections of the same
/// type; other section types are rejected.
pub fn apply_linear_transform(
    system: &HamiltonianSystem,
    bvp: &SeparatedBvp,
    a: &DMatrix<f64>,
) -> Result<(HamiltonianSystem, SeparatedBvp)> {
    let n = system.half_dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "transform must be {n}x{n}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let a_inv = a
        .clone()
        .try_inverse()
        .filter(|_| a.determinant().abs() > 1e-14 * a.amax().powi(n as i32).max(1e-300))
        .ok_or_else(|| Error::Singular("linear transform is not invertible".into()))?;
    let model = Model::Transformed {
        base: Box::new(system.model.clone()),
        a: a.clone(),
        a_inv,
    };
    let sys = HamiltonianSystem::new(model, format!("{} (transformed)", system.label), system.mu.clone());
    let pin = |secs: &[Section]| -> Result<Vec<Section>> {
        let vals = secs
            .iter()
            .map(|s| match s {
                Section::Dirichlet(v) => Ok(*v),
                _ => Err(Error::InvalidInput(
                    "linear transforms support coordinate sections only".into(),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(linalg::mat_vec(a, &vals).into_iter().map(Section::Dirichlet).collect())
    };
    let new_bvp = SeparatedBvp {
        start: pin(&bvp.start)?,
        end: pin(&bvp.end)?,
        tau: bvp.tau,
    };
    Ok((sys, new_bvp))
}

/// One boundary condition on a single conjugate pair `(q_i, p_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Section {
    /// `q_i = v`; the free variable is `p_i`.
    Dirichlet(f64),
    /// `p_i = v`; the free variable is `q_i`.
    Neumann(f64),
    /// `α q_i + β p_i = γ`; the free variable moves along the line.
    Robin { alpha: f64, beta: f64, gamma: f64 },
}

impl Section {
    /// Point on the start section for free coordinate `y`.
    pub fn point<S: Scalar>(&self, y: &S) -> (S, S) {
        match *self {
            Section::Dirichlet(v) => (y.cst(v), y.clone()),
            Section::Neumann(v) => (y.clone(), y.cst(v)),
            Section::Robin { alpha, beta, gamma } => {
                let nn = alpha * alpha + beta * beta;
                let (bq, bp) = (gamma * alpha / nn, gamma * beta / nn);
                let s = nn.sqrt();
                (y.clone() * (-beta / s) + bq, y.clone() * (alpha / s) + bp)
            }
        }
    }

    /// Residual of the end section at `(Q_i, P_i)`.
    pub fn residual<S: Scalar>(&self, q: &S, p: &S) -> S {
        match *self {
            Section::Dirichlet(v) => q.clone() - v,
            Section::Neumann(v) => p.clone() - v,
            Section::Robin { alpha, beta, gamma } => q.clone() * alpha + p.clone() * beta - gamma,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Section::Dirichlet(v) | Section::Neumann(v) => v,
            Section::Robin { gamma, .. } => gamma,
        }
    }

    pub fn with_value(&self, v: f64) -> Section {
        match *self {
            Section::Dirichlet(_) => Section::Dirichlet(v),
            Section::Neumann(_) => Section::Neumann(v),
            Section::Robin { alpha, beta, .. } => Section::Robin { alpha, beta, gamma: v },
        }
    }
}

/// Separated boundary value problem: start on one product of sections,
/// end after time `tau` on another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedBvp {
    pub start: Vec<Section>,
    pub end: Vec<Section>,
    pub tau: f64,
}

impl SeparatedBvp {
    /// `q(0) = x*`, `q(τ) = X*`.
    pub fn dirichlet(x_star: &[f64], x_end: &[f64], tau: f64) -> Self {
        SeparatedBvp {
            start: x_star.iter().map(|&v| Section::Dirichlet(v)).collect(),
            end: x_end.iter().map(|&v| Section::Dirichlet(v)).collect(),
            tau,
        }
    }

    /// `p(0) = p*`, `p(τ) = P*`.
    pub fn neumann(p_star: &[f64], p_end: &[f64], tau: f64) -> Self {
        SeparatedBvp {
            start: p_star.iter().map(|&v| Section::Neumann(v)).collect(),
            end: p_end.iter().map(|&v| Section::Neumann(v)).collect(),
            tau,
        }
    }

    pub fn half_dim(&self) -> usize {
        self.start.len()
    }

    /// Start point `z₀ = (q, p)` for free variables `y`.
    pub fn start_point<S: Scalar>(&self, y: &[S]) -> Vec<S> {
        let n = self.start.len();
        let mut q = Vec::with_capacity(2 * n);
        let mut p = Vec::with_capacity(n);
        for (s, yi) in self.start.iter().zip(y) {
            let (a, b) = s.point(yi);
            q.push(a);
            p.push(b);
        }
        q.extend(p);
        q
    }

    /// End-section residual at `Z = (Q, P)`.
    pub fn end_residual<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        let n = self.end.len();
        self.end
            .iter()
            .enumerate()
            .map(|(i, s)| s.residual(&z[i], &z[n + i]))
            .collect()
    }

    /// Bratu: `q(0) = q(1) = 0`.
    pub fn bratu() -> Self {
        Self::dirichlet(&[0.0], &[0.0], 1.0)
    }

    /// Planar pitchfork: `q(0) = q(1.7) = 0.2`.
    pub fn planar_pitchfork() -> Self {
        Self::dirichlet(&[0.2], &[0.2], 1.7)
    }

    /// Cyclic example: `q(0) = q(5) = (0.2, 0.1)`.
    pub fn cyclic_4d() -> Self {
        Self::dirichlet(&[0.2, 0.1], &[0.2, 0.1], 5.0)
    }

    /// Torus example: `p(0) = P(2π/3) = (1 − 3κ/2, 3/2)`.
    pub fn torus(kappa: f64) -> Self {
        let p = [1.0 - 1.5 * kappa, 1.5];
        Self::neumann(&p, &p, 2.0 * PI / 3.0)
    }

    /// Hénon–Heiles with `q(0) = (0, x₂)`, `q(1) = X*`.
    pub fn henon_heiles(x2: f64, x_end: [f64; 2]) -> Self {
        Self::dirichlet(&[0.0, x2], &x_end, 1.0)
    }

    /// Example 5: `x = 0`, `X = 0`.
    pub fn example5() -> Self {
        Self::dirichlet(&[0.0], &[0.0], 1.0)
    }
}

/// Closed-form constraint surfaces `f(q) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceKind {
    /// `q₃ − c`.
    Plane { c: f64 },
    /// `|q|² − 1` in ℝ³.
    Sphere,
    /// `0.98q₁² + 0.97q₂² + 1.02q₃² − 1/π²`.
    Ellipsoid,
    /// The ellipsoid plus `0.1(−q₁³ − 1.2q₂³ + 0.7q₃³)`.
    EllipsoidPerturbed,
    /// `exp(−q₁² − 0.9q₂²) + 0.01q₁³ + 0.011q₂³ − q₃`.
    GaussianGraphPerturbed,
    /// `0.98q₁² + 0.95q₂² + 1.05q₃² + 1.03q₄² − 1/π² + 0.5(q₁³ + 1.1q₂³ + 0.9q₃³ + 1.05q₄³)`.
    Ellipsoid3Perturbed,
}

const ELL: [f64; 3] = [0.98, 0.97, 1.02];
const ELL_CUBIC: [f64; 3] = [-0.1, -0.12, 0.07];
const ELL3: [f64; 4] = [0.98, 0.95, 1.05, 1.03];
const ELL3_CUBIC: [f64; 4] = [0.5, 0.55, 0.45, 0.525];

#[derive(Clone, Debug, PartialEq)]
pub struct Hypersurface {
    pub kind: SurfaceKind,
    pub label: String,
    /// Reference start point, where the catalog defines one.
    pub q_star: Option<Vec<f64>>,
}

pub const SURFACE_NAMES: &[&str] = &[
    "plane",
    "sphere",
    "ellipsoid",
    "ellipsoid_perturbed",
    "gaussian_graph_perturbed",
    "ellipsoid3_perturbed",
];

/// Look up a catalog surface.
pub fn hypersurface_catalog(name: &str) -> Result<Hypersurface> {
    let (kind, q_star) = match name {
        "plane" => (SurfaceKind::Plane { c: 0.0 }, Some(vec![0.0, 0.0, 0.0])),
        "sphere" => (SurfaceKind::Sphere, Some(vec![0.0, 0.0, 1.0])),
        "ellipsoid" => (
            SurfaceKind::Ellipsoid,
            Some(vec![-1.0 / (PI * ELL[0].sqrt()), 0.0, 0.0]),
        ),
        "ellipsoid_perturbed" => (SurfaceKind::EllipsoidPerturbed, Some(vec![-0.316472, 0.0, 0.0])),
        "gaussian_graph_perturbed" => {
            let h = (-1.0f64).exp() - 0.01;
            (SurfaceKind::GaussianGraphPerturbed, Some(vec![-1.0, 0.0, h]))
        }
        "ellipsoid3_perturbed" => (
            SurfaceKind::Ellipsoid3Perturbed,
            Some(vec![-0.355367, 0.0, 0.0, 0.0]),
        ),
        _ => return Err(Error::UnknownName(name.into())),
    };
    Ok(Hypersurface {
        kind,
        label: name.into(),
        q_star,
    })
}

impl Hypersurface {
    pub fn plane(c: f64) -> Self {
        Hypersurface {
            kind: SurfaceKind::Plane { c },
            label: "plane".into(),
            q_star: Some(vec![0.0, 0.0, c]),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            SurfaceKind::Ellipsoid3Perturbed => 4,
            _ => 3,
        }
    }

    /// True for surfaces written as graphs `q₃ = h(q₁, q₂)`.
    pub fn is_graph(&self) -> bool {
        matches!(self.kind, SurfaceKind::GaussianGraphPerturbed)
    }

    pub fn f<S: Scalar>(&self, q: &[S]) -> S {
        let quad = |c: &[f64]| {
            q.iter()
                .zip(c)
                .fold(q[0].cst(-1.0 / (PI * PI)), |acc, (x, &a)| acc + x.sq() * a)
        };
        let cubic = |c: &[f64]| {
            q.iter()
                .zip(c)
                .fold(q[0].cst(0.0), |acc, (x, &a)| acc + x.powi(3) * a)
        };
        match &self.kind {
            SurfaceKind::Plane { c } => q[2].clone() - *c,
            SurfaceKind::Sphere => q.iter().fold(q[0].cst(-1.0), |acc, x| acc + x.sq()),
            SurfaceKind::Ellipsoid => quad(&ELL),
            SurfaceKind::EllipsoidPerturbed => quad(&ELL) + cubic(&ELL_CUBIC),
            SurfaceKind::GaussianGraphPerturbed => {
                (-q[0].sq() - q[1].sq() * 0.9).exp() + q[0].powi(3) * 0.01
                    + q[1].powi(3) * 0.011
                    - q[2].clone()
            }
            SurfaceKind::Ellipsoid3Perturbed => quad(&ELL3) + cubic(&ELL3_CUBIC),
        }
    }

    pub fn grad<S: Scalar>(&self, q: &[S]) -> Vec<S> {
        let poly = |c2: &[f64], c3: Option<&[f64]>| -> Vec<S> {
            q.iter()
                .enumerate()
                .map(|(i, x)| {
                    let g = x.clone() * (2.0 * c2[i]);
                    match c3 {
                        Some(c3) => g + x.sq() * (3.0 * c3[i]),
                        None => g,
                    }
                })
                .collect()
        };
        match &self.kind {
            SurfaceKind::Plane { .. } => vec![q[0].cst(0.0), q[0].cst(0.0), q[0].cst(1.0)],
            SurfaceKind::Sphere => q.iter().map(|x| x.clone() * 2.0).collect(),
            SurfaceKind::Ellipsoid => poly(&ELL, None),
            SurfaceKind::EllipsoidPerturbed => poly(&ELL, Some(&ELL_CUBIC)),
            SurfaceKind::GaussianGraphPerturbed => {
                let e = (-q[0].sq() - q[1].sq() * 0.9).exp();
                vec![
                    e.clone() * q[0].clone() * (-2.0) + q[0].sq() * 0.03,
                    e * q[1].clone() * (-1.8) + q[1].sq() * 0.033,
                    q[0].cst(-1.0),
                ]
            }
            SurfaceKind::Ellipsoid3Perturbed => poly(&ELL3, Some(&ELL3_CUBIC)),
        }
    }

    pub fn hess(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let diag = |c2: &[f64], c3: Option<&[f64]>| {
            DMatrix::from_fn(n, n, |i, j| {
                if i != j {
                    0.0
                } else {
                    2.0 * c2[i] + c3.map_or(0.0, |c| 6.0 * c[i] * q[i])
                }
            })
        };
        match &self.kind {
            SurfaceKind::Plane { .. } => DMatrix::zeros(3, 3),
            SurfaceKind::Sphere => DMatrix::identity(3, 3) * 2.0,
            SurfaceKind::Ellipsoid => diag(&ELL, None),
            SurfaceKind::EllipsoidPerturbed => diag(&ELL, Some(&ELL_CUBIC)),
            SurfaceKind::GaussianGraphPerturbed => {
                let (x, y) = (q[0], q[1]);
                let e = (-x * x - 0.9 * y * y).exp();
                let hxx = e * (4.0 * x * x - 2.0) + 0.06 * x;
                let hyy = e * (3.24 * y * y - 1.8) + 0.066 * y;
                let hxy = e * 3.6 * x * y;
                DMatrix::from_row_slice(3, 3, &[hxx, hxy, 0.0, hxy, hyy, 0.0, 0.0, 0.0, 0.0])
            }
            SurfaceKind::Ellipsoid3Perturbed => diag(&ELL3, Some(&ELL3_CUBIC)),
        }
    }

    pub fn f_real(&self, q: &[f64]) -> f64 {
        self.f(q)
    }

    pub fn grad_real(&self, q: &[f64]) -> Vec<f64> {
        self.grad(q)
    }
}

/// Helper for nested-jet Hessians: Jacobian of the jet-evaluated gradient.
pub fn hess_via_jets(surface: &Hypersurface, q: &[f64]) -> DMatrix<f64> {
    let x: Vec<Jet<f64>> = crate::jets::lift_all(q);
    crate::jets::partials_matrix(&surface.grad(&x))
}
