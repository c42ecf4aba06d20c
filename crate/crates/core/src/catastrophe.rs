//! Elementary catastrophes: closed-form unfoldings, the non-gradient
//! unfoldings of the D-series and the level bifurcation sets of the
//! perturbed hyperbolic and elliptic umbilics.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{gradient, lift_all, lift_nested, Jet, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatastropheClass {
    A2,
    A3,
    A4,
    A5,
    D4Plus,
    D4Minus,
    D5,
}

impl CatastropheClass {
    pub const ALL: [CatastropheClass; 7] = [
        CatastropheClass::A2,
        CatastropheClass::A3,
        CatastropheClass::A4,
        CatastropheClass::A5,
        CatastropheClass::D4Plus,
        CatastropheClass::D4Minus,
        CatastropheClass::D5,
    ];

    /// Number of state variables.
    pub fn arity(self) -> usize {
        match self {
            CatastropheClass::A2 | CatastropheClass::A3 | CatastropheClass::A4 | CatastropheClass::A5 => 1,
            _ => 2,
        }
    }

    /// Number of unfolding parameters.
    pub fn codim(self) -> usize {
        match self {
            CatastropheClass::A2 => 1,
            CatastropheClass::A3 => 2,
            CatastropheClass::A4 | CatastropheClass::D4Plus | CatastropheClass::D4Minus => 3,
            CatastropheClass::A5 | CatastropheClass::D5 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CatastropheClass::A2 => "fold",
            CatastropheClass::A3 => "cusp",
            CatastropheClass::A4 => "swallowtail",
            CatastropheClass::A5 => "butterfly",
            CatastropheClass::D4Plus => "hyperbolic umbilic",
            CatastropheClass::D4Minus => "elliptic umbilic",
            CatastropheClass::D5 => "parabolic umbilic",
        }
    }
}

/// Miniversal unfolding `g_μ` of an elementary catastrophe.
///
/// The umbilics are written with the roles of `x` and `y` exchanged
/// against the common `x³ ± xy²` listing, e.g.
/// `y³ + x²y + μ₃(y² − x²) + μ₂y + μ₁x` for the hyperbolic umbilic, so
/// that `∇g_μ` is the `μ₄ = 0` member of [`VectorUnfolding`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unfolding {
    pub class: CatastropheClass,
    pub mu: Vec<f64>,
}

impl Unfolding {
    pub fn new(class: CatastropheClass, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != class.codim() {
            return Err(Error::InvalidInput(format!(
                "{} unfolding takes {} parameters, got {}",
                class.name(),
                class.codim(),
                mu.len()
            )));
        }
        Ok(Unfolding { class, mu })
    }

    fn check(&self, p: usize) -> Result<()> {
        if p != self.class.arity() {
            return Err(Error::InvalidInput(format!(
                "{} unfolding has arity {}, got a point of dimension {p}",
                self.class.name(),
                self.class.arity()
            )));
        }
        Ok(())
    }

    /// `g_μ` on any scalar type.
    pub fn value<S: Scalar>(&self, p: &[S]) -> S {
        let m = &self.mu;
        let x = &p[0];
        match self.class {
            CatastropheClass::A2 => x.powi(3) + x.clone() * m[0],
            CatastropheClass::A3 => x.powi(4) + x.sq() * m[1] + x.clone() * m[0],
            CatastropheClass::A4 => x.powi(5) + x.powi(3) * m[2] + x.sq() * m[1] + x.clone() * m[0],
            CatastropheClass::A5 => {
                x.powi(6) + x.powi(4) * m[3] + x.powi(3) * m[2] + x.sq() * m[1] + x.clone() * m[0]
            }
            CatastropheClass::D4Plus => {
                let y = &p[1];
                y.powi(3) + x.sq() * y.clone() + (y.sq() - x.sq()) * m[2] + y.clone() * m[1] + x.clone() * m[0]
            }
            CatastropheClass::D4Minus => {
                let y = &p[1];
                y.powi(3) - x.sq() * y.clone() + (x.sq() + y.sq()) * m[2] + y.clone() * m[1] + x.clone() * m[0]
            }
            CatastropheClass::D5 => {
                let y = &p[1];
                x.sq() * y.clone() + y.powi(4) + x.sq() * m[3] + y.sq() * m[2] + y.clone() * m[1] + x.clone() * m[0]
            }
        }
    }

    pub fn grad(&self, p: &[f64]) -> Vec<f64> {
        let m = &self.mu;
        let x = p[0];
        match self.class {
            CatastropheClass::A2 => vec![3.0 * x * x + m[0]],
            CatastropheClass::A3 => vec![4.0 * x.powi(3) + 2.0 * m[1] * x + m[0]],
            CatastropheClass::A4 => vec![5.0 * x.powi(4) + 3.0 * m[2] * x * x + 2.0 * m[1] * x + m[0]],
            CatastropheClass::A5 => vec![
                6.0 * x.powi(5) + 4.0 * m[3] * x.powi(3) + 3.0 * m[2] * x * x + 2.0 * m[1] * x + m[0],
            ],
            CatastropheClass::D4Plus => {
                let y = p[1];
                vec![2.0 * x * y - 2.0 * m[2] * x + m[0], x * x + 3.0 * y * y + 2.0 * m[2] * y + m[1]]
            }
            CatastropheClass::D4Minus => {
                let y = p[1];
                vec![-2.0 * x * y + 2.0 * m[2] * x + m[0], 3.0 * y * y - x * x + 2.0 * m[2] * y + m[1]]
            }
            CatastropheClass::D5 => {
                let y = p[1];
                vec![2.0 * x * y + 2.0 * m[3] * x + m[0], x * x + 4.0 * y.powi(3) + 2.0 * m[2] * y + m[1]]
            }
        }
    }

    pub fn hess(&self, p: &[f64]) -> DMatrix<f64> {
        let m = &self.mu;
        let x = p[0];
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let two = |a: f64, b: f64, d: f64| DMatrix::from_row_slice(2, 2, &[a, b, b, d]);
        match self.class {
            CatastropheClass::A2 => one(6.0 * x),
            CatastropheClass::A3 => one(12.0 * x * x + 2.0 * m[1]),
            CatastropheClass::A4 => one(20.0 * x.powi(3) + 6.0 * m[2] * x + 2.0 * m[1]),
            CatastropheClass::A5 => one(30.0 * x.powi(4) + 12.0 * m[3] * x * x + 6.0 * m[2] * x + 2.0 * m[1]),
            CatastropheClass::D4Plus => two(2.0 * p[1] - 2.0 * m[2], 2.0 * x, 6.0 * p[1] + 2.0 * m[2]),
            CatastropheClass::D4Minus => two(-2.0 * p[1] + 2.0 * m[2], -2.0 * x, 6.0 * p[1] + 2.0 * m[2]),
            CatastropheClass::D5 => two(2.0 * p[1] + 2.0 * m[3], 2.0 * x, 12.0 * p[1] * p[1] + 2.0 * m[2]),
        }
    }
}

/// Value, gradient and Hessian of an unfolding at a point.
pub fn unfolding_eval(class: CatastropheClass, mu: &[f64], point: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    let u = Unfolding::new(class, mu.to_vec())?;
    u.check(point.len())?;
    Ok((u.value(point), u.grad(point), u.hess(point)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum D4Kind {
    Plus,
    Minus,
}

impl D4Kind {
    pub fn sign(self) -> f64 {
        match self {
            D4Kind::Plus => 1.0,
            D4Kind::Minus => -1.0,
        }
    }

    pub fn class(self) -> CatastropheClass {
        match self {
            D4Kind::Plus => CatastropheClass::D4Plus,
            D4Kind::Minus => CatastropheClass::D4Minus,
        }
    }
}

/// Unfolding of `∇g` for the D-series germ of order `k + 2` in the module
/// of pairs of power series, including the non-gradient direction
/// `μ₄·(y, 0)`.
///
/// For `k = 2` the basis matches the gradients of the umbilic
/// [`Unfolding`]s: `f = ∇g_{μ₁,μ₂,μ₃} + μ₄(y, 0)`.  For `k > 2` the terms
/// are `∇(x²y ± y^{k+1}) + μ₁(1,0) + μ₂(0,1) + μ₃(x,0) + μ₄(y,0)
/// + Σ_j μ_{4+j}(0, y^j)`, `j = 1..k−2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorUnfolding {
    pub kind: D4Kind,
    pub k: usize,
    pub mu: Vec<f64>,
}

impl VectorUnfolding {
    pub fn new(kind: D4Kind, k: usize, mu: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("D-series order needs k >= 2, got {k}")));
        }
        if mu.len() != k + 2 {
            return Err(Error::InvalidInput(format!("expected {} parameters, got {}", k + 2, mu.len())));
        }
        Ok(VectorUnfolding { kind, k, mu })
    }

    /// The `k = 2` family with parameters `(μ₁, μ₂, μ₃, μ₄)`.
    pub fn d4(kind: D4Kind, mu: [f64; 4]) -> Self {
        VectorUnfolding { kind, k: 2, mu: mu.to_vec() }
    }

    pub fn eval<S: Scalar>(&self, p: &[S]) -> [S; 2] {
        let (x, y) = (&p[0], &p[1]);
        let m = &self.mu;
        let s = self.kind.sign();
        if self.k == 2 {
            // ∇(y³ ± x²y) with μ₃-term 2μ₃(∓x, y).
            let f1 = x.clone() * y.clone() * (2.0 * s) - x.clone() * (2.0 * s * m[2]) + y.clone() * m[3] + m[0];
            let f2 = y.sq() * 3.0 + x.sq() * s + y.clone() * (2.0 * m[2]) + m[1];
            return [f1, f2];
        }
        let k = self.k as i32;
        let f1 = x.clone() * y.clone() * 2.0 + x.clone() * m[2] + y.clone() * m[3] + m[0];
        let mut f2 = x.sq() + y.powi(k) * (s * (k + 1) as f64) + m[1];
        for j in 1..=self.k - 2 {
            f2 = f2 + y.powi(j as i32) * m[3 + j];
        }
        [f1, f2]
    }

    /// Potential whose gradient is the `μ₄ = 0` part of the unfolding.
    pub fn potential<S: Scalar>(&self, p: &[S]) -> S {
        let (x, y) = (&p[0], &p[1]);
        let m = &self.mu;
        let s = self.kind.sign();
        if self.k == 2 {
            let u = Unfolding {
                class: self.kind.class(),
                mu: m[..3].to_vec(),
            };
            return u.value(p);
        }
        let k = self.k as i32;
        let mut g = x.sq() * y.clone() + y.powi(k + 1) * s + x.clone() * m[0] + y.clone() * m[1] + x.sq() * (m[2] / 2.0);
        for j in 1..=self.k - 2 {
            g = g + y.powi(j as i32 + 1) * (m[3 + j] / (j + 1) as f64);
        }
        g
    }

    /// `D f_μ` on any scalar type, through one more level of jets.
    pub fn jac_generic<S: Scalar>(&self, p: &[S]) -> [[S; 2]; 2] {
        let f = self.eval(&lift_nested(p));
        let row = |j: &Jet<S>| [j.partials[0].clone(), j.partials[1].clone()];
        [row(&f[0]), row(&f[1])]
    }

    pub fn jac(&self, p: [f64; 2]) -> DMatrix<f64> {
        let j = self.jac_generic(&p);
        DMatrix::from_row_slice(2, 2, &[j[0][0], j[0][1], j[1][0], j[1][1]])
    }

    pub fn det(&self, p: [f64; 2]) -> f64 {
        let j = self.jac_generic(&p);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    pub fn det_grad(&self, p: [f64; 2]) -> [f64; 2] {
        let g = gradient(&p, |q: &[Jet<f64>]| {
            let j = self.jac_generic(q);
            j[0][0].clone() * j[1][1].clone() - j[0][1].clone() * j[1][0].clone()
        });
        [g[0], g[1]]
    }

    /// `(μ₁, μ₂)` making `(x, y)` a zero of `f_μ`; the family is affine in
    /// both.
    pub fn solve_affine(&self, p: [f64; 2]) -> [f64; 2] {
        let mut base = self.clone();
        base.mu[0] = 0.0;
        base.mu[1] = 0.0;
        let f = base.eval(&p);
        [-f[0], -f[1]]
    }
}

/// `det D f_μ` as printed for the perturbed umbilics:
/// `−4(x + μ₄/4)² + 12(y − μ₃/3)² + μ₄²/4 − (16/3)μ₃²` (hyperbolic) and
/// `−4(x − μ₄/4)² − 12(y − μ₃/3)² + (16/3)μ₃² + μ₄²/4` (elliptic).
pub fn d4_det_formula(kind: D4Kind, x: f64, y: f64, mu3: f64, mu4: f64) -> f64 {
    match kind {
        D4Kind::Plus => {
            -4.0 * (x + mu4 / 4.0).powi(2) + 12.0 * (y - mu3 / 3.0).powi(2) + mu4 * mu4 / 4.0
                - 16.0 / 3.0 * mu3 * mu3
        }
        D4Kind::Minus => {
            -4.0 * (x - mu4 / 4.0).powi(2) - 12.0 * (y - mu3 / 3.0).powi(2)
                + 16.0 / 3.0 * mu3 * mu3
                + mu4 * mu4 / 4.0
        }
    }
}

/// The zero set of `det D f_μ` on a slice as a conic
/// `a(x − x_c)² + b(y − y_c)² = c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conic {
    pub centre: [f64; 2],
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

pub fn d4_conic(kind: D4Kind, mu3: f64, mu4: f64) -> Conic {
    match kind {
        D4Kind::Plus => Conic {
            centre: [-mu4 / 4.0, mu3 / 3.0],
            a: -4.0,
            b: 12.0,
            c: 16.0 / 3.0 * mu3 * mu3 - mu4 * mu4 / 4.0,
        },
        D4Kind::Minus => Conic {
            centre: [mu4 / 4.0, mu3 / 3.0],
            a: 4.0,
            b: 12.0,
            c: 16.0 / 3.0 * mu3 * mu3 + mu4 * mu4 / 4.0,
        },
    }
}

/// One smooth piece of a conic, `t ↦ (x, y)` on `[t0, t1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConicBranch {
    Ellipse { centre: [f64; 2], rx: f64, ry: f64 },
    /// `x = x_c + rx·sinh t`, `y = y_c ± ry·cosh t` (`vertical`) or the
    /// same with the roles of the axes exchanged.
    Hyperbola { centre: [f64; 2], rx: f64, ry: f64, sign: f64, vertical: bool, t_max: f64 },
    Line { centre: [f64; 2], dir: [f64; 2], half: f64 },
    Point([f64; 2]),
}

impl ConicBranch {
    pub fn range(&self) -> (f64, f64) {
        match *self {
            ConicBranch::Ellipse { .. } => (0.0, 2.0 * PI),
            ConicBranch::Hyperbola { t_max, .. } => (-t_max, t_max),
            ConicBranch::Line { half, .. } => (-half, half),
            ConicBranch::Point(_) => (0.0, 0.0),
        }
    }

    pub fn closed(&self) -> bool {
        matches!(self, ConicBranch::Ellipse { .. })
    }

    pub fn at(&self, t: f64) -> [f64; 2] {
        match *self {
            ConicBranch::Ellipse { centre, rx, ry } => [centre[0] + rx * t.cos(), centre[1] + ry * t.sin()],
            ConicBranch::Hyperbola { centre, rx, ry, sign, vertical, .. } => {
                if vertical {
                    [centre[0] + rx * t.sinh(), centre[1] + sign * ry * t.cosh()]
                } else {
                    [centre[0] + sign * rx * t.cosh(), centre[1] + ry * t.sinh()]
                }
            }
            ConicBranch::Line { centre, dir, .. } => [centre[0] + t * dir[0], centre[1] + t * dir[1]],
            ConicBranch::Point(p) => p,
        }
    }
}

impl Conic {
    /// Branches clipped to `|x − x_c|, |y − y_c| ≲ radius`.
    pub fn branches(&self, radius: f64) -> Vec<ConicBranch> {
        let Conic { centre, a, b, c } = *self;
        if a > 0.0 && b > 0.0 {
            return if c > 0.0 {
                vec![ConicBranch::Ellipse {
                    centre,
                    rx: (c / a).sqrt(),
                    ry: (c / b).sqrt(),
                }]
            } else if c == 0.0 {
                vec![ConicBranch::Point(centre)]
            } else {
                Vec::new()
            };
        }
        // a < 0 < b
        let (aa, bb) = (-a, b);
        if c == 0.0 {
            let slope = (aa / bb).sqrt();
            let n = (1.0 + slope * slope).sqrt();
            return [1.0, -1.0]
                .iter()
                .map(|&s| ConicBranch::Line {
                    centre,
                    dir: [1.0 / n, s * slope / n],
                    half: radius,
                })
                .collect();
        }
        let vertical = c > 0.0;
        let (rx, ry) = ((c.abs() / aa).sqrt(), (c.abs() / bb).sqrt());
        let sweep = if vertical { rx } else { ry };
        let t_max = (radius / sweep).asinh();
        [1.0, -1.0]
            .iter()
            .map(|&sign| ConicBranch::Hyperbola {
                centre,
                rx,
                ry,
                sign,
                vertical,
                t_max,
            })
            .collect()
    }
}

/// A point of a D₄ level bifurcation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct D4Sample {
    pub x: f64,
    pub y: f64,
    /// `(μ₁, μ₂, μ₃)`.
    pub mu: [f64; 3],
    pub det: f64,
    /// `‖D f_μ‖_F`.
    pub jac_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct D4Slice {
    pub mu3: f64,
    pub branches: Vec<Vec<D4Sample>>,
    pub cusps: Vec<D4Sample>,
}

/// Sampling of a D₄ level set: `slices` values of `μ₃` over `mu3`, each
/// conic branch sampled at `samples` points within `radius` of its centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct D4Grid {
    pub mu3: (f64, f64),
    pub slices: usize,
    pub samples: usize,
    pub radius: f64,
}

impl Default for D4Grid {
    fn default() -> Self {
        D4Grid {
            mu3: (-0.15, 0.15),
            slices: 61,
            samples: 400,
            radius: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct D4LevelSet {
    pub kind: D4Kind,
    pub mu4: f64,
    pub grid: D4Grid,
    pub slices: Vec<D4Slice>,
}

impl D4LevelSet {
    pub fn samples(&self) -> impl Iterator<Item = &D4Sample> {
        self.slices.iter().flat_map(|s| s.branches.iter().flatten())
    }

    /// The sample with the smallest `‖D f_μ‖_F`.
    pub fn most_degenerate(&self) -> Option<&D4Sample> {
        self.samples().min_by(|a, b| a.jac_norm.total_cmp(&b.jac_norm))
    }

    pub fn cusps(&self) -> impl Iterator<Item = &D4Sample> {
        self.slices.iter().flat_map(|s| s.cusps.iter())
    }
}

fn kernel(j: &DMatrix<f64>) -> [f64; 2] {
    let svd = j.clone().svd(false, true);
    let i = svd.singular_values.imin();
    let v = svd.v_t.unwrap();
    [v[(i, 0)], v[(i, 1)]]
}

fn sample(f: &VectorUnfolding, p: [f64; 2]) -> D4Sample {
    let j = f.jac(p);
    let mu12 = f.solve_affine(p);
    D4Sample {
        x: p[0],
        y: p[1],
        mu: [mu12[0], mu12[1], f.mu[2]],
        det: j.determinant(),
        jac_norm: j.norm(),
    }
}

/// `⟨k, ∇ det⟩` with the kernel `k` oriented along `reference`.
fn cusp_function(f: &VectorUnfolding, p: [f64; 2], reference: [f64; 2]) -> (f64, [f64; 2]) {
    let mut k = kernel(&f.jac(p));
    if k[0] * reference[0] + k[1] * reference[1] < 0.0 {
        k = [-k[0], -k[1]];
    }
    let g = f.det_grad(p);
    (k[0] * g[0] + k[1] * g[1], k)
}

/// Points on a branch where the kernel of `D f_μ` is tangent to the zero
/// curve of the determinant.
fn branch_cusps(f: &VectorUnfolding, branch: &ConicBranch, samples: usize) -> Vec<[f64; 2]> {
    if matches!(branch, ConicBranch::Point(_)) {
        return Vec::new();
    }
    let (t0, t1) = branch.range();
    let ts: Vec<f64> = (0..=samples).map(|i| t0 + (t1 - t0) * i as f64 / samples as f64).collect();
    let mut k = kernel(&f.jac(branch.at(ts[0])));
    let mut vals = Vec::with_capacity(ts.len());
    let mut kernels = Vec::with_capacity(ts.len());
    for &t in &ts {
        let (c, kk) = cusp_function(f, branch.at(t), k);
        k = kk;
        vals.push(c);
        kernels.push(kk);
    }
    let mut out = Vec::new();
    for i in 0..samples {
        if (vals[i] < 0.0) == (vals[i + 1] < 0.0) {
            continue;
        }
        let (mut a, mut b) = (ts[i], ts[i + 1]);
        let ca = vals[i];
        let ka = kernels[i];
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            let (cm, _) = cusp_function(f, branch.at(m), ka);
            if (cm < 0.0) == (ca < 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        out.push(branch.at(0.5 * (a + b)));
    }
    out
}

fn d4_slice(kind: D4Kind, mu3: f64, mu4: f64, grid: &D4Grid) -> D4Slice {
    let f = VectorUnfolding::d4(kind, [0.0, 0.0, mu3, mu4]);
    let conic = d4_conic(kind, mu3, mu4);
    let mut branches = Vec::new();
    let mut cusps = Vec::new();
    for br in conic.branches(grid.radius) {
        let (t0, t1) = br.range();
        let n = if matches!(br, ConicBranch::Point(_)) { 1 } else { grid.samples };
        let pts: Vec<D4Sample> = (0..n)
            .map(|i| {
                let t = if n == 1 { t0 } else { t0 + (t1 - t0) * i as f64 / (n - 1) as f64 };
                sample(&f, br.at(t))
            })
            .collect();
        branches.push(pts);
        cusps.extend(branch_cusps(&f, &br, grid.samples).into_iter().map(|p| sample(&f, p)));
    }
    D4Slice { mu3, branches, cusps }
}

/// Level bifurcation set of the D₄± vector unfolding at fixed `μ₄`, swept
/// in `μ₃`: on each slice the zero conic of `det D f_μ` is sampled in
/// closed form, `(μ₁, μ₂)` are recovered from `f_μ = 0` and cusp points are
/// marked where the kernel of `D f_μ` is tangent to the conic.
pub fn d4_level_set(kind: D4Kind, mu4: f64, grid: &D4Grid) -> Result<D4LevelSet> {
    if grid.samples < 32 || grid.slices < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 32 samples per branch and 2 slices, got {} and {}",
            grid.samples, grid.slices
        )));
    }
    if !(grid.mu3.0 < grid.mu3.1) || !(grid.radius > 0.0) || !mu4.is_finite() {
        return Err(Error::InvalidInput("invalid D4 sweep window".into()));
    }
    let mu3s = crate::bvp::linspace(grid.mu3.0, grid.mu3.1, grid.slices);
    let slices: Vec<D4Slice> = mu3s
        .par_iter()
        .map(|&m3| d4_slice(kind, m3, mu4, grid))
        .filter(|s| !s.branches.is_empty())
        .collect();
    Ok(D4LevelSet {
        kind,
        mu4,
        grid: grid.clone(),
        slices,
    })
}

/// A swallowtail point of the perturbed hyperbolic umbilic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwallowtailPoint {
    pub x: f64,
    pub y: f64,
    pub mu3: f64,
}

/// Closed-form swallowtail points `(x, y) = (−μ₄/4, ±√3μ₄/24)` at
/// `μ₃ = ±√3μ₄/8`; for `μ₄ = 0` the single D₄ point at the origin.
pub fn swallowtail_points(mu4: f64) -> Vec<SwallowtailPoint> {
    if mu4 == 0.0 {
        return vec![SwallowtailPoint { x: 0.0, y: 0.0, mu3: 0.0 }];
    }
    let r3 = 3f64.sqrt();
    [1.0, -1.0]
        .iter()
        .map(|&s| SwallowtailPoint {
            x: -mu4 / 4.0,
            y: s * r3 * mu4 / 24.0,
            mu3: s * r3 * mu4 / 8.0,
        })
        .collect()
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Cusp point of a slice closest to a singular point of the determinant
/// curve, with `|∇ det|` there.
fn slice_swallow_measure(mu3: f64, mu4: f64, grid: &D4Grid) -> Option<(f64, [f64; 2])> {
    let f = VectorUnfolding::d4(D4Kind::Plus, [0.0, 0.0, mu3, mu4]);
    d4_conic(D4Kind::Plus, mu3, mu4)
        .branches(grid.radius)
        .iter()
        .flat_map(|b| branch_cusps(&f, b, grid.samples))
        .map(|p| (norm(f.det_grad(p)), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Swallowtail points of the perturbed hyperbolic umbilic found from the
/// level set alone: the cusp curve is traced across slices and the points
/// where it meets the self-intersection of the fold sheet (where
/// `∇ det D f_μ` vanishes) are refined by golden-section search in `μ₃`.
pub fn traced_swallowtails(mu4: f64, grid: &D4Grid) -> Result<Vec<SwallowtailPoint>> {
    if mu4 == 0.0 {
        return Err(Error::InvalidInput("swallowtails need a nonzero perturbation".into()));
    }
    let set = d4_level_set(D4Kind::Plus, mu4, grid)?;
    let meas: Vec<(f64, f64)> = set
        .slices
        .iter()
        .filter_map(|s| slice_swallow_measure(s.mu3, mu4, grid).map(|(m, _)| (s.mu3, m)))
        .collect();
    let median = {
        let mut v: Vec<f64> = meas.iter().map(|m| m.1).collect();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(0.0)
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut out = Vec::new();
    for i in 1..meas.len().saturating_sub(1) {
        let (m0, m1, m2) = (meas[i - 1].1, meas[i].1, meas[i + 1].1);
        if !(m1 < m0 && m1 <= m2 && m1 < 0.5 * median) {
            continue;
        }
        let eval = |m3: f64| slice_swallow_measure(m3, mu4, grid).map_or(f64::INFINITY, |v| v.0);
        let (mut a, mut b) = (meas[i - 1].0, meas[i + 1].0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        while b - a > 1e-14 * (1.0 + a.abs()) {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = eval(d);
            }
        }
        let m3 = 0.5 * (a + b);
        if let Some((_, p)) = slice_swallow_measure(m3, mu4, grid) {
            out.push(SwallowtailPoint { x: p[0], y: p[1], mu3: m3 });
        }
    }
    Ok(out)
}

/// `min ‖D f_μ‖_F` over an `n × n` grid on `[−half, half]²`, with its
/// location.
pub fn min_jacobian_norm(kind: D4Kind, mu3: f64, mu4: f64, half: f64, n: usize) -> (f64, [f64; 2]) {
    let f = VectorUnfolding::d4(kind, [0.0, 0.0, mu3, mu4]);
    let xs = crate::bvp::linspace(-half, half, n);
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for &x in &xs {
        for &y in &xs {
            let v = f.jac([x, y]).norm();
            if v < best.0 {
                best = (v, [x, y]);
            }
        }
    }
    best
}

/// Jet-differentiated gradient of an unfolding, for cross-checks.
pub fn jet_grad(u: &Unfolding, p: &[f64]) -> Vec<f64> {
    u.value(&lift_all(p)).gradient()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nested_hess(u: &Unfolding, p: &[f64]) -> DMatrix<f64> {
        let n = p.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let g = gradient(&lift_all(p), |q: &[Jet<Jet<f64>>]| u.value(q));
                g[i].gradient()
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| rows[i][j])
    }

    #[test]
    fn table_examples() {
        let (_, g, _) = unfolding_eval(CatastropheClass::A2, &[0.0], &[1.0]).unwrap();
        assert_eq!(g, vec![3.0]);
        let (v, g, h) = unfolding_eval(CatastropheClass::D4Minus, &[0.0; 3], &[0.0, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(h, DMatrix::zeros(2, 2));
        assert!(unfolding_eval(CatastropheClass::A3, &[0.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(unfolding_eval(CatastropheClass::A3, &[0.0], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn closed_forms_match_jets(
            ci in 0usize..7,
            mu in proptest::collection::vec(-1.0f64..1.0, 4),
            p in proptest::collection::vec(-1.5f64..1.5, 2),
        ) {
            let class = CatastropheClass::ALL[ci];
            let u = Unfolding::new(class, mu[..class.codim()].to_vec()).unwrap();
            let p = &p[..class.arity()];
            let g = u.grad(p);
            let jg = jet_grad(&u, p);
            for (a, b) in g.iter().zip(&jg) {
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            }
            let h = u.hess(p);
            let jh = nested_hess(&u, p);
            prop_assert!((h - &jh).amax() < 1e-12 * (1.0 + jh.amax()));
        }

        #[test]
        fn vector_unfolding_is_a_gradient_without_mu4(
            k in 2usize..6,
            minus in proptest::bool::ANY,
            mu in proptest::collection::vec(-1.0f64..1.0, 8),
            p in proptest::collection::vec(-1.5f64..1.5, 2),
        ) {
            let kind = if minus { D4Kind::Minus } else { D4Kind::Plus };
            let mut m = mu[..k + 2].to_vec();
            m[3] = 0.0;
            let f = VectorUnfolding::new(kind, k, m).unwrap();
            let v = f.eval(&p);
            let g = f.potential(&lift_all(&p)).gradient();
            prop_assert!((v[0] - g[0]).abs() < 1e-14 * (1.0 + g[0].abs()));
            prop_assert!((v[1] - g[1]).abs() < 1e-14 * (1.0 + g[1].abs()));
        }

        #[test]
        fn printed_determinants(
            minus in proptest::bool::ANY,
            x in -2.0f64..2.0, y in -2.0f64..2.0, mu3 in -1.0f64..1.0, mu4 in -1.0f64..1.0,
        ) {
            let kind = if minus { D4Kind::Minus } else { D4Kind::Plus };
            let f = VectorUnfolding::d4(kind, [0.3, -0.2, mu3, mu4]);
            prop_assert!((f.det([x, y]) - d4_det_formula(kind, x, y, mu3, mu4)).abs() < 1e-12);
        }
    }

    #[test]
    fn d4plus_hessian_determinant_vs_differences() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..50 {
            let mu = vec![next(), next(), next()];
            let p = [next(), next()];
            let u = Unfolding::new(CatastropheClass::D4Plus, mu).unwrap();
            let e = 1e-5;
            let gd = |i: usize, s: f64| {
                let mut q = p;
                q[i] += s;
                u.grad(&q)
            };
            let mut h = [[0.0; 2]; 2];
            for i in 0..2 {
                let (gp, gm) = (gd(i, e), gd(i, -e));
                for j in 0..2 {
                    h[j][i] = (gp[j] - gm[j]) / (2.0 * e);
                }
            }
            let fd = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            assert!((u.hess(&p).determinant() - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn elliptic_unperturbed_degenerates_only_at_origin() {
        let f = VectorUnfolding::d4(D4Kind::Minus, [0.0; 4]);
        for (x, y) in [(0.3, 0.0), (0.0, -0.2), (0.5, 0.5)] {
            assert!((f.det([x, y]) - (-4.0 * x * x - 12.0 * y * y)).abs() < 1e-14);
        }
        assert_eq!(d4_conic(D4Kind::Minus, 0.0, 0.0).branches(1.0), vec![ConicBranch::Point([0.0, 0.0])]);
        let (m, at) = min_jacobian_norm(D4Kind::Minus, 0.0, 0.0, 2.0, 41);
        assert_eq!(m, 0.0);
        assert_eq!(at, [0.0, 0.0]);
    }

    #[test]
    fn elliptic_perturbed_has_no_corank_two() {
        // ∂f₁/∂y = −2x + μ₄ and ∂f₂/∂x = −2x cannot vanish together.
        for mu3 in [-0.7, -0.1, 0.0, 0.2, 0.9] {
            let (m, _) = min_jacobian_norm(D4Kind::Minus, mu3, 0.2, 2.0, 81);
            assert!(m > 0.0);
            assert!(m >= 0.2 / 2f64.sqrt() - 1e-12);
        }
    }

    #[test]
    fn swallowtail_arithmetic() {
        let p = swallowtail_points(0.24);
        assert_eq!(p.len(), 2);
        assert!((p[0].x + 0.06).abs() < 1e-15);
        assert!((p[0].y - 0.0173205).abs() < 1e-7);
        assert!((p[0].mu3 - 0.0519615).abs() < 1e-7);
        assert!((p[1].y + 0.0173205).abs() < 1e-7);
        assert_eq!(swallowtail_points(0.0), vec![SwallowtailPoint { x: 0.0, y: 0.0, mu3: 0.0 }]);
        for s in &p {
            assert!(d4_det_formula(D4Kind::Plus, s.x, s.y, s.mu3, 0.24).abs() < 1e-15);
        }
    }

    #[test]
    fn level_set_samples_solve_the_unfolding() {
        let set = d4_level_set(D4Kind::Plus, 0.1, &D4Grid { slices: 11, samples: 64, ..D4Grid::default() }).unwrap();
        assert_eq!(set.slices.len(), 11);
        for s in set.samples() {
            let f = VectorUnfolding::d4(D4Kind::Plus, [s.mu[0], s.mu[1], s.mu[2], 0.1]);
            let v = f.eval(&[s.x, s.y]);
            assert!(v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
            assert!(s.det.abs() < 1e-12);
        }
        assert!(d4_level_set(D4Kind::Plus, 0.1, &D4Grid { samples: 16, ..D4Grid::default() }).is_err());
    }

    #[test]
    fn hyperbolic_vertex_splits() {
        let g = D4Grid { slices: 31, samples: 201, ..D4Grid::default() };
        let flat = d4_level_set(D4Kind::Plus, 0.0, &g).unwrap();
        let v = flat.most_degenerate().unwrap();
        assert!(v.jac_norm < 1e-12);
        assert!(v.mu.iter().all(|m| m.abs() < 1e-12));
        let bent = d4_level_set(D4Kind::Plus, 0.1, &g).unwrap();
        assert!(bent.most_degenerate().unwrap().jac_norm > 0.05);
        let st = traced_swallowtails(0.1, &g).unwrap();
        assert_eq!(st.len(), 2);
    }
}
