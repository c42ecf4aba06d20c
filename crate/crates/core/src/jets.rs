//! First-order forward-mode jets.
//!
//! A [`Jet`] carries a value together with its partial derivatives with
//! respect to a fixed set of seed directions.  Jets nest: a `Jet<Jet<f64>>`
//! evaluates gradients whose entries are themselves jets, which is how
//! second derivatives are obtained where hand-coded ones are not supplied.
//!
//! All numeric code in the crate is written against the [`Scalar`] trait so
//! that it runs unchanged on plain `f64` and on jets.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Storage for partials; eight seeds cover every phase space used here.
pub type Partials<T> = SmallVec<[T; 8]>;

/// Arithmetic needed by integrators, residuals and constraint functions.
pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Innermost real value.
    fn real(&self) -> f64;
    /// Constant with the same seed layout as `self`.
    fn cst(&self, c: f64) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, a: f64) -> Self;

    fn zero_like(&self) -> Self {
        self.cst(0.0)
    }

    fn sq(&self) -> Self {
        self.clone() * self.clone()
    }

    /// Shift by `c` while keeping the derivative part: `c - self`.
    fn rsub(&self, c: f64) -> Self {
        -(self.clone() - c)
    }

    /// Replace the real value of `self` by `v`, keeping all derivative
    /// information.  Used to strip roundoff from converged iterates.
    fn with_real(&self, v: f64) -> Self {
        self.clone() + (v - self.real())
    }

    fn checked_div(&self, rhs: &Self) -> Result<Self> {
        if rhs.real() == 0.0 {
            return Err(Error::Domain("division by a jet with value 0".into()));
        }
        Ok(self.clone() / rhs.clone())
    }

    fn checked_sqrt(&self) -> Result<Self> {
        if self.real() < 0.0 {
            return Err(Error::Domain(format!(
                "sqrt of negative value {}",
                self.real()
            )));
        }
        Ok(self.sqrt())
    }
}

impl Scalar for f64 {
    #[inline]
    fn real(&self) -> f64 {
        *self
    }
    #[inline]
    fn cst(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    #[inline]
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    #[inline]
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    #[inline]
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    #[inline]
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    #[inline]
    fn powf(&self, a: f64) -> Self {
        f64::powf(*self, a)
    }
}

/// Value plus partials with respect to `partials.len()` seed directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T = f64> {
    pub value: T,
    pub partials: Partials<T>,
}

impl<T: Scalar> Jet<T> {
    /// Jet with all partials zero.
    pub fn constant(value: T, dim: usize) -> Self {
        let z = value.cst(0.0);
        Jet {
            partials: SmallVec::from_elem(z, dim),
            value,
        }
    }

    /// Jet seeded along direction `index` out of `dim`.
    pub fn variable(value: T, index: usize, dim: usize) -> Self {
        let mut j = Self::constant(value, dim);
        j.partials[index] = j.value.cst(1.0);
        j
    }

    pub fn dim(&self) -> usize {
        self.partials.len()
    }

    #[inline]
    fn check(&self, other: &Self) {
        assert_eq!(
            self.partials.len(),
            other.partials.len(),
            "jet seed dimension mismatch"
        );
    }

    /// Apply a scalar function with value `f` and derivative `df`.
    #[inline]
    fn chain(&self, f: T, df: T) -> Self {
        Jet {
            value: f,
            partials: self
                .partials
                .iter()
                .map(|d| d.clone() * df.clone())
                .collect(),
        }
    }
}

impl Jet<f64> {
    /// Real partials as a plain vector.
    pub fn gradient(&self) -> Vec<f64> {
        self.partials.to_vec()
    }
}

impl<T: Scalar> Add for Jet<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.check(&rhs);
        self.value = self.value + rhs.value;
        for (a, b) in self.partials.iter_mut().zip(rhs.partials) {
            *a = a.clone() + b;
        }
        self
    }
}

impl<T: Scalar> Sub for Jet<T> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.check(&rhs);
        self.value = self.value - rhs.value;
        for (a, b) in self.partials.iter_mut().zip(rhs.partials) {
            *a = a.clone() - b;
        }
        self
    }
}

impl<T: Scalar> Mul for Jet<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.check(&rhs);
        let partials = self
            .partials
            .iter()
            .zip(rhs.partials.iter())
            .map(|(a, b)| a.clone() * rhs.value.clone() + self.value.clone() * b.clone())
            .collect();
        Jet {
            value: self.value * rhs.value,
            partials,
        }
    }
}

impl<T: Scalar> Div for Jet<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self.check(&rhs);
        let inv = rhs.value.cst(1.0) / rhs.value.clone();
        let value = self.value.clone() * inv.clone();
        let partials = self
            .partials
            .iter()
            .zip(rhs.partials.iter())
            .map(|(a, b)| (a.clone() - value.clone() * b.clone()) * inv.clone())
            .collect();
        Jet { value, partials }
    }
}

impl<T: Scalar> Neg for Jet<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Jet {
            value: -self.value,
            partials: self.partials.into_iter().map(|a| -a).collect(),
        }
    }
}

impl<T: Scalar> Add<f64> for Jet<T> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.value = self.value + rhs;
        self
    }
}

impl<T: Scalar> Sub<f64> for Jet<T> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.value = self.value - rhs;
        self
    }
}

impl<T: Scalar> Mul<f64> for Jet<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Jet {
            value: self.value * rhs,
            partials: self.partials.into_iter().map(|a| a * rhs).collect(),
        }
    }
}

impl<T: Scalar> Div<f64> for Jet<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        Jet {
            value: self.value / rhs,
            partials: self.partials.into_iter().map(|a| a / rhs).collect(),
        }
    }
}

impl<T: Scalar> Scalar for Jet<T> {
    fn real(&self) -> f64 {
        self.value.real()
    }

    fn cst(&self, c: f64) -> Self {
        Jet::constant(self.value.cst(c), self.partials.len())
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e.clone(), e)
    }

    fn ln(&self) -> Self {
        let inv = self.value.cst(1.0) / self.value.clone();
        self.chain(self.value.ln(), inv)
    }

    fn sin(&self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    fn cos(&self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    fn sqrt(&self) -> Self {
        let s = self.value.sqrt();
        let d = s.cst(0.5) / s.clone();
        self.chain(s, d)
    }

    fn powi(&self, n: i32) -> Self {
        if n == 0 {
            return self.cst(1.0);
        }
        let d = self.value.powi(n - 1) * n as f64;
        self.chain(self.value.powi(n), d)
    }

    fn powf(&self, a: f64) -> Self {
        let d = self.value.powf(a - 1.0) * a;
        self.chain(self.value.powf(a), d)
    }
}

/// Lift a real vector to jets, seeding the `active` indices in order.
///
/// Entry `active[k]` receives the unit partial in slot `k`; all other
/// entries are constants.  The seed dimension is `active.len()`.
pub fn lift(x: &[f64], active: &[usize]) -> Result<Vec<Jet<f64>>> {
    if x.is_empty() {
        return Err(Error::InvalidInput("cannot lift an empty vector".into()));
    }
    if let Some(&bad) = active.iter().find(|&&i| i >= x.len()) {
        return Err(Error::InvalidInput(format!(
            "active index {bad} out of range for length {}",
            x.len()
        )));
    }
    let m = active.len();
    let mut out: Vec<Jet<f64>> = x.iter().map(|&v| Jet::constant(v, m)).collect();
    for (k, &i) in active.iter().enumerate() {
        out[i].partials[k] = 1.0;
    }
    Ok(out)
}

/// Lift every entry, one seed per entry.
pub fn lift_all(x: &[f64]) -> Vec<Jet<f64>> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(v, i, n))
        .collect()
}

/// Lift generic scalars into nested jets, all entries seeded.
pub fn lift_nested<S: Scalar>(x: &[S]) -> Vec<Jet<S>> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, v)| Jet::variable(v.clone(), i, n))
        .collect()
}

/// Constants in nested jets of seed dimension `dim`.
pub fn constants_nested<S: Scalar>(x: &[S], dim: usize) -> Vec<Jet<S>> {
    x.iter().map(|v| Jet::constant(v.clone(), dim)).collect()
}

/// Values of a jet vector.
pub fn values<T: Scalar>(x: &[Jet<T>]) -> Vec<T> {
    x.iter().map(|j| j.value.clone()).collect()
}

/// Matrix of partials: row i holds the partials of entry i.
pub fn partials_matrix(x: &[Jet<f64>]) -> DMatrix<f64> {
    let m = x.first().map_or(0, |j| j.dim());
    DMatrix::from_fn(x.len(), m, |i, j| x[i].partials[j])
}

/// Jacobian of a jet-evaluable map at `x`; row i, column j is d map_i / d x_j.
pub fn jacobian<F>(map: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnOnce(&[Jet<f64>]) -> Result<Vec<Jet<f64>>>,
{
    if x.is_empty() {
        return Err(Error::InvalidInput("cannot lift an empty vector".into()));
    }
    let out = map(&lift_all(x))?;
    Ok(partials_matrix(&out))
}

/// Gradient of a scalar function given on nested jets.
///
/// Works for any scalar type `S`, so gradients of jets (and hence Hessian
/// products) come out of the same code path.
pub fn gradient<S: Scalar, F>(x: &[S], f: F) -> Vec<S>
where
    F: FnOnce(&[Jet<S>]) -> Jet<S>,
{
    f(&lift_nested(x)).partials.into_vec()
}

/// Central finite-difference Jacobian, used as an oracle in tests.
pub fn fd_jacobian<F>(map: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += step;
        xm[j] -= step;
        let fp = map(&xp)?;
        let fm = map(&xm)?;
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect::<Vec<_>>(),
        );
    }
    let k = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(k, n, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_seeds_unit_rows() {
        let j = lift(&[2.0], &[0]).unwrap();
        assert_eq!(j[0].value, 2.0);
        assert_eq!(j[0].partials.as_slice(), &[1.0]);
        let j = lift(&[1.0, 2.0], &[1]).unwrap();
        assert_eq!(j[0].partials.as_slice(), &[0.0]);
        assert_eq!(j[1].partials.as_slice(), &[1.0]);
        assert!(lift(&[], &[]).is_err());
        assert!(lift(&[1.0], &[3]).is_err());
    }

    #[test]
    fn elementary_functions_at_zero() {
        let x = Jet::variable(0.0, 0, 1);
        let e = x.exp();
        assert_eq!((e.value, e.partials[0]), (1.0, 1.0));
        let s = x.sin();
        assert_eq!((s.value, s.partials[0]), (0.0, 1.0));
        let c = x.cos();
        assert_eq!((c.value, c.partials[0]), (1.0, 0.0));
    }

    #[test]
    fn example_map_derivative() {
        // d/dy (3y^2 + mu - x) at y = 1
        let y = Jet::variable(1.0, 0, 1);
        let f = y.sq() * 3.0 + 0.5 - 0.2;
        assert_eq!(f.partials[0], 6.0);
    }

    #[test]
    fn quotient_and_powers() {
        let x = Jet::variable(2.0, 0, 1);
        let q = x.cst(1.0) / x.clone();
        assert!((q.partials[0] + 0.25).abs() < 1e-15);
        let p = x.powf(1.5);
        assert!((p.partials[0] - 1.5 * 2f64.sqrt()).abs() < 1e-14);
        let r = x.sqrt();
        assert!((r.partials[0] - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(x.powi(3).partials[0], 12.0);
        assert_eq!(x.powi(0).partials[0], 0.0);
    }

    #[test]
    fn checked_operations_report_errors() {
        let x = Jet::variable(0.0, 0, 1);
        let one = x.cst(1.0);
        assert!(one.checked_div(&x).is_err());
        assert!((x.clone() - 1.0).checked_sqrt().is_err());
        assert!(x.checked_sqrt().is_ok());
    }

    #[test]
    #[should_panic(expected = "seed dimension mismatch")]
    fn mismatched_seeds_panic() {
        let a = Jet::variable(1.0, 0, 1);
        let b = Jet::variable(1.0, 0, 2);
        let _ = a + b;
    }

    #[test]
    fn jacobian_of_identity_and_linear_maps() {
        let x = [0.3, -1.2, 4.0];
        let id = jacobian(|v| Ok(v.to_vec()), &x).unwrap();
        assert_eq!(id, DMatrix::identity(3, 3));
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let jac = jacobian(
            |v| {
                Ok((0..2)
                    .map(|i| {
                        (0..3).fold(v[0].cst(0.0), |acc, j| acc + v[j].clone() * a[(i, j)])
                    })
                    .collect())
            },
            &x,
        )
        .unwrap();
        assert_eq!(jac, a);
    }

    #[test]
    fn nested_jets_give_second_derivatives() {
        // f = x^2 y + sin(y); Hessian [[2y, 2x], [2x, -sin y]]
        let x = lift_all(&[0.7, 1.3]);
        let g = gradient(&x, |v| v[0].sq() * v[1].clone() + v[1].sin());
        let h = partials_matrix(&g);
        assert!((h[(0, 0)] - 2.6).abs() < 1e-14);
        assert!((h[(0, 1)] - 1.4).abs() < 1e-14);
        assert!((h[(1, 0)] - 1.4).abs() < 1e-14);
        assert!((h[(1, 1)] + 1.3f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn with_real_keeps_partials() {
        let x = Jet::variable(1.0, 0, 2);
        let y = x.with_real(3.0);
        assert_eq!(y.value, 3.0);
        assert_eq!(y.partials.as_slice(), &[1.0, 0.0]);
    }
}
