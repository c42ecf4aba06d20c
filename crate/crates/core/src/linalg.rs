//! Small dense helpers shared by the numerical modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jets::Scalar;

/// Solve `a x = b` by Gaussian elimination with partial pivoting on the
/// real parts.  Works on jets, so derivatives flow through the solve.
pub fn solve<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>) -> Result<Vec<S>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i][k].real().abs().total_cmp(&a[j][k].real().abs()))
            .unwrap();
        if a[piv][k].real().abs() < 1e-300 {
            return Err(Error::Singular("zero pivot in linear solve".into()));
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k].clone() / a[k][k].clone();
            for j in k..n {
                let t = a[k][j].clone() * f.clone();
                a[i][j] = a[i][j].clone() - t;
            }
            b[i] = b[i].clone() - b[k].clone() * f;
        }
    }
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = b[i].clone();
        for j in i + 1..n {
            s = s - a[i][j].clone() * x[j].clone();
        }
        x[i] = s / a[i][i].clone();
    }
    Ok(x)
}

/// Real matrix times generic vector.
pub fn mat_vec<S: Scalar>(m: &DMatrix<f64>, v: &[S]) -> Vec<S> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols()).fold(v[0].cst(0.0), |acc, j| {
                if m[(i, j)] == 0.0 {
                    acc
                } else {
                    acc + v[j].clone() * m[(i, j)]
                }
            })
        })
        .collect()
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(a[0].cst(0.0), |acc, (x, y)| acc + x.clone() * y.clone())
}

/// Standard symplectic matrix J = [[0, I], [-I, 0]] of size 2n.
pub fn symplectic_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// ‖MᵀJM − J‖_∞ (entrywise max).
pub fn symplecticity_residual(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows() / 2;
    let j = symplectic_j(n);
    (m.transpose() * &j * m - j).amax()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::lift_all;

    #[test]
    fn solve_matches_nalgebra() {
        let a = vec![vec![2.0, 1.0, 0.0], vec![1.0, -3.0, 2.0], vec![0.5, 0.0, 4.0]];
        let b = vec![1.0, 2.0, 3.0];
        let x = solve(a.clone(), b.clone()).unwrap();
        let am = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        let xr = am.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for i in 0..3 {
            assert!((x[i] - xr[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_propagates_derivatives() {
        // x = b / a with a = 2 + t: dx/dt = -b / a^2
        let t = lift_all(&[0.0]);
        let a = vec![vec![t[0].clone() + 2.0]];
        let b = vec![t[0].cst(3.0)];
        let x = solve(a, b).unwrap();
        assert!((x[0].partials[0] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn singular_system_rejected() {
        assert!(solve(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn identity_is_symplectic() {
        assert_eq!(symplecticity_residual(&DMatrix::identity(4, 4)), 0.0);
    }
}
