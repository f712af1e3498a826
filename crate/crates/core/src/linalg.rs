//! Tridiagonal elimination for real, complex, and 2×2-block systems.

use std::ops::{Div, Mul, Sub};

use num_traits::Zero;

use crate::error::{Error, Result};

/// Solves `A x = rhs` in place for the tridiagonal `A` given by its three
/// diagonals (`sub[0]` and `sup[n-1]` are ignored). `scratch` must have the
/// length of `rhs`.
///
/// No pivoting: intended for the diagonally dominant or definite systems
/// produced by the Crank–Nicolson and Poisson discretizations.
pub fn thomas_in_place<T>(sub: &[T], diag: &[T], sup: &[T], rhs: &mut [T], scratch: &mut [T]) -> Result<()>
where
    T: Copy + Zero + PartialEq + Sub<Output = T> + Mul<Output = T> + Div<Output = T>,
{
    let n = rhs.len();
    debug_assert!(sub.len() >= n && diag.len() >= n && sup.len() >= n && scratch.len() >= n);
    if n == 0 {
        return Ok(());
    }
    let mut beta = diag[0];
    if beta.is_zero() {
        return Err(Error::SingularSystem { row: 0 });
    }
    rhs[0] = rhs[0] / beta;
    for i in 1..n {
        scratch[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * scratch[i];
        if beta.is_zero() {
            return Err(Error::SingularSystem { row: i });
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] = rhs[i] - scratch[i + 1] * next;
    }
    Ok(())
}

/// Allocating convenience wrapper around [`thomas_in_place`].
pub fn solve_tridiagonal<T>(sub: &[T], diag: &[T], sup: &[T], rhs: &[T]) -> Result<Vec<T>>
where
    T: Copy + Zero + PartialEq + Sub<Output = T> + Mul<Output = T> + Div<Output = T>,
{
    let mut x = rhs.to_vec();
    let mut scratch = vec![T::zero(); rhs.len()];
    thomas_in_place(sub, diag, sup, &mut x, &mut scratch)?;
    Ok(x)
}

pub type Mat2 = [[f64; 2]; 2];

#[inline]
fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[inline]
fn mat_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

#[inline]
fn mat_inv(m: &Mat2, row: usize) -> Result<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if det == 0.0 || !det.is_finite() || det.abs() <= 1e-300 * scale * scale {
        return Err(Error::SingularSystem { row });
    }
    let inv = 1.0 / det;
    Ok([
        [m[1][1] * inv, -m[0][1] * inv],
        [-m[1][0] * inv, m[0][0] * inv],
    ])
}

/// Block-tridiagonal solve with 2×2 blocks, in place.
///
/// `lower[i]` couples row `i` to unknown `i-1`, `upper[i]` couples row `i` to
/// unknown `i+1`. `work` must have the length of `rhs`.
pub fn block2_thomas_in_place(
    lower: &[Mat2],
    diag: &[Mat2],
    upper: &[Mat2],
    rhs: &mut [[f64; 2]],
    work: &mut [Mat2],
) -> Result<()> {
    let n = rhs.len();
    if n == 0 {
        return Ok(());
    }
    let mut inv = mat_inv(&diag[0], 0)?;
    work[0] = mat_mul(&inv, &upper[0]);
    rhs[0] = mat_vec(&inv, rhs[0]);
    for i in 1..n {
        let d = mat_sub(&diag[i], &mat_mul(&lower[i], &work[i - 1]));
        inv = mat_inv(&d, i)?;
        if i + 1 < n {
            work[i] = mat_mul(&inv, &upper[i]);
        }
        let lv = mat_vec(&lower[i], rhs[i - 1]);
        rhs[i] = mat_vec(&inv, [rhs[i][0] - lv[0], rhs[i][1] - lv[1]]);
    }
    for i in (0..n - 1).rev() {
        let c = mat_vec(&work[i], rhs[i + 1]);
        rhs[i] = [rhs[i][0] - c[0], rhs[i][1] - c[1]];
    }
    Ok(())
}
