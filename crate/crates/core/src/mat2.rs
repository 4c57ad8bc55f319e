//! Small fixed-size linear algebra for the 2-D chrominance plane.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = [f64; 2];

/// Tolerance below which a negative eigenvalue is treated as rounding noise.
pub const EIGEN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix is not symmetric (off-diagonals {0} vs {1})")]
    NotSymmetric(f64, f64),
    #[error("matrix has a negative eigenvalue {0}")]
    NegativeEigenvalue(f64),
    #[error("matrix is singular")]
    Singular,
}

/// A 2×2 real matrix, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(m00: f64, m01: f64, m10: f64, m11: f64) -> Self {
        Mat2([[m00, m01], [m10, m11]])
    }

    pub fn diag(d0: f64, d1: f64) -> Self {
        Mat2([[d0, 0.0], [0.0, d1]])
    }

    pub fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Mat2([[xx, xy], [xy, yy]])
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::diag(s, s)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[r][c]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn transpose(&self) -> Self {
        Mat2([[self.0[0][0], self.0[1][0]], [self.0[0][1], self.0[1][1]]])
    }

    pub fn scale(&self, s: f64) -> Self {
        Mat2(self.0.map(|row| row.map(|v| v * s)))
    }

    /// `(M + Mᵀ) / 2`, with the diagonal left untouched.
    pub fn symmetrize(&self) -> Self {
        let off = 0.5 * (self.0[0][1] + self.0[1][0]);
        Mat2([[self.0[0][0], off], [off, self.0[1][1]]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn inverse(&self) -> Result<Self, MatrixError> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return Err(MatrixError::Singular);
        }
        let inv = 1.0 / det;
        Ok(Mat2([
            [self.0[1][1] * inv, -self.0[0][1] * inv],
            [-self.0[1][0] * inv, self.0[0][0] * inv],
        ]))
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: Vec2) -> f64 {
        let mv = self.apply(v);
        v[0] * mv[0] + v[1] * mv[1]
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let s = self.symmetrize();
        let mean = 0.5 * (s.0[0][0] + s.0[1][1]);
        let half_diff = 0.5 * (s.0[0][0] - s.0[1][1]);
        let radius = half_diff.hypot(s.0[0][1]);
        [mean - radius, mean + radius]
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        Mat2([
            [self.0[0][0] + rhs.0[0][0], self.0[0][1] + rhs.0[0][1]],
            [self.0[1][0] + rhs.0[1][0], self.0[1][1] + rhs.0[1][1]],
        ])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        self + rhs.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }
}

fn check_psd(m: &Mat2) -> Result<(), MatrixError> {
    let scale = m.max_abs().max(1.0);
    let (xy, yx) = (m.0[0][1], m.0[1][0]);
    if (xy - yx).abs() > 1e-9 * scale {
        return Err(MatrixError::NotSymmetric(xy, yx));
    }
    let lo = m.sym_eigenvalues()[0];
    if lo < -EIGEN_TOLERANCE * scale {
        return Err(MatrixError::NegativeEigenvalue(lo));
    }
    Ok(())
}

/// Principal square root of a symmetric positive semidefinite 2×2 matrix.
///
/// Uses the closed form `S = (M + √det(M)·I) / √(tr(M) + 2√det(M))`, which
/// follows from Cayley-Hamilton applied to `S`. The zero matrix maps to zero.
pub fn sqrt_spd2(m: &Mat2) -> Result<Mat2, MatrixError> {
    check_psd(m)?;
    let m = m.symmetrize();
    let s = m.det().max(0.0).sqrt();
    let t = (m.trace() + 2.0 * s).max(0.0).sqrt();
    if t == 0.0 {
        return Ok(Mat2::ZERO);
    }
    Ok((m + Mat2::scaled_identity(s)).scale(1.0 / t))
}

/// Trace of the principal square root of a PSD 2×2 matrix, `√(tr M + 2√det M)`.
pub fn trace_sqrt_spd2(trace: f64, det: f64) -> f64 {
    (trace + 2.0 * det.max(0.0).sqrt()).max(0.0).sqrt()
}
