//! Homogeneous-coordinate matrices for the matrix-representable deformations.
//!
//! These are assembled from the 4×4 transformation matrices directly and are
//! kept independent of the flow formulas in [`crate::deform`], so the two can
//! check each other.

use std::ops::Mul;

use crate::cloud::Point;
use crate::deform::{DeformationKind, DeformationParams};
use crate::error::{Error, Result};

/// A row-major 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn rows(&self) -> &[[f64; 4]; 4] {
        &self.0
    }

    /// Embeds a 3×3 linear part with translation `t`.
    pub fn from_linear(m: [[f64; 3]; 3], t: [f64; 3]) -> Mat4 {
        let mut out = Mat4::IDENTITY;
        for r in 0..3 {
            out.0[r][..3].copy_from_slice(&m[r]);
            out.0[r][3] = t[r];
        }
        out
    }

    pub fn rot_x(alpha: f64) -> Mat4 {
        let (s, c) = alpha.sin_cos();
        Mat4::from_linear([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], [0.0; 3])
    }

    pub fn rot_y(beta: f64) -> Mat4 {
        let (s, c) = beta.sin_cos();
        Mat4::from_linear([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], [0.0; 3])
    }

    pub fn rot_z(gamma: f64) -> Mat4 {
        let (s, c) = gamma.sin_cos();
        Mat4::from_linear([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    }

    /// Applies the matrix to `p` lifted to `(x, y, z, 1)` and dehomogenizes.
    pub fn transform_point(&self, p: &Point) -> Point {
        let h = [p[0], p[1], p[2], 1.0];
        let mut out = [0.0; 4];
        for (r, row) in self.0.iter().enumerate() {
            out[r] = row.iter().zip(&h).map(|(a, b)| a * b).sum();
        }
        [out[0] / out[3], out[1] / out[3], out[2] / out[3]]
    }
}

impl Mul for Mat4 {
    type Output = Mat4;

    fn mul(self, rhs: Mat4) -> Mat4 {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat4(out)
    }
}

/// The homogeneous matrix `T(φ)` mapping `point` to its deformed position.
///
/// Twisting and tapering are not linear maps, so their matrices depend on the
/// point's height `z`; every other kind ignores `point`.
pub fn homogeneous_point_map(params: &DeformationParams, point: &Point) -> Result<Mat4> {
    let phi = params.values();
    let z = point[2];
    let m = match params.kind() {
        DeformationKind::GaussianNoise => {
            return Err(Error::UnsupportedKind(DeformationKind::GaussianNoise))
        }
        DeformationKind::Translation => Mat4::from_linear(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [phi[0], phi[1], phi[2]],
        ),
        DeformationKind::RotX => Mat4::rot_x(phi[0]),
        DeformationKind::RotY => Mat4::rot_y(phi[0]),
        DeformationKind::RotZ => Mat4::rot_z(phi[0]),
        DeformationKind::RotXZ => Mat4::rot_z(phi[1]) * Mat4::rot_x(phi[0]),
        DeformationKind::RotXYZ => {
            let (sa, ca) = phi[0].sin_cos();
            let (sb, cb) = phi[1].sin_cos();
            let (sg, cg) = phi[2].sin_cos();
            Mat4::from_linear(
                [
                    [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
                    [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
                    [-sb, cb * sa, cb * ca],
                ],
                [0.0; 3],
            )
        }
        DeformationKind::ShearZ => Mat4::from_linear(
            [[1.0, 0.0, phi[0]], [0.0, 1.0, phi[1]], [0.0, 0.0, 1.0]],
            [0.0; 3],
        ),
        DeformationKind::TwistZ => Mat4::rot_z(phi[0] * z),
        DeformationKind::TaperZ => {
            let s = 0.5 * phi[0] * phi[0] * z + phi[1] * z + 1.0;
            Mat4::from_linear([[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
        }
        DeformationKind::Affine => Mat4([
            [phi[0] + 1.0, phi[1], phi[2], phi[3]],
            [phi[4], phi[5] + 1.0, phi[6], phi[7]],
            [phi[8], phi[9], phi[10] + 1.0, phi[11]],
            [0.0, 0.0, 0.0, 1.0],
        ]),
        DeformationKind::AffineNT => Mat4::from_linear(
            [
                [phi[0] + 1.0, phi[1], phi[2]],
                [phi[3], phi[4] + 1.0, phi[5]],
                [phi[6], phi[7], phi[8] + 1.0],
            ],
            [0.0; 3],
        ),
    };
    Ok(m)
}
