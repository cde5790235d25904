//! Parametric deformation flows.
//!
//! A deformation with parameters `φ` moves every point `p` to `p + ν_φ(p)`;
//! the displacement field `ν_φ` is the *flow*. Smoothing happens in the
//! parameter space, so each kind below fixes both the parameter layout and
//! the closed-form per-point displacement.
//!
//! Angles are radians. Flows are evaluated in `f64` regardless of how the
//! cloud was stored on disk.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// The supported deformation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DeformationKind {
    /// `[t_x, t_y, t_z]`
    Translation,
    /// `[α]`
    RotX,
    /// `[β]`
    RotY,
    /// `[γ]`
    RotZ,
    /// `[α, γ]`: x-rotation followed by z-rotation.
    RotXZ,
    /// `[α, β, γ]`: extrinsic x, then y, then z.
    RotXYZ,
    /// `[a, b]`
    ShearZ,
    /// `[γ]`, angle per unit height.
    TwistZ,
    /// `[a, b]`
    TaperZ,
    /// `[a, b, c, d, e, f, g, h, i, j, k, l]`, row-major 3×4 offset from identity.
    Affine,
    /// `[a, b, c, d, e, f, g, h, i]`, row-major 3×3 offset from identity.
    AffineNT,
    /// One displacement triple per point, `3·N` parameters.
    GaussianNoise,
}

impl DeformationKind {
    pub const ALL: [DeformationKind; 12] = [
        DeformationKind::Translation,
        DeformationKind::RotX,
        DeformationKind::RotY,
        DeformationKind::RotZ,
        DeformationKind::RotXZ,
        DeformationKind::RotXYZ,
        DeformationKind::ShearZ,
        DeformationKind::TwistZ,
        DeformationKind::TaperZ,
        DeformationKind::Affine,
        DeformationKind::AffineNT,
        DeformationKind::GaussianNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeformationKind::Translation => "translation",
            DeformationKind::RotX => "rotx",
            DeformationKind::RotY => "roty",
            DeformationKind::RotZ => "rotz",
            DeformationKind::RotXZ => "rotxz",
            DeformationKind::RotXYZ => "rotxyz",
            DeformationKind::ShearZ => "shearz",
            DeformationKind::TwistZ => "twistz",
            DeformationKind::TaperZ => "taperz",
            DeformationKind::Affine => "affine",
            DeformationKind::AffineNT => "affine-nt",
            DeformationKind::GaussianNoise => "gaussian-noise",
        }
    }

    /// True for kinds whose parameters are all angles.
    pub fn is_angular(self) -> bool {
        matches!(
            self,
            DeformationKind::RotX
                | DeformationKind::RotY
                | DeformationKind::RotZ
                | DeformationKind::RotXZ
                | DeformationKind::RotXYZ
                | DeformationKind::TwistZ
        )
    }

    pub fn is_rotation(self) -> bool {
        self.is_angular() && self != DeformationKind::TwistZ
    }
}

impl fmt::Display for DeformationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeformationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let kind = match key.as_str() {
            "translation" | "trans" => DeformationKind::Translation,
            "rotx" => DeformationKind::RotX,
            "roty" => DeformationKind::RotY,
            "rotz" => DeformationKind::RotZ,
            "rotxz" => DeformationKind::RotXZ,
            "rotxyz" => DeformationKind::RotXYZ,
            "shearz" | "shear" => DeformationKind::ShearZ,
            "twistz" | "twist" => DeformationKind::TwistZ,
            "taperz" | "taper" => DeformationKind::TaperZ,
            "affine" => DeformationKind::Affine,
            "affinent" => DeformationKind::AffineNT,
            "gaussiannoise" | "noise" => DeformationKind::GaussianNoise,
            _ => return Err(Error::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

impl From<DeformationKind> for String {
    fn from(k: DeformationKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for DeformationKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Number of parameters of `kind` for a cloud of `n_points` points.
pub fn param_dim(kind: DeformationKind, n_points: usize) -> usize {
    match kind {
        DeformationKind::Translation => 3,
        DeformationKind::RotX | DeformationKind::RotY | DeformationKind::RotZ => 1,
        DeformationKind::RotXZ => 2,
        DeformationKind::RotXYZ => 3,
        DeformationKind::ShearZ => 2,
        DeformationKind::TwistZ => 1,
        DeformationKind::TaperZ => 2,
        DeformationKind::Affine => 12,
        DeformationKind::AffineNT => 9,
        DeformationKind::GaussianNoise => 3 * n_points,
    }
}

/// A parameter vector for one deformation kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationParams {
    kind: DeformationKind,
    values: Vec<f64>,
}

impl DeformationParams {
    /// Validates finiteness. Arity is checked against a cloud when the flow
    /// is evaluated, since `GaussianNoise` depends on the cloud size.
    pub fn new(kind: DeformationKind, values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter { index });
        }
        if kind != DeformationKind::GaussianNoise {
            let expected = param_dim(kind, 1);
            if values.len() != expected {
                return Err(Error::ParameterArity {
                    kind,
                    expected,
                    got: values.len(),
                });
            }
        } else if values.is_empty() || !values.len().is_multiple_of(3) {
            return Err(Error::ParameterArity {
                kind,
                expected: 3 * values.len().div_ceil(3).max(1),
                got: values.len(),
            });
        }
        Ok(Self { kind, values })
    }

    pub fn zeros(kind: DeformationKind, n_points: usize) -> Self {
        Self {
            kind,
            values: vec![0.0; param_dim(kind, n_points)],
        }
    }

    pub fn kind(&self) -> DeformationKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Elementwise sum with another parameter vector of the same kind.
    pub fn add(&self, other: &DeformationParams) -> Result<DeformationParams> {
        if self.kind != other.kind || self.values.len() != other.values.len() {
            return Err(Error::ParameterArity {
                kind: self.kind,
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(DeformationParams {
            kind: self.kind,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_arity(&self, n_points: usize) -> Result<()> {
        let expected = param_dim(self.kind, n_points);
        if self.values.len() != expected {
            return Err(Error::ParameterArity {
                kind: self.kind,
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Per-point displacement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    vectors: Vec<Point>,
}

impl FlowField {
    pub fn new(vectors: Vec<Point>) -> Self {
        Self { vectors }
    }

    pub fn vectors(&self) -> &[Point] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            vectors: self.vectors.iter().map(|v| v.map(|c| -c)).collect(),
        }
    }
}

/// Evaluates the flow `ν_φ` at every point of `cloud`.
pub fn flow(params: &DeformationParams, cloud: &PointCloud) -> Result<FlowField> {
    params.check_arity(cloud.len())?;
    let phi = params.values();
    let vectors = match params.kind {
        DeformationKind::GaussianNoise => phi.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        kind => cloud
            .points()
            .iter()
            .map(|p| point_flow(kind, phi, p))
            .collect(),
    };
    Ok(FlowField { vectors })
}

/// Displacement of one point. `phi` must already have the right arity and
/// `kind` must not be `GaussianNoise`.
pub(crate) fn point_flow(kind: DeformationKind, phi: &[f64], p: &Point) -> Point {
    let [x, y, z] = *p;
    match kind {
        DeformationKind::Translation => [phi[0], phi[1], phi[2]],
        DeformationKind::RotX => {
            let (s, c) = phi[0].sin_cos();
            [0.0, (c - 1.0) * y - s * z, s * y + (c - 1.0) * z]
        }
        DeformationKind::RotY => {
            let (s, c) = phi[0].sin_cos();
            [(c - 1.0) * x + s * z, 0.0, -s * x + (c - 1.0) * z]
        }
        DeformationKind::RotZ => planar_rotation_flow(phi[0], x, y),
        DeformationKind::RotXZ => {
            let (sa, ca) = phi[0].sin_cos();
            let (sg, cg) = phi[1].sin_cos();
            [
                (cg - 1.0) * x - sg * ca * y + sg * sa * z,
                sg * x + (cg * ca - 1.0) * y - cg * sa * z,
                sa * y + (ca - 1.0) * z,
            ]
        }
        DeformationKind::RotXYZ => {
            let (sa, ca) = phi[0].sin_cos();
            let (sb, cb) = phi[1].sin_cos();
            let (sg, cg) = phi[2].sin_cos();
            [
                (cg * cb - 1.0) * x + (cg * sb * sa - sg * ca) * y + (cg * sb * ca + sg * sa) * z,
                sg * cb * x + (sg * sb * sa + cg * ca - 1.0) * y + (sg * sb * ca - cg * sa) * z,
                -sb * x + cb * sa * y + (cb * ca - 1.0) * z,
            ]
        }
        DeformationKind::ShearZ => [phi[0] * z, phi[1] * z, 0.0],
        DeformationKind::TwistZ => planar_rotation_flow(phi[0] * z, x, y),
        DeformationKind::TaperZ => {
            let k = (0.5 * phi[0] * phi[0] + phi[1]) * z;
            [k * x, k * y, 0.0]
        }
        DeformationKind::Affine => [
            phi[0] * x + phi[1] * y + phi[2] * z + phi[3],
            phi[4] * x + phi[5] * y + phi[6] * z + phi[7],
            phi[8] * x + phi[9] * y + phi[10] * z + phi[11],
        ],
        DeformationKind::AffineNT => [
            phi[0] * x + phi[1] * y + phi[2] * z,
            phi[3] * x + phi[4] * y + phi[5] * z,
            phi[6] * x + phi[7] * y + phi[8] * z,
        ],
        DeformationKind::GaussianNoise => unreachable!("noise flow is not per-point"),
    }
}

fn planar_rotation_flow(angle: f64, x: f64, y: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [(c - 1.0) * x - s * y, s * x + (c - 1.0) * y, 0.0]
}

/// `p' = p + p̃` for every point. The result is not flagged as normalized.
pub fn apply(cloud: &PointCloud, field: &FlowField) -> Result<PointCloud> {
    if cloud.len() != field.len() {
        return Err(Error::CardinalityMismatch {
            cloud: cloud.len(),
            field: field.len(),
        });
    }
    let points = cloud
        .points()
        .iter()
        .zip(field.vectors())
        .map(|(p, v)| [p[0] + v[0], p[1] + v[1], p[2] + v[2]])
        .collect();
    Ok(PointCloud::from_valid(points))
}

/// Deforms `cloud` by `params` in one step, skipping the intermediate field.
pub fn deform(cloud: &PointCloud, params: &DeformationParams) -> Result<PointCloud> {
    params.check_arity(cloud.len())?;
    let phi = params.values();
    let points = match params.kind {
        DeformationKind::GaussianNoise => cloud
            .points()
            .iter()
            .zip(phi.chunks_exact(3))
            .map(|(p, e)| [p[0] + e[0], p[1] + e[1], p[2] + e[2]])
            .collect(),
        kind => cloud
            .points()
            .iter()
            .map(|p| {
                let v = point_flow(kind, phi, p);
                [p[0] + v[0], p[1] + v[1], p[2] + v[2]]
            })
            .collect(),
    };
    let out = PointCloud::from_valid(points);
    if out.points().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "deformation produced a non-finite coordinate".into(),
        ));
    }
    Ok(out)
}

/// The smoothing distribution over parameter perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "scale", rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// i.i.d. `U[-λ, λ]` per coordinate; certificates are in ℓ1.
    Uniform(f64),
    /// i.i.d. `N(0, σ²)` per coordinate; certificates are in ℓ2.
    Gaussian(f64),
}

impl NoiseDistribution {
    pub fn scale(self) -> f64 {
        match self {
            NoiseDistribution::Uniform(s) | NoiseDistribution::Gaussian(s) => s,
        }
    }

    pub fn family(self) -> DistributionFamily {
        match self {
            NoiseDistribution::Uniform(_) => DistributionFamily::Uniform,
            NoiseDistribution::Gaussian(_) => DistributionFamily::Gaussian,
        }
    }

    /// The norm in which certificates for this distribution are stated.
    pub fn certificate_norm(self, params: &DeformationParams) -> f64 {
        match self {
            NoiseDistribution::Uniform(_) => params.l1_norm(),
            NoiseDistribution::Gaussian(_) => params.l2_norm(),
        }
    }
}

/// A distribution family without its scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionFamily {
    Uniform,
    Gaussian,
}

impl DistributionFamily {
    pub fn with_scale(self, scale: f64) -> NoiseDistribution {
        match self {
            DistributionFamily::Uniform => NoiseDistribution::Uniform(scale),
            DistributionFamily::Gaussian => NoiseDistribution::Gaussian(scale),
        }
    }
}

impl fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistributionFamily::Uniform => "uniform",
            DistributionFamily::Gaussian => "gaussian",
        })
    }
}

impl FromStr for DistributionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "u" => Ok(DistributionFamily::Uniform),
            "gaussian" | "normal" | "g" => Ok(DistributionFamily::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown distribution `{other}`"
            ))),
        }
    }
}

/// Draws one parameter perturbation with i.i.d. coordinates from
/// `distribution`.
///
/// A zero scale is accepted and yields the zero vector; negative or
/// non-finite scales are rejected.
pub fn sample_params<R: Rng + ?Sized>(
    kind: DeformationKind,
    distribution: NoiseDistribution,
    n_points: usize,
    rng: &mut R,
) -> Result<DeformationParams> {
    let scale = distribution.scale();
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing scale must be nonnegative and finite, got {scale}"
        )));
    }
    let dim = param_dim(kind, n_points);
    let values = if scale == 0.0 {
        vec![0.0; dim]
    } else {
        match distribution {
            NoiseDistribution::Uniform(lambda) => {
                let u = Uniform::new_inclusive(-lambda, lambda)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (0..dim).map(|_| u.sample(rng)).collect()
            }
            NoiseDistribution::Gaussian(sigma) => (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sigma * z
                })
                .collect(),
        }
    };
    Ok(DeformationParams { kind, values })
}
