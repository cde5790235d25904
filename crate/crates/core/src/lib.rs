//! Randomized smoothing over the parameters of spatial deformations of point
//! clouds.
//!
//! A base classifier `f` is smoothed by drawing random deformation parameters
//! `ε`, deforming the input cloud with the flow `ν_ε`, and taking the most
//! frequent label of `f(p + ν_ε)`. The smooth prediction is certified against
//! every parameter offset whose norm is below the returned radius: ℓ1 for
//! uniform smoothing and ℓ2 for Gaussian smoothing.
//!
//! ```
//! use deformcert::{smooth_certify, CentroidClassifier, DeformationKind,
//!     NoiseDistribution, SmoothingConfig};
//! use deformcert::harness::synthetic_dataset;
//!
//! let data = synthetic_dataset(4, 64, 0.0, 1)?;
//! let clf = CentroidClassifier::fit(&data)?;
//! let config = SmoothingConfig::new(NoiseDistribution::Uniform(0.2));
//! let cert = smooth_certify(&clf, &data[0].0, DeformationKind::RotZ, &config, 7)?;
//! if let Some(label) = cert.predicted {
//!     println!("class {label}, certified for |θ| < {:.3} rad", cert.radius);
//! }
//! # Ok::<(), deformcert::Error>(())
//! ```
//!
//! The guide in `book/` walks through each piece.

pub mod classifier;
pub mod cloud;
pub mod deform;
pub mod error;
pub mod harness;
pub mod homogeneous;
pub mod mlp;
pub mod oracle;
pub mod smoothing;
pub mod stats;

pub use classifier::{CentroidClassifier, Classifier, ConstantClassifier, FnClassifier, Label};
pub use cloud::{Point, PointCloud};
pub use deform::{
    apply, deform, flow, param_dim, sample_params, DeformationKind, DeformationParams,
    DistributionFamily, FlowField, NoiseDistribution,
};
pub use error::{Error, Result};
pub use homogeneous::{homogeneous_point_map, Mat4};
pub use mlp::{mlp_train, MlpClassifier, TrainConfig};
pub use oracle::{OracleClient, OracleConfig, TcpOracleServer, Transport};
pub use smoothing::{
    certified_radius, smooth_certify, smooth_predict, smooth_vote, CertificationResult,
    PredictionResult, SmoothingConfig,
};
pub use stats::{clopper_pearson_lower, std_normal_quantile};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/deformations.md")]
    mod deformations {}
    #[doc = include_str!("../../../book/src/smoothing.md")]
    mod smoothing {}
    #[doc = include_str!("../../../book/src/classifiers.md")]
    mod classifiers {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
