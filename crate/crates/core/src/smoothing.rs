//! Monte-Carlo certification of the parametric-domain smooth classifier
//!
//! ```text
//! g(p) = E_{ε ~ D} [ f(p + ν_ε(p)) ]
//! ```
//!
//! with hard labels. The top class `c_A` is selected on `n0` samples, its
//! probability is lower-bounded from `n` fresh samples with an exact
//! Clopper-Pearson bound, and the bound is turned into a radius in parameter
//! space: ℓ1 for uniform smoothing, ℓ2 for Gaussian smoothing.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Label};
use crate::cloud::PointCloud;
use crate::deform::{deform, sample_params, DeformationKind, DeformationParams, NoiseDistribution};
use crate::error::{Error, Result};
use crate::stats::{binomial_test_half, clopper_pearson_lower, std_normal_quantile};

/// Sample counts, failure probability and smoothing distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub distribution: NoiseDistribution,
    /// Samples used to pick the candidate class.
    pub n0: u64,
    /// Samples used to bound the candidate's probability.
    pub n: u64,
    pub alpha: f64,
    /// Maximum clouds per classifier query.
    pub batch: usize,
}

impl SmoothingConfig {
    pub const DEFAULT_N0: u64 = 100;
    pub const DEFAULT_N: u64 = 1000;
    pub const DEFAULT_ALPHA: f64 = 1e-3;
    pub const DEFAULT_BATCH: usize = 200;

    pub fn new(distribution: NoiseDistribution) -> Self {
        Self {
            distribution,
            n0: Self::DEFAULT_N0,
            n: Self::DEFAULT_N,
            alpha: Self::DEFAULT_ALPHA,
            batch: Self::DEFAULT_BATCH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self.distribution.scale();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing scale must be positive, got {scale}"
            )));
        }
        if self.n0 < 1 || self.n < self.n0 {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= n0 <= n, got n0={}, n={}",
                self.n0, self.n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.batch < 1 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tallies behind a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    /// Class chosen in the selection round.
    pub candidate: Label,
    /// Votes for the candidate among the `n0` selection samples.
    pub selection_hits: u64,
    /// Whether the selection round had a tie, broken toward the lowest index.
    pub selection_tie: bool,
    /// Votes for the candidate among the `n` estimation samples.
    pub estimation_hits: u64,
}

/// Outcome of [`smooth_certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificationResult {
    /// `None` means abstain.
    pub predicted: Option<Label>,
    pub pa_lower: f64,
    /// ℓ1 (uniform) or ℓ2 (Gaussian) radius in parameter units.
    pub radius: f64,
    pub counts: SampleCounts,
    pub elapsed: f64,
}

impl CertificationResult {
    pub fn abstained(&self) -> bool {
        self.predicted.is_none()
    }
}

/// Outcome of [`smooth_predict`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub predicted: Option<Label>,
    pub pvalue: f64,
}

/// Hard-smoothing radius for a lower bound on the top-class probability,
/// taking the runner-up bound as `1 − pa_lower`.
///
/// * uniform `U[-λ, λ]`: `2λ (pa_lower − ½)` in ℓ1;
/// * Gaussian `N(0, σ²)`: `σ Φ⁻¹(pa_lower)` in ℓ2.
///
/// Zero whenever `pa_lower ≤ ½`.
pub fn certified_radius(pa_lower: f64, distribution: NoiseDistribution) -> Result<f64> {
    if !(0.0..=1.0).contains(&pa_lower) {
        return Err(Error::InvalidArgument(format!(
            "probability bound must lie in [0, 1], got {pa_lower}"
        )));
    }
    if pa_lower <= 0.5 {
        return Ok(0.0);
    }
    Ok(match distribution {
        NoiseDistribution::Uniform(lambda) => 2.0 * lambda * (pa_lower - 0.5),
        NoiseDistribution::Gaussian(sigma) => {
            if pa_lower >= 1.0 {
                f64::INFINITY
            } else {
                sigma * std_normal_quantile(pa_lower)?
            }
        }
    })
}

// Independent random streams inside one certification.
const STREAM_SELECT: u64 = 1;
const STREAM_ESTIMATE: u64 = 2;
const STREAM_PREDICT: u64 = 3;
const STREAM_VOTE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derives an independent seed for one (sample, scale) work item, so results
/// do not depend on scheduling order.
pub fn substream_seed(base: u64, sample_index: u64, scale_index: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ sample_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(h ^ scale_index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counts base-classifier labels over `count` perturbed copies of `cloud`.
fn sample_counts<C: Classifier + ?Sized>(
    classifier: &C,
    cloud: &PointCloud,
    kind: DeformationKind,
    offset: Option<&DeformationParams>,
    config: &SmoothingConfig,
    count: u64,
    rng: &mut ChaCha20Rng,
) -> Result<BTreeMap<Label, u64>> {
    let mut counts = BTreeMap::new();
    let mut remaining = count;
    let mut batch = Vec::with_capacity(config.batch.min(count as usize));
    while remaining > 0 {
        let size = remaining.min(config.batch as u64);
        batch.clear();
        for _ in 0..size {
            let mut eps = sample_params(kind, config.distribution, cloud.len(), rng)?;
            if let Some(delta) = offset {
                eps = delta.add(&eps)?;
            }
            batch.push(deform(cloud, &eps)?);
        }
        let labels = classifier.classify_batch(&batch)?;
        if labels.len() != batch.len() {
            return Err(Error::Classifier(format!(
                "asked for {} labels, received {}",
                batch.len(),
                labels.len()
            )));
        }
        for l in labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        remaining -= size;
    }
    Ok(counts)
}

/// Most frequent label, lowest index on ties. Returns the label, its count,
/// and whether a tie occurred.
fn top_label(counts: &BTreeMap<Label, u64>) -> Option<(Label, u64, bool)> {
    let mut best: Option<(Label, u64, bool)> = None;
    for (&label, &c) in counts {
        match best {
            None => best = Some((label, c, false)),
            Some((_, bc, _)) if c > bc => best = Some((label, c, false)),
            Some((bl, bc, _)) if c == bc => best = Some((bl, bc, true)),
            _ => {}
        }
    }
    best
}

/// Certifies the smooth classifier at `cloud` against perturbations of
/// `kind` parameters around zero. Deterministic given `seed`.
pub fn smooth_certify<C: Classifier + ?Sized>(
    classifier: &C,
    cloud: &PointCloud,
    kind: DeformationKind,
    config: &SmoothingConfig,
    seed: u64,
) -> Result<CertificationResult> {
    config.validate()?;
    let start = Instant::now();

    let mut rng = stream(seed, STREAM_SELECT);
    let selection = sample_counts(classifier, cloud, kind, None, config, config.n0, &mut rng)?;
    let (candidate, selection_hits, selection_tie) =
        top_label(&selection).ok_or(Error::NoClasses)?;

    let mut rng = stream(seed, STREAM_ESTIMATE);
    let estimation = sample_counts(classifier, cloud, kind, None, config, config.n, &mut rng)?;
    let hits = estimation.get(&candidate).copied().unwrap_or(0);

    let pa_lower = clopper_pearson_lower(hits, config.n, config.alpha)?;
    let radius = certified_radius(pa_lower, config.distribution)?;
    let predicted = (pa_lower > 0.5).then_some(candidate);

    Ok(CertificationResult {
        predicted,
        pa_lower,
        radius,
        counts: SampleCounts {
            candidate,
            selection_hits,
            selection_tie,
            estimation_hits: hits,
        },
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Predicts with the smooth classifier, abstaining unless the top class beats
/// the runner-up under a two-sided binomial test at level `alpha`.
pub fn smooth_predict<C: Classifier + ?Sized>(
    classifier: &C,
    cloud: &PointCloud,
    kind: DeformationKind,
    config: &SmoothingConfig,
    seed: u64,
) -> Result<PredictionResult> {
    config.validate()?;
    let mut rng = stream(seed, STREAM_PREDICT);
    let counts = sample_counts(classifier, cloud, kind, None, config, config.n, &mut rng)?;
    Ok(predict_from_counts(&counts, config.alpha))
}

/// The decision rule of [`smooth_predict`] applied to label counts.
pub fn predict_from_counts(counts: &BTreeMap<Label, u64>, alpha: f64) -> PredictionResult {
    let mut ranked: Vec<(Label, u64)> = counts.iter().map(|(&l, &c)| (l, c)).collect();
    // stable sort keeps ascending label order among equal counts
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    let (top, top_count) = match ranked.first() {
        Some(&t) => t,
        None => {
            return PredictionResult {
                predicted: None,
                pvalue: 1.0,
            }
        }
    };
    let runner_up = ranked.get(1).map_or(0, |r| r.1);
    let pvalue = binomial_test_half(top_count, runner_up);
    PredictionResult {
        predicted: (pvalue <= alpha).then_some(top),
        pvalue,
    }
}

/// Majority vote of `f(p + ν_{δ+ε})` over `m` fresh perturbations `ε`:
/// an empirical read-out of the smooth classifier at parameters `δ`.
pub fn smooth_vote<C: Classifier + ?Sized>(
    classifier: &C,
    cloud: &PointCloud,
    base_offset: &DeformationParams,
    config: &SmoothingConfig,
    m: u64,
    seed: u64,
) -> Result<Label> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "vote needs at least one sample".into(),
        ));
    }
    let kind = base_offset.kind();
    let mut rng = stream(seed, STREAM_VOTE);
    let counts = sample_counts(
        classifier,
        cloud,
        kind,
        Some(base_offset),
        config,
        m,
        &mut rng,
    )?;
    top_label(&counts).map(|t| t.0).ok_or(Error::NoClasses)
}
