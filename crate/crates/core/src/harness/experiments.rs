//! Runtime benchmarks, α-ablation and the empirical soundness check.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::curves::{acr, acr_envelope};
use super::sweep::{run_sweep, SweepSpec, SweepTable};
use crate::classifier::{Classifier, Label};
use crate::cloud::PointCloud;
use crate::deform::{param_dim, DeformationParams, DistributionFamily};
use crate::error::{Error, Result};
use crate::smoothing::{
    certified_radius, smooth_certify, smooth_vote, substream_seed, CertificationResult,
};
use crate::stats::clopper_pearson_lower;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scale: f64,
    pub samples: usize,
    /// Median over rounds of the time to certify every sample once.
    pub seconds_median: f64,
    pub seconds_per_sample: f64,
    pub round_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub device_note: String,
    pub kind: String,
    pub n0: u64,
    pub n: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// `(max − min) / min` over per-scale medians.
    pub fn relative_spread(&self) -> f64 {
        let times: Vec<f64> = self.rows.iter().map(|r| r.seconds_median).collect();
        let min = times.iter().copied().fold(f64::INFINITY, f64::min);
        let max = times.iter().copied().fold(0.0, f64::max);
        if times.is_empty() || min <= 0.0 {
            0.0
        } else {
            (max - min) / min
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Times certification of the whole dataset at each scale.
///
/// Scales are interleaved within each round so that drift in machine load
/// hits every scale alike; the reported time is the median over rounds.
pub fn bench<C: Classifier + ?Sized>(
    spec: &SweepSpec,
    dataset: &[(PointCloud, Label)],
    classifier: &C,
    rounds: usize,
    device_note: &str,
) -> Result<BenchReport> {
    spec.validate()?;
    if rounds == 0 {
        return Err(Error::InvalidArgument(
            "bench needs at least one round".into(),
        ));
    }
    let mut report = BenchReport {
        device_note: device_note.to_string(),
        kind: spec.kind.to_string(),
        n0: spec.n0,
        n: spec.n,
        rows: Vec::new(),
    };
    if dataset.is_empty() {
        return Ok(report);
    }
    let mut times = vec![Vec::with_capacity(rounds); spec.scales.len()];
    for round in 0..rounds {
        for (s, &scale) in spec.scales.iter().enumerate() {
            let config = spec.config(scale);
            let certify = |(i, (cloud, _)): (usize, &(PointCloud, Label))| {
                let seed = substream_seed(spec.base_seed ^ round as u64, i as u64, s as u64);
                smooth_certify(classifier, cloud, spec.kind, &config, seed).map(|_| ())
            };
            let start = Instant::now();
            if classifier.is_serial() {
                dataset.iter().enumerate().try_for_each(certify)?;
            } else {
                dataset.par_iter().enumerate().try_for_each(certify)?;
            }
            times[s].push(start.elapsed().as_secs_f64());
        }
    }
    report.rows = spec
        .scales
        .iter()
        .zip(times)
        .map(|(&scale, t)| {
            let m = median(&t);
            BenchRow {
                scale,
                samples: dataset.len(),
                seconds_median: m,
                seconds_per_sample: m / dataset.len() as f64,
                round_seconds: t,
            }
        })
        .collect();
    Ok(report)
}

/// Recomputes every certificate of `table` at level `alpha` from its stored
/// counts. Sampling does not depend on α, so this equals a fresh sweep with
/// the same seeds.
pub fn recertify(table: &SweepTable, alpha: f64) -> Result<SweepTable> {
    let mut out = table.clone();
    out.spec.alpha = alpha;
    for row in &mut out.rows {
        if let Ok(r) = &mut row.outcome {
            let dist = table.spec.family.with_scale(row.scale);
            let pa = clopper_pearson_lower(r.counts.estimation_hits, table.spec.n, alpha)?;
            r.pa_lower = pa;
            r.radius = certified_radius(pa, dist)?;
            r.predicted = (pa > 0.5).then_some(r.counts.candidate);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub alpha: f64,
    pub envelope_acr: f64,
    pub per_scale_acr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `(max − min) / mean` of the envelope ACR across α.
    pub fn relative_spread(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(|r| r.envelope_acr).collect();
        if v.is_empty() {
            return 0.0;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if mean > 0.0 {
            (max - min) / mean
        } else {
            0.0
        }
    }
}

/// Runs one sweep and reports ACR at each failure probability in `alphas`.
pub fn alpha_ablation<C: Classifier + ?Sized>(
    spec: &SweepSpec,
    dataset: &[(PointCloud, Label)],
    classifier: &C,
    alphas: &[f64],
) -> Result<AblationReport> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("no alpha values given".into()));
    }
    let base = run_sweep(spec, dataset, classifier)?;
    alpha_ablation_from(&base, alphas)
}

/// α-ablation over an existing table.
pub fn alpha_ablation_from(table: &SweepTable, alphas: &[f64]) -> Result<AblationReport> {
    let rows = alphas
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidArgument(format!("bad alpha {alpha}")));
            }
            let t = recertify(table, alpha)?;
            Ok(AblationRow {
                alpha,
                envelope_acr: acr_envelope(&t),
                per_scale_acr: (0..t.spec.scales.len()).map(|s| acr(&t, s)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { rows })
}

/// Draws a point uniformly from the ball of `radius` in ℓ1 (uniform
/// smoothing) or ℓ2 (Gaussian smoothing).
pub fn sample_in_ball<R: Rng + ?Sized>(
    family: DistributionFamily,
    dim: usize,
    radius: f64,
    rng: &mut R,
) -> Vec<f64> {
    let shrink = rng.random::<f64>().powf(1.0 / dim as f64) * radius;
    match family {
        DistributionFamily::Uniform => {
            let e: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            e.into_iter()
                .map(|v| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign * shrink * v / total
                })
                .collect()
        }
        DistributionFamily::Gaussian => {
            let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.into_iter().map(|v| shrink * v / norm).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SoundnessOptions {
    /// Offsets drawn per non-abstaining certificate.
    pub offsets: usize,
    /// Votes per offset.
    pub votes: u64,
}

impl Default for SoundnessOptions {
    fn default() -> Self {
        Self {
            offsets: 20,
            votes: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessRow {
    pub index: usize,
    pub scale: f64,
    pub predicted: Label,
    pub radius: f64,
    pub checks: usize,
    pub disagreements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub kind: String,
    pub certificates: usize,
    pub abstentions: usize,
    pub checks: usize,
    pub disagreements: usize,
    pub rows: Vec<SoundnessRow>,
}

impl SoundnessReport {
    pub fn failure_fraction(&self) -> f64 {
        if self.checks == 0 {
            0.0
        } else {
            self.disagreements as f64 / self.checks as f64
        }
    }
}

/// Certifies each (sample, scale) pair, then checks the smooth prediction at
/// random offsets inside the certified ball against the certified class.
pub fn soundness<C: Classifier + ?Sized>(
    spec: &SweepSpec,
    dataset: &[(PointCloud, Label)],
    classifier: &C,
    options: SoundnessOptions,
) -> Result<SoundnessReport> {
    spec.validate()?;
    let items: Vec<(usize, usize)> = (0..dataset.len())
        .flat_map(|i| (0..spec.scales.len()).map(move |s| (i, s)))
        .collect();
    let check = |&(i, s): &(usize, usize)| -> Result<(CertificationResult, Option<SoundnessRow>)> {
        let cloud = &dataset[i].0;
        let scale = spec.scales[s];
        let config = spec.config(scale);
        let seed = substream_seed(spec.base_seed, i as u64, s as u64);
        let cert = smooth_certify(classifier, cloud, spec.kind, &config, seed)?;
        let Some(predicted) = cert.predicted else {
            return Ok((cert, None));
        };
        let dim = param_dim(spec.kind, cloud.len());
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(0x50554e44);
        let mut disagreements = 0;
        for j in 0..options.offsets {
            let delta = sample_in_ball(spec.family, dim, cert.radius, &mut rng);
            let delta = DeformationParams::new(spec.kind, delta)?;
            let vote_seed = substream_seed(seed, j as u64, u64::MAX);
            let label = smooth_vote(classifier, cloud, &delta, &config, options.votes, vote_seed)?;
            if label != predicted {
                disagreements += 1;
            }
        }
        let row = SoundnessRow {
            index: i,
            scale,
            predicted,
            radius: cert.radius,
            checks: options.offsets,
            disagreements,
        };
        Ok((cert, Some(row)))
    };
    let results: Vec<_> = if classifier.is_serial() {
        items.iter().map(check).collect::<Result<_>>()?
    } else {
        items.par_iter().map(check).collect::<Result<_>>()?
    };
    let mut report = SoundnessReport {
        kind: spec.kind.to_string(),
        certificates: 0,
        abstentions: 0,
        checks: 0,
        disagreements: 0,
        rows: Vec::new(),
    };
    for (_, row) in results {
        match row {
            Some(r) => {
                report.certificates += 1;
                report.checks += r.checks;
                report.disagreements += r.disagreements;
                report.rows.push(r);
            }
            None => report.abstentions += 1,
        }
    }
    Ok(report)
}
