//! Certified-accuracy curves, envelopes and ACR.
//!
//! Certified accuracy at radius `R` is the fraction of samples whose smooth
//! prediction is correct with radius at least `R`. Abstentions and failures
//! count as wrong. ACR averages the radius of correct predictions, with zero
//! for every other sample.

use serde::Serialize;

use super::sweep::SweepTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub radius: f64,
    pub accuracy: f64,
}

/// A nonincreasing step function sampled at its breakpoints: the accuracy at
/// any `R` is that of the first breakpoint with `radius ≥ R`, and 0 past the
/// last one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn accuracy_at(&self, r: f64) -> f64 {
        self.points
            .iter()
            .find(|p| p.radius >= r)
            .map_or(0.0, |p| p.accuracy)
    }

    pub fn max_radius(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.radius)
    }

    /// `count` evenly spaced samples on `[0, max_radius]`.
    pub fn sample(&self, count: usize) -> Vec<CurvePoint> {
        let max = self.max_radius();
        (0..count)
            .map(|i| {
                let r = if count > 1 {
                    max * i as f64 / (count - 1) as f64
                } else {
                    0.0
                };
                CurvePoint {
                    radius: r,
                    accuracy: self.accuracy_at(r),
                }
            })
            .collect()
    }
}

fn breakpoints(radii: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut bp: Vec<f64> = std::iter::once(0.0).chain(radii).collect();
    bp.sort_by(f64::total_cmp);
    bp.dedup();
    bp
}

/// Fraction of samples certified correct at radius `r` for one scale.
pub fn certified_accuracy_at(table: &SweepTable, scale_index: usize, r: f64) -> f64 {
    if table.samples == 0 {
        return 0.0;
    }
    let hits = table
        .rows_at_scale(scale_index)
        .filter(|row| row.is_correct() && row.radius() >= r)
        .count();
    hits as f64 / table.samples as f64
}

/// The certified-accuracy curve at one scale.
pub fn curve(table: &SweepTable, scale_index: usize) -> Curve {
    let bp = breakpoints(
        table
            .rows_at_scale(scale_index)
            .filter(|r| r.is_correct())
            .map(|r| r.radius()),
    );
    Curve {
        points: bp
            .into_iter()
            .map(|r| CurvePoint {
                radius: r,
                accuracy: certified_accuracy_at(table, scale_index, r),
            })
            .collect(),
    }
}

/// Pointwise maximum of the per-scale curves.
pub fn envelope(table: &SweepTable) -> Curve {
    let curves: Vec<Curve> = (0..table.spec.scales.len())
        .map(|s| curve(table, s))
        .collect();
    let bp = breakpoints(
        curves
            .iter()
            .flat_map(|c| c.points.iter().map(|p| p.radius)),
    );
    Curve {
        points: bp
            .into_iter()
            .map(|r| CurvePoint {
                radius: r,
                accuracy: curves.iter().map(|c| c.accuracy_at(r)).fold(0.0, f64::max),
            })
            .collect(),
    }
}

/// Average certified radius at one scale.
pub fn acr(table: &SweepTable, scale_index: usize) -> f64 {
    if table.samples == 0 {
        return 0.0;
    }
    table
        .rows_at_scale(scale_index)
        .map(|r| r.correct_radius())
        .sum::<f64>()
        / table.samples as f64
}

/// Each sample's best radius over the grid (0 unless correct somewhere).
pub fn best_radii(table: &SweepTable) -> Vec<f64> {
    let mut best = vec![0.0f64; table.samples];
    for row in &table.rows {
        best[row.index] = best[row.index].max(row.correct_radius());
    }
    best
}

/// ACR over each sample's best radius across the grid.
pub fn acr_envelope(table: &SweepTable) -> f64 {
    if table.samples == 0 {
        return 0.0;
    }
    best_radii(table).iter().sum::<f64>() / table.samples as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSummary {
    pub scale: f64,
    pub acr: f64,
    pub clean_accuracy: f64,
    pub abstain_rate: f64,
}

/// The JSON summary emitted next to each sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub kind: String,
    pub distribution: String,
    pub samples: usize,
    pub failures: usize,
    pub per_scale: Vec<ScaleSummary>,
    pub envelope_acr: f64,
    /// Envelope sampled at 64 evenly spaced radii.
    pub envelope_curve: Vec<CurvePoint>,
}

pub const SUMMARY_CURVE_POINTS: usize = 64;

pub fn summarize(table: &SweepTable) -> SweepSummary {
    let per_scale = table
        .spec
        .scales
        .iter()
        .enumerate()
        .map(|(s, &scale)| {
            let abstains = table
                .rows_at_scale(s)
                .filter(|r| r.predicted().is_none())
                .count();
            ScaleSummary {
                scale,
                acr: acr(table, s),
                clean_accuracy: certified_accuracy_at(table, s, 0.0),
                abstain_rate: if table.samples == 0 {
                    0.0
                } else {
                    abstains as f64 / table.samples as f64
                },
            }
        })
        .collect();
    SweepSummary {
        kind: table.spec.kind.to_string(),
        distribution: table.spec.family.to_string(),
        samples: table.samples,
        failures: table.failures(),
        per_scale,
        envelope_acr: acr_envelope(table),
        envelope_curve: envelope(table).sample(SUMMARY_CURVE_POINTS),
    }
}
