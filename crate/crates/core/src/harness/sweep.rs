//! Certification sweeps over a dataset and a grid of smoothing scales.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::presets::validate_grid;
use crate::classifier::{Classifier, Label};
use crate::cloud::PointCloud;
use crate::deform::{DeformationKind, DistributionFamily};
use crate::error::{Error, Result};
use crate::smoothing::{
    smooth_certify, substream_seed, CertificationResult, SampleCounts, SmoothingConfig,
};

/// Everything needed to run one sweep except the data and the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: DeformationKind,
    pub family: DistributionFamily,
    /// σ or λ values, strictly increasing.
    pub scales: Vec<f64>,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub batch: usize,
    pub base_seed: u64,
}

impl SweepSpec {
    pub fn new(kind: DeformationKind, family: DistributionFamily, scales: Vec<f64>) -> Self {
        Self {
            kind,
            family,
            scales,
            n0: SmoothingConfig::DEFAULT_N0,
            n: SmoothingConfig::DEFAULT_N,
            alpha: SmoothingConfig::DEFAULT_ALPHA,
            batch: SmoothingConfig::DEFAULT_BATCH,
            base_seed: 0,
        }
    }

    pub fn config(&self, scale: f64) -> SmoothingConfig {
        SmoothingConfig {
            distribution: self.family.with_scale(scale),
            n0: self.n0,
            n: self.n,
            alpha: self.alpha,
            batch: self.batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.scales)?;
        self.config(self.scales[0]).validate()
    }
}

/// One (sample, scale) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub label_true: Label,
    pub scale_index: usize,
    pub scale: f64,
    /// Failures (e.g. a dead oracle) are kept per row as text.
    pub outcome: std::result::Result<CertificationResult, String>,
}

impl SweepRow {
    pub fn predicted(&self) -> Option<Label> {
        self.outcome.as_ref().ok().and_then(|r| r.predicted)
    }

    pub fn radius(&self) -> f64 {
        self.outcome.as_ref().map_or(0.0, |r| r.radius)
    }

    /// Radius if the smooth prediction is correct, else 0.
    pub fn correct_radius(&self) -> f64 {
        if self.is_correct() {
            self.radius()
        } else {
            0.0
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted() == Some(self.label_true)
    }
}

/// Rows ordered by (sample, scale).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub samples: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn rows_at_scale(&self, scale_index: usize) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.scale_index == scale_index)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Certifies every sample at every scale.
///
/// Work items run on the rayon pool unless the classifier is serial. Each
/// item uses the seed `substream_seed(base_seed, sample, scale)`, so the
/// table does not depend on scheduling.
pub fn run_sweep<C: Classifier + ?Sized>(
    spec: &SweepSpec,
    dataset: &[(PointCloud, Label)],
    classifier: &C,
) -> Result<SweepTable> {
    spec.validate()?;
    let items: Vec<(usize, usize)> = (0..dataset.len())
        .flat_map(|i| (0..spec.scales.len()).map(move |s| (i, s)))
        .collect();
    let work = |&(i, s): &(usize, usize)| {
        let (cloud, label) = &dataset[i];
        let scale = spec.scales[s];
        let seed = substream_seed(spec.base_seed, i as u64, s as u64);
        let outcome = smooth_certify(classifier, cloud, spec.kind, &spec.config(scale), seed)
            .map_err(|e| e.to_string());
        SweepRow {
            index: i,
            label_true: *label,
            scale_index: s,
            scale,
            outcome,
        }
    };
    let rows = if classifier.is_serial() {
        items.iter().map(work).collect()
    } else {
        items.par_iter().map(work).collect()
    };
    Ok(SweepTable {
        spec: spec.clone(),
        samples: dataset.len(),
        rows,
    })
}

pub const CSV_HEADER: &str =
    "index,label_true,predicted,pa_lower,radius,abstain,sigma_or_lambda,kind,n0,n,alpha,seconds,error";

/// Output switches for report files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    /// When false, `seconds` is written as 0 so reruns are byte-identical.
    pub include_timing: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            include_timing: true,
        }
    }
}

fn clean(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

/// One CSV line per row; abstentions and failures have `predicted = -1`.
pub fn write_csv<W: Write>(table: &SweepTable, mut w: W, opts: ReportOptions) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    let spec = &table.spec;
    for row in &table.rows {
        let (predicted, pa, radius, secs, err) = match &row.outcome {
            Ok(r) => (
                r.predicted.map_or(-1, |p| p as i64),
                r.pa_lower,
                r.radius,
                if opts.include_timing { r.elapsed } else { 0.0 },
                String::new(),
            ),
            Err(e) => (-1, 0.0, 0.0, 0.0, clean(e)),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.index,
            row.label_true,
            predicted,
            pa,
            radius,
            predicted < 0,
            row.scale,
            spec.kind,
            spec.n0,
            spec.n,
            spec.alpha,
            secs,
            err
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonRow<'a> {
    index: usize,
    label_true: Label,
    predicted: Option<Label>,
    pa_lower: f64,
    radius: f64,
    abstain: bool,
    sigma_or_lambda: f64,
    kind: DeformationKind,
    n0: u64,
    n: u64,
    alpha: f64,
    seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// One JSON object per line with the same fields as the CSV.
pub fn write_jsonl<W: Write>(table: &SweepTable, mut w: W, opts: ReportOptions) -> Result<()> {
    let spec = &table.spec;
    for row in &table.rows {
        let (predicted, pa, radius, secs, error) = match &row.outcome {
            Ok(r) => (
                r.predicted,
                r.pa_lower,
                r.radius,
                if opts.include_timing { r.elapsed } else { 0.0 },
                None,
            ),
            Err(e) => (None, 0.0, 0.0, 0.0, Some(e.as_str())),
        };
        let obj = JsonRow {
            index: row.index,
            label_true: row.label_true,
            predicted,
            pa_lower: pa,
            radius,
            abstain: predicted.is_none(),
            sigma_or_lambda: row.scale,
            kind: spec.kind,
            n0: spec.n0,
            n: spec.n,
            alpha: spec.alpha,
            seconds: secs,
            error,
        };
        serde_json::to_writer(&mut w, &obj)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a table written by [`write_csv`]. Sample counts are not stored in
/// the CSV and come back as zero; the distribution family must be supplied.
pub fn read_csv<R: BufRead>(reader: R, family: DistributionFamily) -> Result<SweepTable> {
    let mut rows = Vec::new();
    let mut spec: Option<SweepSpec> = None;
    let mut scales: Vec<f64> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != CSV_HEADER {
                return Err(Error::Format("unexpected CSV header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.splitn(13, ',').collect();
        if f.len() != 13 {
            return Err(Error::Format(format!(
                "line {}: expected 13 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| Error::Format(format!("line {}: bad {what}", lineno + 1));
        let index: usize = f[0].parse().map_err(|_| bad("index"))?;
        let label_true: Label = f[1].parse().map_err(|_| bad("label_true"))?;
        let predicted: i64 = f[2].parse().map_err(|_| bad("predicted"))?;
        let pa_lower: f64 = f[3].parse().map_err(|_| bad("pa_lower"))?;
        let radius: f64 = f[4].parse().map_err(|_| bad("radius"))?;
        let scale: f64 = f[6].parse().map_err(|_| bad("sigma_or_lambda"))?;
        let kind: DeformationKind = f[7].parse()?;
        let n0: u64 = f[8].parse().map_err(|_| bad("n0"))?;
        let n: u64 = f[9].parse().map_err(|_| bad("n"))?;
        let alpha: f64 = f[10].parse().map_err(|_| bad("alpha"))?;
        let seconds: f64 = f[11].parse().map_err(|_| bad("seconds"))?;
        let error = f[12];
        if spec.is_none() {
            let mut s = SweepSpec::new(kind, family, Vec::new());
            s.n0 = n0;
            s.n = n;
            s.alpha = alpha;
            spec = Some(s);
        }
        let scale_index = match scales.iter().position(|v| *v == scale) {
            Some(i) => i,
            None => {
                scales.push(scale);
                scales.len() - 1
            }
        };
        let outcome = if error.is_empty() {
            Ok(CertificationResult {
                predicted: (predicted >= 0).then_some(predicted as Label),
                pa_lower,
                radius,
                counts: SampleCounts {
                    candidate: predicted.max(0) as Label,
                    selection_hits: 0,
                    selection_tie: false,
                    estimation_hits: 0,
                },
                elapsed: seconds,
            })
        } else {
            Err(error.to_string())
        };
        rows.push(SweepRow {
            index,
            label_true,
            scale_index,
            scale,
            outcome,
        });
    }
    let mut spec = spec.ok_or_else(|| Error::Format("CSV has no rows".into()))?;
    // Re-index scales in increasing order.
    let mut sorted = scales.clone();
    sorted.sort_by(f64::total_cmp);
    for row in &mut rows {
        row.scale_index = sorted.iter().position(|v| *v == row.scale).unwrap();
    }
    rows.sort_by_key(|r| (r.index, r.scale_index));
    let samples = rows.iter().map(|r| r.index + 1).max().unwrap_or(0);
    spec.scales = sorted;
    Ok(SweepTable {
        spec,
        samples,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConstantClassifier;

    fn tiny() -> Vec<(PointCloud, Label)> {
        vec![
            (
                PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.5]]).unwrap(),
                2,
            ),
            (
                PointCloud::new(vec![[0.0, 0.0, 1.0], [0.5, 0.1, 0.0]]).unwrap(),
                1,
            ),
        ]
    }

    #[test]
    fn three_rows_per_sample() {
        let mut spec = SweepSpec::new(
            DeformationKind::RotZ,
            DistributionFamily::Uniform,
            vec![0.1, 0.2, 0.4],
        );
        spec.n0 = 10;
        spec.n = 50;
        let t = run_sweep(&spec, &tiny(), &ConstantClassifier(2)).unwrap();
        assert_eq!(t.rows.len(), 6);
        let order: Vec<(usize, usize)> = t.rows.iter().map(|r| (r.index, r.scale_index)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let mut spec = SweepSpec::new(
            DeformationKind::TaperZ,
            DistributionFamily::Gaussian,
            vec![0.05, 0.1],
        );
        spec.n0 = 10;
        spec.n = 40;
        spec.base_seed = 99;
        let clf =
            crate::classifier::FnClassifier(|c: &PointCloud| usize::from(c.points()[0][0] > 0.99));
        let opts = ReportOptions {
            include_timing: false,
        };
        let a = run_sweep(&spec, &tiny(), &clf).unwrap();
        let b = run_sweep(&spec, &tiny(), &clf).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_csv(&a, &mut ca, opts).unwrap();
        write_csv(&b, &mut cb, opts).unwrap();
        assert_eq!(ca, cb);

        let back = read_csv(ca.as_slice(), DistributionFamily::Gaussian).unwrap();
        assert_eq!(back.samples, 2);
        assert_eq!(back.spec.scales, spec.scales);
        for (x, y) in back.rows.iter().zip(&a.rows) {
            assert_eq!(x.predicted(), y.predicted());
            assert_eq!(x.radius(), y.radius());
        }
    }

    #[test]
    fn failures_are_recorded_per_row() {
        struct Broken;
        impl Classifier for Broken {
            fn classify_batch(&self, _: &[PointCloud]) -> Result<Vec<Label>> {
                Err(Error::Protocol("peer went away, sorry".into()))
            }
        }
        let mut spec = SweepSpec::new(
            DeformationKind::RotZ,
            DistributionFamily::Uniform,
            vec![0.1],
        );
        spec.n0 = 5;
        spec.n = 5;
        let t = run_sweep(&spec, &tiny(), &Broken).unwrap();
        assert_eq!(t.failures(), 2);
        let mut out = Vec::new();
        write_csv(&t, &mut out, ReportOptions::default()).unwrap();
        let text = String::from_utf8(out).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 13);
        assert!(line.ends_with("protocol error: peer went away; sorry"));
    }

    #[test]
    fn jsonl_has_expected_keys() {
        let mut spec = SweepSpec::new(
            DeformationKind::RotZ,
            DistributionFamily::Uniform,
            vec![0.1],
        );
        spec.n0 = 5;
        spec.n = 5;
        let t = run_sweep(&spec, &tiny()[..1], &ConstantClassifier(2)).unwrap();
        let mut out = Vec::new();
        write_jsonl(&t, &mut out, ReportOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        for key in [
            "index",
            "label_true",
            "predicted",
            "pa_lower",
            "radius",
            "abstain",
            "sigma_or_lambda",
            "kind",
            "n0",
            "n",
            "alpha",
            "seconds",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["kind"], "rotz");
    }
}
