//! Base classifiers `f` and the hard-label interface the certifier consumes.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cloud::{norm, PointCloud};
use crate::error::{Error, Result};

/// Class index in `[0, C)`.
pub type Label = usize;

/// Hard-label access to a base classifier.
///
/// Implementations must be deterministic: the same cloud always receives the
/// same label. Only labels cross this boundary.
pub trait Classifier: Send + Sync {
    /// One label per cloud, in input order.
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>>;

    /// Serial classifiers cannot take concurrent queries; the harness then
    /// funnels all work through a single ordered queue.
    fn is_serial(&self) -> bool {
        false
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        (**self).classify_batch(clouds)
    }

    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        (**self).classify_batch(clouds)
    }

    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
}

impl<C: Classifier + ?Sized> Classifier for Arc<C> {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        (**self).classify_batch(clouds)
    }

    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
}

/// Always answers the same class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantClassifier(pub Label);

impl Classifier for ConstantClassifier {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        Ok(vec![self.0; clouds.len()])
    }
}

/// Wraps a plain function of one cloud.
pub struct FnClassifier<F>(pub F);

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&PointCloud) -> Label + Send + Sync,
{
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        Ok(clouds.iter().map(&self.0).collect())
    }
}

pub const FEATURE_DIM: usize = 7;

/// Permutation-invariant summary of a cloud: per-axis means, per-axis
/// (population) standard deviations, and mean point norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn of(cloud: &PointCloud) -> FeatureVector {
        let n = cloud.len() as f64;
        let mut mean = [0.0; 3];
        let mut mean_norm = 0.0;
        for p in cloud.points() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
            mean_norm += norm(p);
        }
        mean = mean.map(|m| m / n);
        let mut var = [0.0; 3];
        for p in cloud.points() {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var.map(|s| (s / n).sqrt());
        FeatureVector([
            mean[0],
            mean[1],
            mean[2],
            sd[0],
            sd[1],
            sd[2],
            mean_norm / n,
        ])
    }

    pub fn distance_sq(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Nearest-centroid classifier in [`FeatureVector`] space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidClassifier {
    centroids: Vec<FeatureVector>,
}

#[derive(Serialize, Deserialize)]
struct CentroidFile {
    format: String,
    centroids: Vec<FeatureVector>,
}

const CENTROID_FORMAT: &str = "centroid-v1";

impl CentroidClassifier {
    pub fn new(centroids: Vec<FeatureVector>) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a centroid classifier needs at least 2 classes, got {}",
                centroids.len()
            )));
        }
        Ok(Self { centroids })
    }

    /// Averages the features of each class. Every label in `0..=max_label`
    /// must occur at least once.
    pub fn fit(dataset: &[(PointCloud, Label)]) -> Result<Self> {
        let classes = dataset
            .iter()
            .map(|(_, l)| l + 1)
            .max()
            .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let mut sums = vec![[0.0; FEATURE_DIM]; classes];
        let mut counts = vec![0usize; classes];
        for (cloud, label) in dataset {
            let f = FeatureVector::of(cloud);
            for (s, v) in sums[*label].iter_mut().zip(f.0) {
                *s += v;
            }
            counts[*label] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "class {empty} has no training examples"
            )));
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| FeatureVector(s.map(|v| v / c as f64)))
            .collect();
        Self::new(centroids)
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[FeatureVector] {
        &self.centroids
    }

    pub fn predict(&self, cloud: &PointCloud) -> Label {
        let f = FeatureVector::of(cloud);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = f.distance_sq(c);
            // strict comparison keeps the lowest index on ties
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CentroidFile {
            format: CENTROID_FORMAT.into(),
            centroids: self.centroids.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CentroidFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != CENTROID_FORMAT {
            return Err(Error::Format(format!(
                "expected format `{CENTROID_FORMAT}`, found `{}`",
                file.format
            )));
        }
        Self::new(file.centroids)
    }
}

impl Classifier for CentroidClassifier {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        Ok(clouds.iter().map(|c| self.predict(c)).collect())
    }
}
