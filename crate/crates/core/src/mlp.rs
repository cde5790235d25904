//! A small PointNet-style classifier: a shared per-point MLP (3→32→64, ReLU),
//! a global max pool over points, and a dense head (64→32→C).
//!
//! Parameters live in `f64` so gradients can be checked numerically, but
//! every model produced by [`MlpClassifier::new`] or [`mlp_train`] is rounded
//! to `f32` precision, which makes the 32-bit weight file lossless.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::classifier::{Classifier, Label};
use crate::cloud::PointCloud;
use crate::deform::{deform, sample_params, DeformationKind, NoiseDistribution};
use crate::error::{Error, Result};

pub const POINT_HIDDEN: usize = 32;
pub const POINT_FEATURES: usize = 64;
pub const HEAD_HIDDEN: usize = 32;

/// Magic bytes opening a weight file.
pub const WEIGHTS_MAGIC: &[u8; 4] = b"MLPW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Dense layer `y = W x + b` with `W` stored row-major (`rows` outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o = self.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` and writes `dx = Wᵀ dy`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let row = &mut grad.weights[r * self.cols..(r + 1) * self.cols];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (r, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weights[r * self.cols..(r + 1) * self.cols];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

/// The PointNet-lite model. Layers: point MLP (2), head (2).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    layers: [Dense; 4],
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Activations needed for backpropagation.
struct Trace {
    pooled: Vec<f64>,
    /// Index of the point that wins each pooled channel.
    winners: Vec<usize>,
    head_pre: Vec<f64>,
    head_act: Vec<f64>,
    scores: Vec<f64>,
}

/// Gradient with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    layers: [Dense; 4],
}

impl Gradient {
    pub fn values(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.params().copied())
            .collect()
    }
}

impl MlpClassifier {
    /// Fresh model with fan-in scaled Gaussian weights (`N(0, 2/fan_in)`) and
    /// zero biases, rounded to `f32`.
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut layers = Self::zero_layers(num_classes);
        for layer in &mut layers {
            let scale = (2.0 / layer.cols as f64).sqrt();
            for w in &mut layer.weights {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = z * scale;
            }
        }
        let mut model = Self { layers };
        model.round_to_f32();
        Ok(model)
    }

    fn zero_layers(num_classes: usize) -> [Dense; 4] {
        [
            Dense::zeros(POINT_HIDDEN, 3),
            Dense::zeros(POINT_FEATURES, POINT_HIDDEN),
            Dense::zeros(HEAD_HIDDEN, POINT_FEATURES),
            Dense::zeros(num_classes, HEAD_HIDDEN),
        ]
    }

    /// A model with every weight and bias zero.
    pub fn zeros(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            layers: Self::zero_layers(num_classes),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.layers[3].rows
    }

    pub fn layers(&self) -> &[Dense; 4] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened layer by layer (weights, then bias).
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.params().copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        for (dst, src) in self
            .layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .zip(values)
        {
            *dst = *src;
        }
        Ok(())
    }

    fn round_to_f32(&mut self) {
        for v in self.layers.iter_mut().flat_map(|l| l.params_mut()) {
            *v = *v as f32 as f64;
        }
    }

    fn trace(&self, cloud: &PointCloud) -> Trace {
        let [l1, l2, l3, l4] = &self.layers;
        let mut pooled = vec![f64::NEG_INFINITY; POINT_FEATURES];
        let mut winners = vec![0usize; POINT_FEATURES];
        let mut h1 = [0.0; POINT_HIDDEN];
        let mut h2 = [0.0; POINT_FEATURES];
        for (i, p) in cloud.points().iter().enumerate() {
            l1.forward(p, &mut h1);
            relu(&mut h1);
            l2.forward(&h1, &mut h2);
            relu(&mut h2);
            for (c, &v) in h2.iter().enumerate() {
                if v > pooled[c] {
                    pooled[c] = v;
                    winners[c] = i;
                }
            }
        }
        let mut head_pre = vec![0.0; HEAD_HIDDEN];
        l3.forward(&pooled, &mut head_pre);
        let mut head_act = head_pre.clone();
        relu(&mut head_act);
        let mut scores = vec![0.0; l4.rows];
        l4.forward(&head_act, &mut scores);
        Trace {
            pooled,
            winners,
            head_pre,
            head_act,
            scores,
        }
    }

    /// Class scores for `cloud`.
    pub fn forward(&self, cloud: &PointCloud) -> Vec<f64> {
        self.trace(cloud).scores
    }

    pub fn predict(&self, cloud: &PointCloud) -> Label {
        argmax(&self.forward(cloud))
    }

    /// Cross-entropy loss of `label` and its gradient for one cloud.
    pub fn loss_and_gradient(&self, cloud: &PointCloud, label: Label) -> (f64, Gradient) {
        let mut grad = Gradient {
            layers: Self::zero_layers(self.num_classes()),
        };
        let loss = self.accumulate_gradient(cloud, label, &mut grad, 1.0);
        (loss, grad)
    }

    /// Cross-entropy loss of `label`.
    pub fn loss(&self, cloud: &PointCloud, label: Label) -> f64 {
        cross_entropy(&self.trace(cloud).scores, label).0
    }

    /// Adds `weight · ∇loss` into `grad`; returns the loss.
    fn accumulate_gradient(
        &self,
        cloud: &PointCloud,
        label: Label,
        grad: &mut Gradient,
        weight: f64,
    ) -> f64 {
        let [l1, l2, l3, l4] = &self.layers;
        let [g1, g2, g3, g4] = &mut grad.layers;
        let t = self.trace(cloud);
        let (loss, mut d_scores) = cross_entropy(&t.scores, label);
        d_scores.iter_mut().for_each(|v| *v *= weight);

        let mut d_head = vec![0.0; HEAD_HIDDEN];
        l4.backward(&t.head_act, &d_scores, g4, Some(&mut d_head));
        for (d, &pre) in d_head.iter_mut().zip(&t.head_pre) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        let mut d_pooled = vec![0.0; POINT_FEATURES];
        l3.backward(&t.pooled, &d_head, g3, Some(&mut d_pooled));

        // Route pooled gradients back to the winning point of each channel.
        let mut order: Vec<usize> = (0..POINT_FEATURES).collect();
        order.sort_by_key(|&c| t.winners[c]);
        let points = cloud.points();
        let mut a1 = [0.0; POINT_HIDDEN];
        let mut h1 = [0.0; POINT_HIDDEN];
        let mut a2 = [0.0; POINT_FEATURES];
        let mut d2 = [0.0; POINT_FEATURES];
        let mut d1 = [0.0; POINT_HIDDEN];
        let mut start = 0;
        while start < order.len() {
            let point = t.winners[order[start]];
            let mut end = start;
            while end < order.len() && t.winners[order[end]] == point {
                end += 1;
            }
            let p = &points[point];
            l1.forward(p, &mut a1);
            h1.copy_from_slice(&a1);
            relu(&mut h1);
            l2.forward(&h1, &mut a2);
            d2.iter_mut().for_each(|v| *v = 0.0);
            for &c in &order[start..end] {
                if a2[c] > 0.0 {
                    d2[c] = d_pooled[c];
                }
            }
            l2.backward(&h1, &d2, g2, Some(&mut d1));
            for (d, &pre) in d1.iter_mut().zip(&a1) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            l1.backward(p, &d1, g1, None);
            start = end;
        }
        loss
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        self.write_weights(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Serializes as `MLPW`, `u16` version, `u16` layer count, then per layer
    /// `u32` rows, `u32` cols, row-major `f32` weights and `f32` biases, all
    /// little-endian.
    pub fn write_weights<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u16).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.rows as u32).to_le_bytes())?;
            w.write_all(&(layer.cols as u32).to_le_bytes())?;
            for v in layer.params() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_weights(fs::read(path)?.as_slice())
    }

    pub fn read_weights<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_full(&mut r, &mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::Format(format!("bad weight-file magic {magic:?}")));
        }
        let mut half = [0u8; 2];
        read_full(&mut r, &mut half)?;
        let version = u16::from_le_bytes(half);
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weight-file version {version}"
            )));
        }
        read_full(&mut r, &mut half)?;
        let count = u16::from_le_bytes(half) as usize;
        if count != 4 {
            return Err(Error::Shape(format!("expected 4 layers, found {count}")));
        }
        let mut word = [0u8; 4];
        let mut dims = Vec::with_capacity(4);
        let mut layers = Vec::with_capacity(4);
        for _ in 0..count {
            read_full(&mut r, &mut word)?;
            let rows = u32::from_le_bytes(word) as usize;
            read_full(&mut r, &mut word)?;
            let cols = u32::from_le_bytes(word) as usize;
            dims.push((rows, cols));
            let expected = [
                (POINT_HIDDEN, 3),
                (POINT_FEATURES, POINT_HIDDEN),
                (HEAD_HIDDEN, POINT_FEATURES),
            ];
            let i = layers.len();
            let ok = match expected.get(i) {
                Some(&e) => e == (rows, cols),
                None => rows >= 2 && cols == HEAD_HIDDEN,
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "layer {i} has shape {rows}x{cols}, which does not fit the architecture"
                )));
            }
            let mut layer = Dense::zeros(rows, cols);
            for v in layer.params_mut() {
                read_full(&mut r, &mut word)?;
                *v = f32::from_le_bytes(word) as f64;
            }
            layers.push(layer);
        }
        let layers: [Dense; 4] = layers
            .try_into()
            .map_err(|_| Error::Shape("layer count".into()))?;
        Ok(Self { layers })
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated weight file".into()),
        _ => Error::Io(e),
    })
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> Label {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy and its gradient with respect to the scores.
fn cross_entropy(scores: &[f64], label: Label) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (scores[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

impl Classifier for MlpClassifier {
    fn classify_batch(&self, clouds: &[PointCloud]) -> Result<Vec<Label>> {
        Ok(clouds.par_iter().map(|c| self.predict(c)).collect())
    }
}

/// Optional deformation augmentation applied to every training cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub kind: DeformationKind,
    pub distribution: NoiseDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: Option<Augmentation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
            augmentation: None,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// Writes the training log as CSV with columns `epoch,loss,train_acc`.
pub fn write_training_log<W: Write>(log: &[EpochStats], mut w: W) -> Result<()> {
    writeln!(w, "epoch,loss,train_acc")?;
    for s in log {
        writeln!(w, "{},{},{}", s.epoch, s.loss, s.train_acc)?;
    }
    Ok(())
}

/// Mini-batch SGD with momentum on mean cross-entropy.
///
/// With augmentation configured, each cloud is deformed by a freshly sampled
/// parameter vector every time it is visited. Accuracy in the log is measured
/// on the (possibly deformed) clouds seen during the epoch.
pub fn mlp_train(
    dataset: &[(PointCloud, Label)],
    config: &TrainConfig,
) -> Result<(MlpClassifier, Vec<EpochStats>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch size must be positive".into(),
        ));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite())
        || !(0.0..1.0).contains(&config.momentum)
    {
        return Err(Error::InvalidArgument(
            "learning rate must be nonnegative and momentum in [0, 1)".into(),
        ));
    }
    let classes = dataset.iter().map(|(_, l)| l + 1).max().unwrap_or(0).max(2);
    let mut model = MlpClassifier::new(classes, config.seed)?;
    let mut velocity = vec![0.0; model.num_params()];
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut grad = Gradient {
                layers: MlpClassifier::zero_layers(classes),
            };
            let weight = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (cloud, label) = &dataset[i];
                let sample = match &config.augmentation {
                    Some(aug) => {
                        let eps = sample_params(aug.kind, aug.distribution, cloud.len(), &mut rng)?;
                        deform(cloud, &eps)?
                    }
                    None => cloud.clone(),
                };
                let loss = model.accumulate_gradient(&sample, *label, &mut grad, weight);
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                total_loss += loss;
                if model.predict(&sample) == *label {
                    correct += 1;
                }
            }
            if config.learning_rate > 0.0 {
                let g = grad.values();
                let mut params = model.params();
                for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(g) {
                    *v = config.momentum * *v - config.learning_rate * g;
                    *p += *v;
                }
                model.set_params(&params)?;
            }
        }
        let loss = total_loss / dataset.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        log.push(EpochStats {
            epoch,
            loss,
            train_acc: correct as f64 / dataset.len() as f64,
        });
    }
    model.round_to_f32();
    Ok((model, log))
}
