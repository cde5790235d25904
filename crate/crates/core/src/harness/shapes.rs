//! Synthetic shape datasets and dataset directories.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier::Label;
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// Shape families; the label of a family is its position in [`ShapeFamily::ALL`].
///
/// The cylinder lies along the x axis and the cone along the y axis, so only
/// the sphere is invariant to rotations about z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    Sphere,
    Cube,
    Cylinder,
    Cone,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Sphere,
        ShapeFamily::Cube,
        ShapeFamily::Cylinder,
        ShapeFamily::Cone,
    ];

    pub fn label(self) -> Label {
        Self::ALL.iter().position(|f| *f == self).unwrap()
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Cube => "cube",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::Cone => "cone",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    pub n_points: usize,
    /// Standard deviation of Gaussian jitter added before normalization.
    pub jitter: f64,
    pub seed: u64,
}

/// Samples the surface of `spec.family`, jitters it, then centers the cloud
/// and scales it to unit max norm.
pub fn generate_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    if spec.n_points < 8 {
        return Err(Error::InvalidArgument(format!(
            "shapes need at least 8 points, got {}",
            spec.n_points
        )));
    }
    if !(spec.jitter >= 0.0 && spec.jitter.is_finite()) {
        return Err(Error::InvalidArgument("jitter must be nonnegative".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n = spec.n_points;
    let mut points = match spec.family {
        ShapeFamily::Sphere => sphere(n, &mut rng),
        ShapeFamily::Cube => symmetric(n, &mut rng, cube_point),
        ShapeFamily::Cylinder => {
            let radius = rng.random_range(0.25..0.45);
            symmetric(n, &mut rng, |r| cylinder_point(r, radius))
        }
        ShapeFamily::Cone => {
            let radius = rng.random_range(0.35..0.6);
            (0..n).map(|_| cone_point(&mut rng, radius)).collect()
        }
    };
    if spec.jitter > 0.0 {
        for p in &mut points {
            for v in p.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += spec.jitter * z;
            }
        }
    }
    let cloud = PointCloud::new(points)?.normalize();
    PointCloud::new_normalized(cloud.into_points())
}

fn gaussian3(rng: &mut ChaCha20Rng) -> Point {
    [(); 3].map(|_| StandardNormal.sample(&mut *rng))
}

fn unit(p: Point) -> Point {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    p.map(|v| v / n)
}

/// Antipodal pairs (plus one zero-sum triple for odd counts), so the
/// centroid is the origin and every point stays on the unit sphere.
fn sphere(n: usize, rng: &mut ChaCha20Rng) -> Vec<Point> {
    let mut points = Vec::with_capacity(n);
    let pairs = if n % 2 == 1 { (n - 3) / 2 } else { n / 2 };
    for _ in 0..pairs {
        let p = unit(gaussian3(rng));
        points.push(p);
        points.push(p.map(|v| -v));
    }
    if n % 2 == 1 {
        let u = unit(gaussian3(rng));
        let g = gaussian3(rng);
        let dot = g[0] * u[0] + g[1] * u[1] + g[2] * u[2];
        let v = unit([g[0] - dot * u[0], g[1] - dot * u[1], g[2] - dot * u[2]]);
        for k in 0..3 {
            let (s, c) = (2.0 * PI * k as f64 / 3.0).sin_cos();
            points.push([0, 1, 2].map(|i| c * u[i] + s * v[i]));
        }
    }
    points
}

fn symmetric(
    n: usize,
    rng: &mut ChaCha20Rng,
    mut sample: impl FnMut(&mut ChaCha20Rng) -> Point,
) -> Vec<Point> {
    let mut points = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let p = sample(rng);
        points.push(p);
        points.push(p.map(|v| -v));
    }
    if n % 2 == 1 {
        points.push(sample(rng));
    }
    points
}

fn cube_point(rng: &mut ChaCha20Rng) -> Point {
    let face = rng.random_range(0..6usize);
    let sign = if face < 3 { -1.0 } else { 1.0 };
    let fixed = face % 3;
    let mut p = [0.0; 3];
    for (i, v) in p.iter_mut().enumerate() {
        *v = if i == fixed {
            sign
        } else {
            rng.random_range(-1.0..1.0)
        };
    }
    p
}

/// Cylinder of half-length 1 along x.
fn cylinder_point(rng: &mut ChaCha20Rng, radius: f64) -> Point {
    let lateral = 2.0 * PI * radius * 2.0;
    let caps = 2.0 * PI * radius * radius;
    if rng.random_range(0.0..lateral + caps) < lateral {
        let theta = rng.random_range(0.0..2.0 * PI);
        let (s, c) = theta.sin_cos();
        [rng.random_range(-1.0..1.0), radius * c, radius * s]
    } else {
        let r = radius * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..2.0 * PI);
        let (s, c) = theta.sin_cos();
        let x = if rng.random::<bool>() { 1.0 } else { -1.0 };
        [x, r * c, r * s]
    }
}

/// Cone with apex at y = 1 and base of `radius` at y = -1.
fn cone_point(rng: &mut ChaCha20Rng, radius: f64) -> Point {
    let slant = (radius * radius + 4.0).sqrt();
    let lateral = PI * radius * slant;
    let base = PI * radius * radius;
    let theta = rng.random_range(0.0..2.0 * PI);
    let (s, c) = theta.sin_cos();
    if rng.random_range(0.0..lateral + base) < lateral {
        let t = rng.random::<f64>().sqrt();
        [radius * t * c, 1.0 - 2.0 * t, radius * t * s]
    } else {
        let r = radius * rng.random::<f64>().sqrt();
        [r * c, -1.0, r * s]
    }
}

/// `per_class` shapes of every family, interleaved by class.
pub fn synthetic_dataset(
    per_class: usize,
    n_points: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<(PointCloud, Label)>> {
    let mut out = Vec::with_capacity(per_class * ShapeFamily::ALL.len());
    for i in 0..per_class {
        for family in ShapeFamily::ALL {
            let spec = ShapeSpec {
                family,
                n_points,
                jitter,
                seed: crate::smoothing::substream_seed(seed, i as u64, family.label() as u64),
            };
            out.push((generate_shape(&spec)?, family.label()));
        }
    }
    Ok(out)
}

/// Name of the index file inside a dataset directory.
pub const LABELS_FILE: &str = "labels.csv";

/// Writes each cloud as `NNNNN.pcb` plus a `labels.csv` index (`file,label`).
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &[(PointCloud, Label)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut index = fs::File::create(dir.join(LABELS_FILE))?;
    writeln!(index, "file,label")?;
    for (i, (cloud, label)) in dataset.iter().enumerate() {
        let name = format!("{i:05}.pcb");
        cloud.save(dir.join(&name))?;
        writeln!(index, "{name},{label}")?;
    }
    Ok(())
}

/// Reads a directory written by [`write_dataset`] (any mix of PCB1 and XYZ
/// files listed in `labels.csv`).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(PointCloud, Label)>> {
    let dir = dir.as_ref();
    let index = BufReader::new(fs::File::open(dir.join(LABELS_FILE))?);
    let mut out = Vec::new();
    for (lineno, line) in index.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || lineno == 0 && line.starts_with("file") {
            continue;
        }
        let (file, label) = line.split_once(',').ok_or_else(|| {
            Error::Format(format!(
                "{LABELS_FILE}:{}: expected `file,label`",
                lineno + 1
            ))
        })?;
        let label: Label = label.trim().parse().map_err(|_| {
            Error::Format(format!("{LABELS_FILE}:{}: bad label `{label}`", lineno + 1))
        })?;
        out.push((PointCloud::load(dir.join(file.trim()))?, label));
    }
    Ok(out)
}
