//! Point clouds and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * **XYZ** text: one point per line as three whitespace (or comma) separated
//!   decimals. Blank lines and anything after `#` are ignored.
//! * **PCB1** binary: the magic `PCB1`, a little-endian `u32` point count `N`,
//!   then `3·N` little-endian `f32` values in `x, y, z` point order.

use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Magic bytes opening a PCB1 file.
pub const PCB1_MAGIC: &[u8; 4] = b"PCB1";

const NORMALIZED_TOL: f64 = 1e-6;

/// An ordered, non-empty set of 3D points with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    normalized: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFiniteCoordinate { index });
        }
        Ok(Self {
            points,
            normalized: false,
        })
    }

    /// Builds a cloud and flags it as normalized, verifying the centroid sits
    /// at the origin and the farthest point lies on the unit sphere.
    pub fn new_normalized(points: Vec<Point>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        let c = cloud.centroid();
        if c.iter().any(|v| v.abs() >= NORMALIZED_TOL) {
            return Err(Error::InvalidArgument(format!(
                "centroid {c:?} is not at the origin"
            )));
        }
        let r = cloud.max_norm();
        if (r - 1.0).abs() > NORMALIZED_TOL {
            return Err(Error::InvalidArgument(format!(
                "max point norm {r} is not 1"
            )));
        }
        cloud.normalized = true;
        Ok(cloud)
    }

    /// Centers the cloud at the origin and scales it so the farthest point
    /// has unit norm. Degenerate clouds (all points equal) are only centered.
    pub fn normalize(&self) -> PointCloud {
        let c = self.centroid();
        let mut points: Vec<Point> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let r = points.iter().map(norm).fold(0.0, f64::max);
        if r > 0.0 {
            for p in &mut points {
                for v in p.iter_mut() {
                    *v /= r;
                }
            }
        }
        // Scaling can reintroduce a tiny centroid offset; remove it again.
        let c = centroid_of(&points);
        for p in &mut points {
            for (v, cv) in p.iter_mut().zip(c) {
                *v -= cv;
            }
        }
        let normalized = r > 0.0;
        PointCloud { points, normalized }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn centroid(&self) -> Point {
        centroid_of(&self.points)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Crate-internal constructor for points already known to be valid.
    pub(crate) fn from_valid(points: Vec<Point>) -> Self {
        debug_assert!(!points.is_empty());
        Self {
            points,
            normalized: false,
        }
    }

    pub fn read_xyz<R: BufRead>(reader: R) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "line {}: expected 3 fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut p = [0.0; 3];
            for (slot, field) in p.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| {
                    Error::Format(format!("line {}: bad number `{field}`", lineno + 1))
                })?;
            }
            points.push(p);
        }
        Self::new(points)
    }

    pub fn write_xyz<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    pub fn read_pcb1<R: Read>(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_or_truncated(&mut reader, &mut magic)?;
        if &magic != PCB1_MAGIC {
            return Err(Error::Format(format!("bad PCB1 magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        read_exact_or_truncated(&mut reader, &mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        let mut points = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let mut p = [0.0; 3];
            for v in &mut p {
                read_exact_or_truncated(&mut reader, &mut word)?;
                *v = f32::from_le_bytes(word) as f64;
            }
            points.push(p);
        }
        Self::new(points)
    }

    /// Writes PCB1. Coordinates are narrowed to `f32`.
    pub fn write_pcb1<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PCB1_MAGIC)?;
        let n = u32::try_from(self.points.len())
            .map_err(|_| Error::Format("too many points for PCB1".into()))?;
        w.write_all(&n.to_le_bytes())?;
        for p in &self.points {
            for v in p {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a cloud, choosing the format from the file contents: a leading
    /// `PCB1` magic selects the binary reader, anything else is parsed as XYZ.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(PCB1_MAGIC) {
            Self::read_pcb1(bytes.as_slice())
        } else {
            Self::read_xyz(bytes.as_slice())
        }
    }

    /// Saves in the format implied by the extension (`.pcb`/`.pcb1` binary,
    /// otherwise XYZ text).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("pcb") | Some("pcb1") => self.write_pcb1(&mut file)?,
            _ => self.write_xyz(&mut file)?,
        }
        file.flush()?;
        Ok(())
    }
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated PCB1 data".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn centroid_of(points: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for p in points {
        for (acc, v) in c.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let n = points.len() as f64;
    c.map(|v| v / n)
}
