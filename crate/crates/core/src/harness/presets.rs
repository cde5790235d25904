//! Default smoothing families and scale grids.
//!
//! Bounded parameter spaces (rotations, twisting) are smoothed uniformly and
//! certified in ℓ1; everything else is smoothed with Gaussians and certified
//! in ℓ2. Grids are geometric ladders `0.0125 · 2^k`; uniform angle ladders
//! end at `π`.

use std::f64::consts::PI;

use crate::deform::{DeformationKind, DistributionFamily};
use crate::error::{Error, Result};

pub const LADDER_BASE: f64 = 0.0125;

pub fn default_family(kind: DeformationKind) -> DistributionFamily {
    if kind.is_angular() {
        DistributionFamily::Uniform
    } else {
        DistributionFamily::Gaussian
    }
}

/// Geometric ladder `base · 2^k` for `k = 0..steps`.
pub fn ladder(base: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| base * f64::powi(2.0, k as i32))
        .collect()
}

/// The default grid of smoothing scales for `kind`.
pub fn default_scales(kind: DeformationKind) -> Vec<f64> {
    match default_family(kind) {
        DistributionFamily::Uniform => {
            let mut grid = ladder(LADDER_BASE, 8);
            grid.push(PI);
            grid
        }
        DistributionFamily::Gaussian => ladder(LADDER_BASE, 6),
    }
}

/// Parses one scale. A `deg` suffix converts degrees to radians; `pi` and
/// `pi/K` are accepted as shorthands.
pub fn parse_scale(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::InvalidArgument(format!("bad scale `{s}`"));
    let value = if let Some(deg) = s.strip_suffix("deg") {
        deg.trim().parse::<f64>().map_err(|_| bad())?.to_radians()
    } else if s == "pi" {
        PI
    } else if let Some(div) = s.strip_prefix("pi/") {
        PI / div.parse::<f64>().map_err(|_| bad())?
    } else {
        s.parse::<f64>().map_err(|_| bad())?
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(bad());
    }
    Ok(value)
}

/// Parses a comma-separated grid and checks it is strictly increasing.
pub fn parse_scales(s: &str) -> Result<Vec<f64>> {
    let grid = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(parse_scale)
        .collect::<Result<Vec<_>>>()?;
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("scale grid is empty".into()));
    }
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("scales must be positive".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "scale grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}
