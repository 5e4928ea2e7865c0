use serde::{Deserialize, Serialize};

use super::MetricMeasureSpace;
use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::numeric::compensated_sum;

/// Open ball `B(center, radius) = {v : d(center, v) < radius}` and its mass.
#[derive(Clone, Debug, PartialEq)]
pub struct BallIndex {
    pub center: usize,
    pub radius: f64,
    /// Sorted vertex ids.
    pub members: Vec<usize>,
    pub mass: f64,
}

impl BallIndex {
    pub(crate) fn from_distances(
        space: &MetricMeasureSpace,
        center: usize,
        radius: f64,
        dist: &[f64],
    ) -> Self {
        let members: Vec<usize> = (0..dist.len()).filter(|&v| dist[v] < radius).collect();
        let mass = compensated_sum(members.iter().map(|&v| space.measure()[v]));
        Self { center, radius, members, mass }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Dyadic radii `r_max * 2^-k`, largest first, stopping before a radius
/// falls below `4h`.
pub fn dyadic_radii(r_max: f64, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= 4.0 * h * (1.0 - 1e-12) {
        out.push(r);
        r *= 0.5;
    }
    out
}

/// Radii for a mass-slope estimate below `r_max`: the dyadic radii when there
/// are at least four, otherwise five log-spaced radii from `2h` to `r_max`.
pub fn slope_radii(r_max: f64, h: f64) -> Vec<f64> {
    let dyadic = dyadic_radii(r_max, h);
    if dyadic.len() >= 4 {
        return dyadic;
    }
    let lo = 2.0 * h;
    (0..5).map(|k| r_max * (lo / r_max).powf(k as f64 / 4.0)).collect()
}

fn ball_masses(space: &MetricMeasureSpace, center: usize, radii: &[f64]) -> Result<Vec<f64>> {
    let dist = space.distances_from(center);
    radii
        .iter()
        .map(|&r| {
            let ball = BallIndex::from_distances(space, center, r, &dist);
            if ball.is_empty() {
                Err(Error::EmptyBall { center, radius: r })
            } else {
                Ok(ball.mass)
            }
        })
        .collect()
}

/// Largest observed doubling ratio `mu(B(x, 2r)) / mu(B(x, r))` over `radii`.
pub fn estimate_doubling(space: &MetricMeasureSpace, center: usize, radii: &[f64]) -> Result<f64> {
    if radii.is_empty() {
        return Err(Error::TooFewRadii { needed: 1, got: 0 });
    }
    let doubled: Vec<f64> = radii.iter().map(|r| 2.0 * r).collect();
    let small = ball_masses(space, center, radii)?;
    let large = ball_masses(space, center, &doubled)?;
    Ok(small
        .iter()
        .zip(&large)
        .map(|(s, l)| l / s)
        .fold(0.0, f64::max))
}

/// Fitted local dimensions at a vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DimensionEstimate {
    pub center: usize,
    pub radii: Vec<f64>,
    /// Least-squares slope of `log mu(B(x, r))` against `log r`: the
    /// pointwise dimension `Q(x)`.
    pub log_mass_slope: f64,
    /// `log2` of the doubling constant over the same radii: the upper
    /// dimension `Q`.
    pub global_q: f64,
    /// RMS residual of the log-log fit.
    pub fit_residual: f64,
}

pub fn estimate_pointwise_dimension(
    space: &MetricMeasureSpace,
    center: usize,
    radii: &[f64],
) -> Result<DimensionEstimate> {
    if radii.len() < 4 {
        return Err(Error::TooFewRadii { needed: 4, got: radii.len() });
    }
    let masses = ball_masses(space, center, radii)?;
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    let line = fit_line(&xs, &ys)
        .ok_or_else(|| Error::InvalidParameter("radii must not all coincide".into()))?;
    let doubling = estimate_doubling(space, center, radii)?;
    Ok(DimensionEstimate {
        center,
        radii: radii.to_vec(),
        log_mass_slope: line.slope,
        global_q: doubling.log2(),
        fit_residual: line.rms_residual,
    })
}
