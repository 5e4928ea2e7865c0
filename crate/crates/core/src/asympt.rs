//! Local behavior of Green's functions: model fits, integrability scans and
//! sphere Harnack ratios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::CONFORMAL_BAND;
use crate::error::{Error, Result};
use crate::fit::fit_line;
use crate::green::{normalize, solve_singular, GreenFunction, RadialProfile};
use crate::mmspace::{estimate_pointwise_dimension, slope_radii, DimensionEstimate, Generator, MetricMeasureSpace};
use crate::numeric::compensated_sum;
use crate::penergy::EnergyConfig;
use crate::sets::VertexSet;

/// Allowed deviation of the model-variable slope from 1.
pub const SLOPE_TOL: f64 = 0.15;
/// Minimal coefficient of determination for a passing fit.
pub const MIN_R_SQUARED: f64 = 0.97;
/// Minimal number of shells inside the fit window.
pub const MIN_FIT_SHELLS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    PowerLaw,
    ConformalLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitReport {
    pub model: FitModel,
    pub fitted_slope: f64,
    pub predicted_slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub radii_range: (f64, f64),
    pub shells_used: usize,
    pub pass: bool,
}

/// Fit window `[4h, R0/4]`.
pub fn default_window(h: f64, r0: f64) -> (f64, f64) {
    (4.0 * h, 0.25 * r0)
}

/// Regresses the shell value `(m + M)/2` against the model variable.
///
/// Off the conformal band the fit is log-log against
/// `(r^p / mu(B(x0, r)))^(1/(p-1))` and should have slope 1. In the band the
/// shell value is fitted linearly against `log(R0 / r)` with `R0 = 4 r_max`;
/// only the coefficient of determination gates the verdict there.
pub fn fit_local_behavior(
    profile: &RadialProfile,
    g: &GreenFunction,
    dim: &DimensionEstimate,
    window: (f64, f64),
) -> Result<FitReport> {
    let p = g.p;
    let shells: Vec<_> = profile
        .shells
        .iter()
        .filter(|s| s.r >= window.0 * (1.0 - 1e-12) && s.r <= window.1 * (1.0 + 1e-12))
        .collect();
    if shells.len() < MIN_FIT_SHELLS {
        return Err(Error::InsufficientShells { needed: MIN_FIT_SHELLS, got: shells.len() });
    }
    let values: Vec<f64> = shells.iter().map(|s| 0.5 * (s.m + s.big_m)).collect();
    let conformal = (p - dim.log_mass_slope).abs() <= CONFORMAL_BAND;
    let (model, xs, ys) = if conformal {
        let r0 = 4.0 * window.1;
        let xs = shells.iter().map(|s| (r0 / s.r).ln()).collect::<Vec<_>>();
        (FitModel::ConformalLog, xs, values)
    } else {
        let xs = shells
            .iter()
            .map(|s| (s.r.powf(p) / s.ball_mass).ln() / (p - 1.0))
            .collect::<Vec<_>>();
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("shell values must be positive for a log fit".into()));
        }
        (FitModel::PowerLaw, xs, values.iter().map(|v| v.ln()).collect())
    };
    let line = fit_line(&xs, &ys).ok_or(Error::InsufficientShells { needed: MIN_FIT_SHELLS, got: shells.len() })?;
    let (predicted, pass) = match model {
        FitModel::PowerLaw => (1.0, (line.slope - 1.0).abs() <= SLOPE_TOL && line.r_squared >= MIN_R_SQUARED),
        FitModel::ConformalLog => (line.slope, line.slope > 0.0 && line.r_squared >= MIN_R_SQUARED),
    };
    Ok(FitReport {
        model,
        fitted_slope: line.slope,
        predicted_slope: predicted,
        intercept: line.intercept,
        r_squared: line.r_squared,
        radii_range: (shells[0].r, shells[shells.len() - 1].r),
        shells_used: shells.len(),
        pass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormTarget {
    /// `sum_{v in B} mu_v |G_v|^q`.
    Function,
    /// `sum_{e in B} V_e |dG_e / l_e|^q`.
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Bounded,
    Diverging,
    Inconclusive,
}

/// Ratio of the last to the first norm above which a rising sequence diverges.
pub const DIVERGING_RATIO: f64 = 1.5;
/// Relative band within which a sequence is bounded.
pub const BOUNDED_BAND: f64 = 0.15;

/// Diverging iff strictly increasing with `last / first > 1.5`; bounded iff
/// `max / min <= 1.15`.
pub fn classify_trend(norms: &[f64]) -> Trend {
    if norms.len() < 2 {
        return Trend::Inconclusive;
    }
    let increasing = norms.windows(2).all(|w| w[1] > w[0]);
    if increasing && norms[norms.len() - 1] / norms[0] > DIVERGING_RATIO {
        return Trend::Diverging;
    }
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 && hi / lo <= 1.0 + BOUNDED_BAND {
        Trend::Bounded
    } else {
        Trend::Inconclusive
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntegrabilityReport {
    pub q: f64,
    pub target: NormTarget,
    pub mesh_sequence: Vec<f64>,
    pub norms: Vec<f64>,
    pub trend: Trend,
    /// Critical exponent for the target with `Q(x0)` in the numerator and the
    /// doubling dimension `Q` in the denominator.
    pub critical_q: f64,
    /// The same exponent with `Q(x0)` in both places.
    pub critical_q_pointwise: f64,
}

/// `int_B |G|^q dmu` without the `1/q` root.
pub fn function_norm(space: &MetricMeasureSpace, values: &[f64], ball: &VertexSet, q: f64) -> f64 {
    compensated_sum(ball.iter().map(|v| space.measure()[v] * values[v].abs().powf(q)))
}

/// `int_B |grad G|^q dmu` over edges with both ends in the ball.
pub fn gradient_norm(space: &MetricMeasureSpace, values: &[f64], ball: &VertexSet, q: f64) -> f64 {
    compensated_sum(
        space
            .edges()
            .iter()
            .zip(space.edge_volumes())
            .filter(|(e, _)| ball.contains(e.a) && ball.contains(e.b))
            .map(|(e, w)| w * ((values[e.a] - values[e.b]).abs() / e.length).powf(q)),
    )
}

/// Norms of normalized Green's functions on refining meshes.
///
/// On each space the singularity is the vertex nearest `point` and the
/// domain is `B(x0, domain_radius)`. For each `q` two reports are produced,
/// one for `G` and one for its edge gradient, both integrated over
/// `B(x0, r)`.
pub fn integrability_scan(
    spaces: &[MetricMeasureSpace],
    point: &[f64],
    p: f64,
    q_list: &[f64],
    r: f64,
    domain_radius: f64,
    cfg: &EnergyConfig,
) -> Result<Vec<IntegrabilityReport>> {
    if spaces.len() < 2 {
        return Err(Error::InvalidParameter("need at least two meshes".into()));
    }
    if !(r > 0.0 && r <= domain_radius) {
        return Err(Error::InvalidParameter(format!("need 0 < r <= domain radius, got {r}")));
    }
    let mut per_mesh = Vec::with_capacity(spaces.len());
    for space in spaces {
        let x0 = space.nearest_vertex(point);
        let dist = space.distances_from(x0);
        let domain = VertexSet::from_predicate(dist.len(), |v| dist[v] < domain_radius);
        let ball = VertexSet::from_predicate(dist.len(), |v| dist[v] < r);
        let g = normalize(&solve_singular(space, &domain, x0, p, cfg)?, cfg);
        per_mesh.push((space, g, ball));
    }
    let finest = spaces.last().unwrap();
    let x0 = finest.nearest_vertex(point);
    let dim = estimate_pointwise_dimension(finest, x0, &slope_radii(r, finest.h()))?;
    let (qx, qg) = (dim.log_mass_slope, dim.global_q);
    let mesh_sequence: Vec<f64> = spaces.iter().map(|s| s.h()).collect();
    let mut out = Vec::new();
    for &q in q_list {
        for target in [NormTarget::Function, NormTarget::Gradient] {
            let norms: Vec<f64> = per_mesh
                .par_iter()
                .map(|(space, g, ball)| match target {
                    NormTarget::Function => function_norm(space, &g.values, ball, q),
                    NormTarget::Gradient => gradient_norm(space, &g.values, ball, q),
                })
                .collect();
            let (critical_q, critical_q_pointwise) = match target {
                NormTarget::Function => (qx * (p - 1.0) / (qg - p), qx * (p - 1.0) / (qx - p)),
                NormTarget::Gradient => (qx * (p - 1.0) / (qg - 1.0), qx * (p - 1.0) / (qx - 1.0)),
            };
            out.push(IntegrabilityReport {
                q,
                target,
                mesh_sequence: mesh_sequence.clone(),
                trend: classify_trend(&norms),
                norms,
                critical_q,
                critical_q_pointwise,
            });
        }
    }
    Ok(out)
}

/// Bound on `M(r)/m(r)` for symmetric grids.
pub const HARNACK_SYMMETRIC: f64 = 3.0;
/// Bound on `M(r)/m(r)` for cones and glued balls.
pub const HARNACK_SINGULAR: f64 = 10.0;

pub fn harnack_limit(generator: &Generator) -> f64 {
    match generator {
        Generator::Cone { .. } | Generator::Glued { .. } | Generator::Custom => HARNACK_SINGULAR,
        Generator::Grid { .. } | Generator::Path { .. } => HARNACK_SYMMETRIC,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HarnackReport {
    pub max_ratio: f64,
    pub limit: f64,
    pub pass: bool,
}

/// Largest `M(r)/m(r)` over the shells, checked against `limit`.
pub fn harnack_sphere_ratio(profile: &RadialProfile, limit: f64) -> Result<HarnackReport> {
    if profile.shells.is_empty() {
        return Err(Error::InsufficientShells { needed: 1, got: 0 });
    }
    let mut max_ratio: f64 = 0.0;
    for s in &profile.shells {
        if !(s.m > 0.0) {
            return Err(Error::DivisionByZero { radius: s.r });
        }
        max_ratio = max_ratio.max(s.big_m / s.m);
    }
    Ok(HarnackReport { max_ratio, limit, pass: max_ratio <= limit })
}
