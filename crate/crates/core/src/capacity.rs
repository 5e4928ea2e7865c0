//! Relative p-capacities, ring sweeps and the checks built on them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmspace::{estimate_pointwise_dimension, slope_radii, MetricMeasureSpace};
use crate::numeric::fmt_sig12;
use crate::penergy::{solve_dirichlet, DirichletProblem, EnergyConfig, PotentialField, Start};
use crate::sets::VertexSet;

/// Width of the band `|p - Q(x0)| <= CONFORMAL_BAND` treated as `p = Q(x0)`.
pub const CONFORMAL_BAND: f64 = 0.1;

/// Condenser `(K, Omega)` with exponent `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityProblem {
    pub core: VertexSet,
    pub domain: VertexSet,
    pub p: f64,
}

/// Closed ball `{v : d(center, v) <= r + h/2}`.
pub fn closed_ball(space: &MetricMeasureSpace, center: usize, r: f64) -> VertexSet {
    let dist = space.distances_from(center);
    closed_ball_from(space, &dist, r)
}

fn closed_ball_from(space: &MetricMeasureSpace, dist: &[f64], r: f64) -> VertexSet {
    let cut = r + 0.5 * space.h();
    VertexSet::from_predicate(dist.len(), |v| dist[v] <= cut)
}

fn open_ball_from(dist: &[f64], r: f64) -> VertexSet {
    VertexSet::from_predicate(dist.len(), |v| dist[v] < r)
}

impl CapacityProblem {
    pub fn new(core: VertexSet, domain: VertexSet, p: f64) -> Self {
        Self { core, domain, p }
    }

    /// `K = closed ball(center, r)`, `Omega = B(center, big_r)`.
    pub fn ring(space: &MetricMeasureSpace, center: usize, r: f64, big_r: f64, p: f64) -> Result<Self> {
        if !(r >= 0.0 && r < big_r) {
            return Err(Error::InvalidParameter(format!("need 0 <= r < R, got r = {r}, R = {big_r}")));
        }
        let dist = space.distances_from(center);
        let problem = Self::new(closed_ball_from(space, &dist, r), open_ball_from(&dist, big_r), p);
        problem.validate(space)?;
        Ok(problem)
    }

    pub fn validate(&self, space: &MetricMeasureSpace) -> Result<()> {
        let n = space.num_vertices();
        let invalid = |msg: &str| Err(Error::InvalidProblem(msg.to_string()));
        if self.core.universe() != n || self.domain.universe() != n {
            return invalid("vertex sets do not match the space");
        }
        if !(self.p > 1.0) {
            return Err(Error::InvalidParameter(format!("exponent p must exceed 1, got {}", self.p)));
        }
        if self.core.is_empty() {
            return invalid("core K is empty");
        }
        if !self.core.is_subset(&self.domain) {
            return invalid("core K is not contained in the domain");
        }
        if self.domain.len() == n {
            return invalid("domain has empty complement");
        }
        if !space.is_connected_subset(&self.domain) {
            return invalid("domain is not connected");
        }
        Ok(())
    }

    pub fn dirichlet(&self) -> DirichletProblem {
        DirichletProblem::zero_outside(self.domain.clone()).pin(&self.core, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapacityResult {
    pub value: f64,
    pub potential: PotentialField,
    pub problem: CapacityProblem,
}

/// Minimal p-energy over fields equal to 1 on `K` and 0 off `Omega`.
pub fn solve_capacity(
    space: &MetricMeasureSpace,
    problem: &CapacityProblem,
    cfg: &EnergyConfig,
) -> Result<CapacityResult> {
    problem.validate(space)?;
    let cfg = EnergyConfig { p: problem.p, ..cfg.clone() };
    let potential = solve_dirichlet(space, &problem.dirichlet(), &cfg, Start::Harmonic)?;
    Ok(CapacityResult { value: potential.energy, potential, problem: problem.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RingRow {
    pub r: f64,
    /// `None` when the solve failed; see `error`.
    pub cap: Option<f64>,
    pub ball_mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RingCapacityProfile {
    pub center: usize,
    pub outer_radius: f64,
    pub p: f64,
    pub pointwise_q: f64,
    /// Sorted by decreasing `r`.
    pub rows: Vec<RingRow>,
}

impl RingCapacityProfile {
    /// Rows whose solve succeeded, as `(r, cap, ballMass)`.
    pub fn valid_rows(&self) -> Vec<(f64, f64, f64)> {
        self.rows
            .iter()
            .filter_map(|row| row.cap.map(|c| (row.r, c, row.ball_mass)))
            .collect()
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.cap.is_none()).count()
    }

    /// `r,cap,ballMass`; failed rows carry an empty capacity.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "r,cap,ballMass")?;
        for row in &self.rows {
            let cap = row.cap.map(fmt_sig12).unwrap_or_default();
            writeln!(out, "{},{},{}", fmt_sig12(row.r), cap, fmt_sig12(row.ball_mass))?;
        }
        Ok(())
    }
}

/// Smallest sweep radius, in mesh cells, accepted by [`ring_capacity_sweep`].
pub const MIN_RADIUS_CELLS: f64 = 4.0;

/// One capacity solve per radius with `K = closed ball(x0, r)` and
/// `Omega = B(x0, R)`. Rows are solved concurrently and returned by
/// decreasing radius; a failed solve marks its row instead of aborting.
pub fn ring_capacity_sweep(
    space: &MetricMeasureSpace,
    center: usize,
    radii: &[f64],
    big_r: f64,
    p: f64,
    cfg: &EnergyConfig,
) -> Result<RingCapacityProfile> {
    ring_capacity_sweep_with_floor(space, center, radii, big_r, p, cfg, MIN_RADIUS_CELLS)
}

/// [`ring_capacity_sweep`] with the smallest admissible radius set to
/// `min_cells * h` instead of `4h`. Below two cells the discrete balls stop
/// resembling balls and the rows become meaningless.
pub fn ring_capacity_sweep_with_floor(
    space: &MetricMeasureSpace,
    center: usize,
    radii: &[f64],
    big_r: f64,
    p: f64,
    cfg: &EnergyConfig,
    min_cells: f64,
) -> Result<RingCapacityProfile> {
    if !(min_cells >= 2.0) {
        return Err(Error::InvalidParameter(format!("radius floor must be at least 2 cells, got {min_cells}")));
    }
    if radii.is_empty() {
        return Err(Error::TooFewRadii { needed: 1, got: 0 });
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    if radii[0] >= big_r {
        return Err(Error::InvalidParameter(format!("radius {} is not below R = {big_r}", radii[0])));
    }
    let smallest = *radii.last().unwrap();
    if smallest < min_cells * space.h() * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "radius {smallest} is below the resolved range {min_cells}h = {}",
            min_cells * space.h()
        )));
    }
    let dist = space.distances_from(center);
    let rows: Vec<RingRow> = radii
        .par_iter()
        .map(|&r| {
            let ball_mass = crate::numeric::compensated_sum(
                (0..dist.len()).filter(|&v| dist[v] < r).map(|v| space.measure()[v]),
            );
            let problem = CapacityProblem::new(closed_ball_from(space, &dist, r), open_ball_from(&dist, big_r), p);
            match solve_capacity(space, &problem, cfg) {
                Ok(res) => RingRow { r, cap: Some(res.value), ball_mass, error: None },
                Err(e) => RingRow { r, cap: None, ball_mass, error: Some(e.to_string()) },
            }
        })
        .collect();
    let q_radii = if radii.len() >= 4 { radii.clone() } else { slope_radii(big_r, space.h()) };
    let pointwise_q = estimate_pointwise_dimension(space, center, &q_radii)?.log_mass_slope;
    Ok(RingCapacityProfile { center, outer_radius: big_r, p, pointwise_q, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "p<Q")]
    SubConformal,
    #[serde(rename = "p=Q")]
    Conformal,
    #[serde(rename = "p>Q")]
    SuperConformal,
}

impl Regime {
    pub fn select(p: f64, pointwise_q: f64) -> Self {
        if (p - pointwise_q).abs() <= CONFORMAL_BAND {
            Regime::Conformal
        } else if p < pointwise_q {
            Regime::SubConformal
        } else {
            Regime::SuperConformal
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::SubConformal => "p<Q",
            Regime::Conformal => "p=Q",
            Regime::SuperConformal => "p>Q",
        }
    }

    /// Model expression whose ratio to the ring capacity is bounded above and
    /// below by constants.
    pub fn model(self, p: f64, q: f64, r: f64, big_r: f64, ball_mass: f64) -> f64 {
        match self {
            Regime::SubConformal => ball_mass / r.powf(p),
            Regime::Conformal => (big_r / r).ln().powf(1.0 - q),
            Regime::SuperConformal => {
                let a = (p - q) / (p - 1.0);
                ((2.0 * big_r).powf(a) - r.powf(a)).abs().powf(1.0 - p)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SandwichReport {
    pub regime: Regime,
    pub pointwise_q: f64,
    /// `cap / model` per valid row, by decreasing radius.
    pub ratios: Vec<f64>,
    pub fitted_lower_const: f64,
    pub fitted_upper_const: f64,
    pub spread: f64,
    pub pass: bool,
}

/// Largest allowed `max ratio / min ratio`.
pub const SANDWICH_SPREAD: f64 = 10.0;

pub fn check_capacity_sandwich(profile: &RingCapacityProfile) -> Result<SandwichReport> {
    let rows = profile.valid_rows();
    if rows.len() < 4 {
        return Err(Error::InsufficientRows { needed: 4, got: rows.len() });
    }
    let q = profile.pointwise_q;
    let regime = Regime::select(profile.p, q);
    let ratios: Vec<f64> = rows
        .iter()
        .map(|&(r, cap, mass)| cap / regime.model(profile.p, q, r, profile.outer_radius, mass))
        .collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi / lo;
    Ok(SandwichReport {
        regime,
        pointwise_q: q,
        ratios,
        fitted_lower_const: lo,
        fitted_upper_const: hi,
        spread,
        pass: lo > 0.0 && spread <= SANDWICH_SPREAD,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendVerdict {
    Pass,
    Fail,
    /// `p > Q(x0)`: points carry positive capacity and no decay is expected.
    NotApplicable,
}

/// Discrete surrogate for `Cap({x0}, Omega) = 0` when `p <= Q(x0)`: the ring
/// capacity decreases strictly with the radius and the smallest radius
/// carries less than half the capacity of the largest.
pub fn singleton_capacity_trend(profile: &RingCapacityProfile) -> TrendVerdict {
    if profile.p > profile.pointwise_q + CONFORMAL_BAND {
        return TrendVerdict::NotApplicable;
    }
    let rows = profile.valid_rows();
    if rows.len() < 2 || profile.failed_rows() > 0 {
        return TrendVerdict::Fail;
    }
    let decreasing = rows.windows(2).all(|w| w[1].1 < w[0].1);
    let halved = rows.last().unwrap().1 < 0.5 * rows[0].1;
    if decreasing && halved {
        TrendVerdict::Pass
    } else {
        TrendVerdict::Fail
    }
}

/// `Cap({field >= beta}, {field > alpha})`.
pub fn level_set_capacity(
    space: &MetricMeasureSpace,
    field: &PotentialField,
    alpha: f64,
    beta: f64,
    p: f64,
    cfg: &EnergyConfig,
) -> Result<f64> {
    if !(alpha >= 0.0 && alpha < beta) {
        return Err(Error::InvalidParameter(format!("need 0 <= alpha < beta, got ({alpha}, {beta})")));
    }
    let n = space.num_vertices();
    let core = VertexSet::from_predicate(n, |v| field.values[v] >= beta);
    if core.is_empty() {
        return Err(Error::EmptyLevelSet { level: beta });
    }
    let domain = VertexSet::from_predicate(n, |v| field.values[v] > alpha);
    Ok(solve_capacity(space, &CapacityProblem::new(core, domain, p), cfg)?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScalingRow {
    pub alpha: f64,
    pub beta: f64,
    pub measured: f64,
    pub predicted: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub pass: bool,
}

/// Relative tolerance of the level-set law per pair.
pub const SCALING_TOL: f64 = 0.05;

/// Checks `Cap({u >= beta}, {u > alpha}) = Cap(K, Omega) / (beta - alpha)^(p-1)`
/// for the potential `u` of a capacity problem.
pub fn verify_potential_scaling(
    space: &MetricMeasureSpace,
    cap: &CapacityResult,
    pairs: &[(f64, f64)],
    cfg: &EnergyConfig,
) -> Result<ScalingReport> {
    let p = cap.problem.p;
    for &(a, b) in pairs {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::InvalidParameter(format!("level pair ({a}, {b}) outside 0 <= a < b <= 1")));
        }
    }
    let measured: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| level_set_capacity(space, &cap.potential, a, b, p, cfg))
        .collect();
    let mut rows = Vec::with_capacity(pairs.len());
    for (&(alpha, beta), m) in pairs.iter().zip(measured) {
        let measured = m?;
        let predicted = cap.value / (beta - alpha).powf(p - 1.0);
        let rel_error = (measured / predicted - 1.0).abs();
        rows.push(ScalingRow { alpha, beta, measured, predicted, rel_error, pass: rel_error <= SCALING_TOL });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ScalingReport { rows, pass })
}

/// The pairs `{0, 1/4, 1/2, 3/4} x {1/4, 1/2, 3/4, 1}` with `alpha < beta`.
pub fn standard_level_pairs() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for a in [0.0, 0.25, 0.5, 0.75] {
        for b in [0.25, 0.5, 0.75, 1.0] {
            if a < b {
                out.push((a, b));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmspace::{build_grid, build_path, Edge, Generator, MetricMode};

    #[test]
    fn single_edge_network() {
        // Two free-standing vertices: K = {0}, Omega = {0}, vertex 1 outside.
        let s = MetricMeasureSpace::from_parts(
            1,
            0.5,
            Generator::Custom,
            MetricMode::GraphGeodesic,
            vec![0.0, 0.5],
            vec![2.0, 4.0],
            vec![Edge { a: 0, b: 1, length: 0.5 }],
        )
        .unwrap();
        let k = VertexSet::from_indices(2, [0]);
        for p in [1.5, 2.0, 3.0] {
            let res = solve_capacity(&s, &CapacityProblem::new(k.clone(), k.clone(), p), &EnergyConfig::default()).unwrap();
            let expected = 3.0 * 0.5f64.powf(-p);
            assert!((res.value - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn path_capacity_is_one_dimensional_formula() {
        // Cap({0}, [0, 1)) on a unit path: the linear potential has unit slope on
        // every edge and the edge volumes sum to the length.
        let s = build_path(1.0, 32).unwrap();
        let n = s.num_vertices();
        let k = VertexSet::from_indices(n, [0]);
        let omega = VertexSet::from_predicate(n, |v| v < n - 1);
        for p in [1.5, 2.0, 3.0] {
            let res = solve_capacity(&s, &CapacityProblem::new(k.clone(), omega.clone(), p), &EnergyConfig::default()).unwrap();
            assert!((res.value - 1.0).abs() < 1e-8, "p={p}: {}", res.value);
            assert_eq!(res.value, res.potential.energy);
        }
    }

    #[test]
    fn problem_validation() {
        let s = build_grid(2, 1.0, 0.125, 0.0).unwrap();
        let n = s.num_vertices();
        let o = s.nearest_vertex(&[0.0, 0.0]);
        assert!(CapacityProblem::ring(&s, o, 0.5, 0.25, 2.0).is_err());
        let full = VertexSet::full(n);
        let k = VertexSet::from_indices(n, [o]);
        assert!(matches!(
            solve_capacity(&s, &CapacityProblem::new(k.clone(), full, 2.0), &EnergyConfig::default()),
            Err(Error::InvalidProblem(_))
        ));
        let far = VertexSet::from_indices(n, [0]);
        let small = closed_ball(&s, o, 0.3);
        assert!(matches!(
            solve_capacity(&s, &CapacityProblem::new(far, small, 2.0), &EnergyConfig::default()),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn regime_selection() {
        assert_eq!(Regime::select(2.0, 2.05), Regime::Conformal);
        assert_eq!(Regime::select(2.0, 3.0), Regime::SubConformal);
        assert_eq!(Regime::select(3.0, 2.0), Regime::SuperConformal);
        assert_eq!(Regime::select(1.5, 1.55), Regime::Conformal);
    }

    #[test]
    fn insufficient_rows() {
        let profile = RingCapacityProfile {
            center: 0,
            outer_radius: 1.0,
            p: 2.0,
            pointwise_q: 2.0,
            rows: vec![RingRow { r: 0.5, cap: Some(1.0), ball_mass: 1.0, error: None }],
        };
        assert!(matches!(check_capacity_sandwich(&profile), Err(Error::InsufficientRows { .. })));
    }

    #[test]
    fn singleton_trend_regime_mismatch() {
        let profile = RingCapacityProfile {
            center: 0,
            outer_radius: 1.0,
            p: 3.0,
            pointwise_q: 2.0,
            rows: vec![],
        };
        assert_eq!(singleton_capacity_trend(&profile), TrendVerdict::NotApplicable);
    }

    #[test]
    fn standard_pairs_count() {
        assert_eq!(standard_level_pairs().len(), 10);
    }
}
