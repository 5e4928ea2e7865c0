//! p-harmonic Green's functions from a point source.
//!
//! A singular function is the minimizer of `E(u) / p - s u(x0)` over fields
//! vanishing off `Omega`. It is p-harmonic on `Omega \ {x0}`, and its flux
//! pairing `K` against any cutoff equal to 1 at `x0` is the source strength.
//! Dividing by `K^(1/(p-1))` normalizes it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{closed_ball, level_set_capacity, solve_capacity, CapacityProblem};
use crate::error::{Error, Result};
use crate::mmspace::MetricMeasureSpace;
use crate::numeric::{compensated_sum, fmt_sig12, signed_pow};
use crate::penergy::{
    harmonic_residual, solve_dirichlet, DirichletProblem, EnergyConfig, PointSource, PotentialField, Start,
};
use crate::sets::VertexSet;

#[derive(Clone, Debug, PartialEq)]
pub struct GreenFunction {
    pub values: Vec<f64>,
    pub x0: usize,
    pub domain: VertexSet,
    pub p: f64,
    /// `K(G)`; 1 once normalized.
    pub k_value: f64,
    pub normalized: bool,
    /// Dirac strength whose Euler-Lagrange system the values solve.
    pub source_strength: f64,
    /// Normalized Euler-Lagrange residual of the solve.
    pub residual: f64,
    /// Final smoothing level of the solve, scaled along with the values.
    pub smoothing: f64,
}

impl GreenFunction {
    /// View as a potential field pinned to zero off the domain, carrying the
    /// point source.
    pub fn as_field(&self, space: &MetricMeasureSpace) -> PotentialField {
        let mut field = PotentialField::from_values(
            space,
            self.values.clone(),
            self.p,
            self.domain.complement(),
            Some(PointSource { vertex: self.x0, strength: self.source_strength }),
        );
        field.stats.epsilon = self.smoothing;
        field
    }

    pub fn peak(&self) -> f64 {
        self.values[self.x0]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            k_value: self.k_value * c.abs().powf(self.p - 1.0),
            source_strength: self.source_strength * c.abs().powf(self.p - 1.0),
            smoothing: self.smoothing * c.abs(),
            normalized: false,
            ..self.clone()
        }
    }

    pub fn to_file(&self) -> GreenFile {
        GreenFile {
            x0: self.x0,
            p: self.p,
            k: self.k_value,
            normalized: self.normalized,
            source_strength: self.source_strength,
            smoothing: self.smoothing,
            domain: self.domain.iter().collect(),
            values: self.values.clone(),
        }
    }
}

/// JSON form: `{"x0", "p", "k", "normalized", "values", ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GreenFile {
    pub x0: usize,
    pub p: f64,
    pub k: f64,
    pub normalized: bool,
    pub source_strength: f64,
    #[serde(default)]
    pub smoothing: f64,
    pub domain: Vec<usize>,
    pub values: Vec<f64>,
}

impl GreenFile {
    pub fn into_green(self) -> Result<GreenFunction> {
        let n = self.values.len();
        if self.x0 >= n || self.domain.iter().any(|&v| v >= n) {
            return Err(Error::InvalidParameter("green file refers to missing vertices".into()));
        }
        Ok(GreenFunction {
            domain: VertexSet::from_indices(n, self.domain),
            values: self.values,
            x0: self.x0,
            p: self.p,
            k_value: self.k,
            normalized: self.normalized,
            source_strength: self.source_strength,
            residual: f64::NAN,
            smoothing: self.smoothing,
        })
    }
}

/// Singular function with a unit source at `x0`; `k_value` is computed with
/// the default cutoff.
pub fn solve_singular(
    space: &MetricMeasureSpace,
    domain: &VertexSet,
    x0: usize,
    p: f64,
    cfg: &EnergyConfig,
) -> Result<GreenFunction> {
    solve_singular_with_strength(space, domain, x0, p, 1.0, cfg)
}

pub fn solve_singular_with_strength(
    space: &MetricMeasureSpace,
    domain: &VertexSet,
    x0: usize,
    p: f64,
    strength: f64,
    cfg: &EnergyConfig,
) -> Result<GreenFunction> {
    if domain.universe() != space.num_vertices() {
        return Err(Error::InvalidProblem("domain does not match the space".into()));
    }
    if x0 >= space.num_vertices() || !domain.contains(x0) || space.neighbors(x0).iter().any(|&(w, _)| !domain.contains(w)) {
        return Err(Error::SingularityOnBoundary { vertex: x0 });
    }
    if !(strength > 0.0 && strength.is_finite()) {
        return Err(Error::InvalidParameter(format!("source strength must be positive, got {strength}")));
    }
    let cfg = EnergyConfig { p, ..cfg.clone() };
    let problem = DirichletProblem::zero_outside(domain.clone()).with_source(PointSource { vertex: x0, strength });
    let field = solve_dirichlet(space, &problem, &cfg, Start::Harmonic)?;
    let mut green = GreenFunction {
        values: field.values,
        x0,
        domain: domain.clone(),
        p,
        k_value: f64::NAN,
        normalized: false,
        source_strength: strength,
        residual: field.stats.residual,
        smoothing: field.stats.epsilon,
    };
    let cutoff = default_cutoff(space, &green, &cfg)?;
    green.k_value = compute_k(space, &green, &cutoff, &cfg)?;
    Ok(green)
}

/// Radius of the default cutoff, in mesh cells.
pub const DEFAULT_CUTOFF_CELLS: f64 = 4.0;

/// p-capacitary potential of `closed ball(x0, rho)` in the Green domain.
pub fn cutoff_potential(
    space: &MetricMeasureSpace,
    g: &GreenFunction,
    rho: f64,
    cfg: &EnergyConfig,
) -> Result<PotentialField> {
    let core = closed_ball(space, g.x0, rho);
    if !core.is_subset(&g.domain) {
        return Err(Error::InvalidCutoff(format!("ball of radius {rho} leaves the domain")));
    }
    let problem = CapacityProblem::new(core, g.domain.clone(), g.p);
    Ok(solve_capacity(space, &problem, cfg)?.potential)
}

pub fn default_cutoff(space: &MetricMeasureSpace, g: &GreenFunction, cfg: &EnergyConfig) -> Result<PotentialField> {
    cutoff_potential(space, g, DEFAULT_CUTOFF_CELLS * space.h(), cfg)
}

/// `K(G) = sum_e V_e |dG_e|^(p-2) dG_e dphi_e` with edge differences divided by
/// the edge length.
pub fn compute_k(
    space: &MetricMeasureSpace,
    g: &GreenFunction,
    cutoff: &PotentialField,
    cfg: &EnergyConfig,
) -> Result<f64> {
    let _ = cfg;
    let phi = &cutoff.values;
    if phi.len() != space.num_vertices() {
        return Err(Error::InvalidCutoff("cutoff has the wrong length".into()));
    }
    if let Some(v) = phi.iter().position(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidCutoff(format!("cutoff leaves [0, 1] at vertex {v}")));
    }
    if phi[g.x0] != 1.0 {
        return Err(Error::InvalidCutoff("cutoff is not 1 at the singularity".into()));
    }
    if let Some(v) = (0..phi.len()).find(|&v| !g.domain.contains(v) && phi[v] != 0.0) {
        return Err(Error::InvalidCutoff(format!("cutoff is nonzero outside the domain at vertex {v}")));
    }
    let u = &g.values;
    Ok(compensated_sum(space.edges().iter().zip(space.edge_volumes()).map(|(e, w)| {
        let t = (u[e.a] - u[e.b]) / e.length;
        let dphi = (phi[e.a] - phi[e.b]) / e.length;
        w * signed_pow(t, g.p) * dphi
    })))
}

/// `K(G)^(-1/(p-1)) G`.
pub fn normalize(g: &GreenFunction, cfg: &EnergyConfig) -> GreenFunction {
    let _ = cfg;
    if g.normalized {
        return g.clone();
    }
    let c = g.k_value.powf(-1.0 / (g.p - 1.0));
    GreenFunction {
        values: g.values.iter().map(|v| c * v).collect(),
        k_value: 1.0,
        normalized: true,
        source_strength: g.source_strength / g.k_value,
        smoothing: g.smoothing * c,
        ..g.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Shell {
    pub r: f64,
    pub m: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub ball_mass: f64,
    pub ring_cap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RadialProfile {
    pub center: usize,
    pub shell_half_width: f64,
    /// Sorted by increasing radius.
    pub shells: Vec<Shell>,
}

impl RadialProfile {
    /// `r,m,M,ballMass,ringCap`; a missing ring capacity is left empty.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "r,m,M,ballMass,ringCap")?;
        for s in &self.shells {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_sig12(s.r),
                fmt_sig12(s.m),
                fmt_sig12(s.big_m),
                fmt_sig12(s.ball_mass),
                s.ring_cap.map(fmt_sig12).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// `m(r)`, `M(r)` as the extremes of `G` over `{v : |d(x0, v) - r| <= w}`.
pub fn radial_extrema(
    space: &MetricMeasureSpace,
    g: &GreenFunction,
    radii: &[f64],
    shell_half_width: f64,
) -> Result<RadialProfile> {
    let dist = space.distances_from(g.x0);
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    let mut shells = Vec::with_capacity(radii.len());
    for &r in &radii {
        let mut m = f64::INFINITY;
        let mut big_m = f64::NEG_INFINITY;
        for (v, &d) in dist.iter().enumerate() {
            if (d - r).abs() <= shell_half_width {
                m = m.min(g.values[v]);
                big_m = big_m.max(g.values[v]);
            }
        }
        if m > big_m {
            return Err(Error::EmptyShell { radius: r, half_width: shell_half_width });
        }
        let ball_mass = compensated_sum((0..dist.len()).filter(|&v| dist[v] < r).map(|v| space.measure()[v]));
        shells.push(Shell { r, m, big_m, ball_mass, ring_cap: None });
    }
    Ok(RadialProfile { center: g.x0, shell_half_width, shells })
}

/// Level pairs read off a profile: 0 and the shell values `(m + M)/2`,
/// ascending, and every pair `alpha < beta` among them.
pub fn profile_levels(profile: &RadialProfile) -> Vec<(f64, f64)> {
    let mut levels = vec![0.0];
    levels.extend(profile.shells.iter().map(|s| 0.5 * (s.m + s.big_m)));
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut pairs = Vec::new();
    for (i, &a) in levels.iter().enumerate() {
        for &b in &levels[i + 1..] {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Fills `ringCap(r) = Cap(closed ball(x0, r), B(x0, R))` for every shell with
/// `r < R`.
pub fn attach_ring_capacities(
    space: &MetricMeasureSpace,
    profile: &mut RadialProfile,
    big_r: f64,
    p: f64,
    cfg: &EnergyConfig,
) -> Result<()> {
    let caps: Vec<Result<Option<f64>>> = profile
        .shells
        .par_iter()
        .map(|s| {
            if s.r >= big_r {
                return Ok(None);
            }
            let problem = CapacityProblem::ring(space, profile.center, s.r, big_r, p)?;
            Ok(Some(solve_capacity(space, &problem, cfg)?.value))
        })
        .collect();
    for (shell, cap) in profile.shells.iter_mut().zip(caps) {
        shell.ring_cap = cap?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotEvaluated,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelRow {
    pub alpha: f64,
    pub beta: f64,
    pub capacity: f64,
    /// `capacity * (beta - alpha)^(p-1)`.
    pub product: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CriteriaReport {
    /// Positive on the domain and p-harmonic off the singularity.
    pub harmonic_positive: Verdict,
    pub min_value: f64,
    pub residual: f64,
    /// Zero off the domain, finite energy.
    pub vanishes_outside: Verdict,
    /// Peak value strictly increasing under mesh refinement.
    pub singularity: Verdict,
    pub level_sets: Verdict,
    pub levels: Vec<LevelRow>,
}

/// Relative tolerance of the criterion-4 product around its target.
pub const LEVEL_PRODUCT_TOL: f64 = 0.08;

/// Checks the four defining properties. `refinement_peaks` lists the values at
/// the singularity on successively refined meshes; without it the
/// singularity verdict is `NotEvaluated`. The level-set products must equal
/// 1 for a normalized function and `k_value` otherwise.
pub fn check_definition_criteria(
    space: &MetricMeasureSpace,
    g: &GreenFunction,
    levels: &[(f64, f64)],
    refinement_peaks: Option<&[f64]>,
    cfg: &EnergyConfig,
) -> Result<CriteriaReport> {
    let cfg = EnergyConfig { p: g.p, ..cfg.clone() };
    let field = g.as_field(space);
    let residual = harmonic_residual(space, &field, &g.domain, &cfg);
    let min_value = g.domain.iter().map(|v| g.values[v]).fold(f64::INFINITY, f64::min);
    let harmonic_positive = Verdict::from_bool(min_value > 0.0 && residual <= cfg.tol_rel);
    let outside_zero = (0..g.values.len()).all(|v| g.domain.contains(v) || g.values[v] == 0.0);
    let vanishes_outside = Verdict::from_bool(outside_zero && field.energy.is_finite());
    let singularity = match refinement_peaks {
        Some(peaks) if peaks.len() >= 2 => Verdict::from_bool(singularity_grows(peaks)),
        _ => Verdict::NotEvaluated,
    };
    let target = if g.normalized { 1.0 } else { g.k_value };
    let caps: Vec<Result<f64>> = levels
        .par_iter()
        .map(|&(a, b)| level_set_capacity(space, &field, a, b, g.p, &cfg))
        .collect();
    let mut rows = Vec::with_capacity(levels.len());
    for (&(alpha, beta), cap) in levels.iter().zip(caps) {
        // Level sets that do not form a condenser (disconnected or empty)
        // cannot belong to a Green's function.
        let capacity = match cap {
            Ok(c) => c,
            Err(Error::InvalidProblem(_) | Error::DisconnectedDomain(_) | Error::EmptyLevelSet { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        let product = capacity * (beta - alpha).powf(g.p - 1.0);
        let pass = (product / target - 1.0).abs() <= LEVEL_PRODUCT_TOL;
        rows.push(LevelRow { alpha, beta, capacity, product, pass });
    }
    let level_sets = if rows.is_empty() {
        Verdict::NotEvaluated
    } else {
        Verdict::from_bool(rows.iter().all(|r| r.pass))
    };
    Ok(CriteriaReport {
        harmonic_positive,
        min_value,
        residual,
        vanishes_outside,
        singularity,
        level_sets,
        levels: rows,
    })
}

/// Strictly increasing peak values.
pub fn singularity_grows(peaks: &[f64]) -> bool {
    peaks.windows(2).all(|w| w[1] > w[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GrowthRow {
    pub r: f64,
    /// `(m(r) - M(R)) ringCap(r)^(1/(p-1))`.
    pub upper: Option<f64>,
    /// `(M(r) - M(R)) ringCap(r)^(1/(p-1)) / (1 - r/r0)^p`.
    pub lower: Option<f64>,
    /// `m(r) <= M(R)`: the upper bound holds trivially and the row is skipped.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GrowthReport {
    pub outer_radius: f64,
    pub outer_max: f64,
    pub r0: Option<f64>,
    pub rows: Vec<GrowthRow>,
    pub upper_spread: f64,
    pub lower_spread: f64,
    pub pass: bool,
}

/// Largest allowed max/min spread of the growth quotients.
pub const GROWTH_SPREAD: f64 = 10.0;

/// Growth quotients of the two-sided bound. `R` is the outermost shell; `r0`
/// is the largest inner radius with `m(r0) >= M(R)`, and the lower quotient
/// uses the rows below it.
pub fn check_growth_bounds(profile: &RadialProfile, p: f64, cfg: &EnergyConfig) -> Result<GrowthReport> {
    let _ = cfg;
    let shells = &profile.shells;
    if shells.len() < 3 {
        return Err(Error::InsufficientRows { needed: 3, got: shells.len() });
    }
    let outer = shells.last().unwrap();
    let inner = &shells[..shells.len() - 1];
    let r0 = inner.iter().rev().find(|s| s.m >= outer.big_m).map(|s| s.r);
    let rows: Vec<GrowthRow> = inner
        .iter()
        .map(|s| {
            let cap = s.ring_cap.map(|c| c.powf(1.0 / (p - 1.0)));
            let flagged = s.m <= outer.big_m;
            let upper = if flagged { None } else { cap.map(|c| (s.m - outer.big_m) * c) };
            let lower = match (r0, cap) {
                (Some(r0), Some(c)) if s.r < r0 && s.big_m > outer.big_m => {
                    Some((s.big_m - outer.big_m) * c / (1.0 - s.r / r0).powf(p))
                }
                _ => None,
            };
            GrowthRow { r: s.r, upper, lower, flagged }
        })
        .collect();
    let spread = |xs: Vec<f64>| -> Result<f64> {
        if xs.len() < 2 {
            return Err(Error::InsufficientRows { needed: 2, got: xs.len() });
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(hi / lo)
    };
    let upper_spread = spread(rows.iter().filter_map(|r| r.upper).collect())?;
    let lower_spread = spread(rows.iter().filter_map(|r| r.lower).collect())?;
    Ok(GrowthReport {
        outer_radius: outer.r,
        outer_max: outer.big_m,
        r0,
        pass: upper_spread <= GROWTH_SPREAD && lower_spread <= GROWTH_SPREAD,
        rows,
        upper_spread,
        lower_spread,
    })
}
