//! Discrete p-Dirichlet energy and its constrained minimization.
//!
//! For an edge `e = (a, b)` with length `l` and volume `V` the edge gradient
//! is `t = (u_a - u_b) / l` and the energy is `E(u) = sum_e V |t|^p`. The
//! minimizer of `E / p - s u(x0)` under Dirichlet data solves the discrete
//! Euler-Lagrange system
//!
//! ```text
//! sum_{e at v} (V / l) |t|^(p-2) t = s [v == x0]      for every free v.
//! ```
//!
//! The solver is a damped Newton method on the smoothed density
//! `V (t^2 + eps^2)^(p/2) / p`, with `eps` driven geometrically to a negligible
//! fraction of the gradient scale. For `p = 2` a single linear solve is exact.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{FreeMap, SpdSolver, PINNED};
use crate::mmspace::MetricMeasureSpace;
use crate::numeric::{compensated_sum, fmt_sig12, signed_pow, CompensatedSum};
use crate::sets::VertexSet;

/// Backend for the Newton systems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearBackend {
    /// Sparse Cholesky, switching to conjugate gradients for large 3D systems.
    #[default]
    Auto,
    Direct,
    Cg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub p: f64,
    /// Relative tolerance for the Euler-Lagrange residual and energy decrease.
    pub tol_rel: f64,
    /// Cap on Newton iterations over all continuation stages.
    pub max_iter: usize,
    /// Initial smoothing, relative to the largest edge gradient of the warm
    /// start.
    pub epsilon0: f64,
    /// Factor applied to the smoothing between stages.
    pub epsilon_decay: f64,
    /// Final smoothing, relative to the same gradient scale.
    pub epsilon_floor: f64,
    pub linear: LinearBackend,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            tol_rel: 1e-8,
            max_iter: 400,
            epsilon0: 1.0,
            epsilon_decay: 0.5,
            epsilon_floor: 1e-8,
            linear: LinearBackend::Auto,
        }
    }
}

impl EnergyConfig {
    pub fn with_p(p: f64) -> Self {
        Self { p, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.p > 1.0 && self.p.is_finite()) {
            return bad(format!("exponent p must exceed 1, got {}", self.p));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel < 1.0) {
            return bad(format!("tolRel must lie in (0, 1), got {}", self.tol_rel));
        }
        if self.max_iter == 0 {
            return bad("maxIter must be positive".into());
        }
        if !(self.epsilon0 >= 0.0 && self.epsilon0.is_finite()) {
            return bad(format!("epsilon0 must be non-negative, got {}", self.epsilon0));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay < 1.0) {
            return bad(format!("epsilonDecay must lie in (0, 1), got {}", self.epsilon_decay));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor <= 1e-6) {
            return bad(format!("epsilonFloor must lie in (0, 1e-6], got {}", self.epsilon_floor));
        }
        Ok(())
    }
}

/// A point functional `s * u(vertex)`, independent of the measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub vertex: usize,
    pub strength: f64,
}

/// Dirichlet data on a domain: every vertex outside `domain` must be pinned;
/// vertices inside may be pinned as well.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletProblem {
    pub domain: VertexSet,
    pub boundary: Vec<Option<f64>>,
    pub source: Option<PointSource>,
}

impl DirichletProblem {
    /// Zero outside `domain`, free inside.
    pub fn zero_outside(domain: VertexSet) -> Self {
        let boundary = domain
            .mask()
            .iter()
            .map(|&inside| if inside { None } else { Some(0.0) })
            .collect();
        Self { domain, boundary, source: None }
    }

    pub fn pin(mut self, set: &VertexSet, value: f64) -> Self {
        for v in set.iter() {
            self.boundary[v] = Some(value);
        }
        self
    }

    pub fn with_source(mut self, source: PointSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn pinned_set(&self) -> VertexSet {
        VertexSet::from_mask(self.boundary.iter().map(Option::is_some).collect())
    }

    pub fn free_set(&self) -> VertexSet {
        VertexSet::from_mask(self.boundary.iter().map(Option::is_none).collect())
    }

    fn validate(&self, space: &MetricMeasureSpace) -> Result<()> {
        let n = space.num_vertices();
        if self.domain.universe() != n || self.boundary.len() != n {
            return Err(Error::InvalidProblem("problem size does not match the space".into()));
        }
        if let Some(v) = (0..n).find(|&v| !self.domain.contains(v) && self.boundary[v].is_none()) {
            return Err(Error::InvalidProblem(format!("vertex {v} outside the domain is not pinned")));
        }
        if let Some(v) = self.boundary.iter().position(|b| b.is_some_and(|x| !x.is_finite())) {
            return Err(Error::InvalidProblem(format!("non-finite boundary value at vertex {v}")));
        }
        if let Some(src) = self.source {
            if src.vertex >= n || self.boundary[src.vertex].is_some() {
                return Err(Error::InvalidProblem(format!(
                    "source vertex {} is not a free vertex",
                    src.vertex
                )));
            }
            if !src.strength.is_finite() {
                return Err(Error::InvalidProblem("source strength must be finite".into()));
            }
        }
        if !space.is_connected_subset(&self.domain) {
            return Err(Error::DisconnectedDomain("domain is empty or not connected".into()));
        }
        // Every component of the free set must see pinned data.
        let mut seen = vec![false; n];
        for start in 0..n {
            if seen[start] || self.boundary[start].is_some() {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut anchored = false;
            while let Some(v) = stack.pop() {
                for &(w, _) in space.neighbors(v) {
                    if self.boundary[w].is_some() {
                        anchored = true;
                    } else if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            if !anchored {
                return Err(Error::DisconnectedDomain(format!(
                    "free vertex {start} lies in a component without boundary data"
                )));
            }
        }
        Ok(())
    }
}

/// Initial guess for the free values.
#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    /// Solution of the `p = 2` problem, rescaled when the data is a pure source.
    Harmonic,
    Zero,
    /// Uniform in the boundary range (or `[0, 1]` without boundary spread).
    Random(u64),
    Given(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epsilon: f64,
    /// Smoothed objective `E_eps / p - s u(x0)`; non-increasing along the run.
    pub objective: f64,
    pub energy: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub stages: usize,
    pub residual: f64,
    /// Smoothing level of the final stage (0 for unsmoothed solves).
    #[serde(default)]
    pub epsilon: f64,
    pub trace: Vec<TraceRow>,
}

/// A field on all vertices with its energy data.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub p: f64,
    pub energy: f64,
    pub edge_gradients: Vec<f64>,
    pub fixed_set: VertexSet,
    pub source: Option<PointSource>,
    pub stats: SolveStats,
}

impl PotentialField {
    pub fn from_values(
        space: &MetricMeasureSpace,
        values: Vec<f64>,
        p: f64,
        fixed_set: VertexSet,
        source: Option<PointSource>,
    ) -> Self {
        let edge_gradients = edge_gradients(space, &values);
        let energy = energy_from_gradients(space, &edge_gradients, p);
        Self { values, p, energy, edge_gradients, fixed_set, source, stats: SolveStats::default() }
    }

    /// The same field multiplied by `c`; the energy is recomputed.
    pub fn scaled(&self, space: &MetricMeasureSpace, c: f64) -> Self {
        let values = self.values.iter().map(|v| c * v).collect();
        let source = self.source.map(|s| PointSource {
            vertex: s.vertex,
            strength: s.strength * c.abs().powf(self.p - 1.0) * c.signum(),
        });
        let mut field = Self::from_values(space, values, self.p, self.fixed_set.clone(), source);
        field.stats.epsilon = self.stats.epsilon * c.abs();
        field
    }
}

/// `|u_a - u_b| / l` per edge.
pub fn edge_gradients(space: &MetricMeasureSpace, values: &[f64]) -> Vec<f64> {
    space
        .edges()
        .iter()
        .map(|e| (values[e.a] - values[e.b]).abs() / e.length)
        .collect()
}

fn energy_from_gradients(space: &MetricMeasureSpace, grads: &[f64], p: f64) -> f64 {
    compensated_sum(space.edge_volumes().iter().zip(grads).map(|(w, g)| w * g.powf(p)))
}

/// `sum_e V_e (|u_a - u_b| / l_e)^p`, summed in edge order with compensation.
pub fn p_energy(space: &MetricMeasureSpace, values: &[f64], cfg: &EnergyConfig) -> f64 {
    assert_eq!(values.len(), space.num_vertices(), "one value per vertex");
    energy_from_gradients(space, &edge_gradients(space, values), cfg.p)
}

/// Net flux `sum_{e at v} (V/l) |t|^(p-2) t` out of every vertex, with `t`
/// oriented away from `v`, and the matching absolute flux sums.
pub fn flux(space: &MetricMeasureSpace, values: &[f64], p: f64) -> (Vec<f64>, Vec<f64>) {
    smoothed_flux(space, values, p, 0.0)
}

/// [`flux`] of the smoothed density, `(t^2 + eps^2)^((p-2)/2) t` per edge.
fn smoothed_flux(space: &MetricMeasureSpace, values: &[f64], p: f64, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let n = space.num_vertices();
    let mut net = vec![CompensatedSum::new(); n];
    let mut abs = vec![0.0; n];
    for (e, w) in space.edges().iter().zip(space.edge_volumes()) {
        let t = (values[e.a] - values[e.b]) / e.length;
        let f = if eps == 0.0 || p == 2.0 {
            w / e.length * signed_pow(t, p)
        } else {
            w / e.length * (t * t + eps * eps).powf(0.5 * p - 1.0) * t
        };
        net[e.a].add(f);
        net[e.b].add(-f);
        abs[e.a] += f.abs();
        abs[e.b] += f.abs();
    }
    (net.iter().map(CompensatedSum::value).collect(), abs)
}

/// Largest normalized Euler-Lagrange defect over the free vertices of `domain`
/// (those not in the field's fixed set). The defect at `v` is the net flux
/// minus the source, divided by the absolute flux through `v`, floored at
/// `RESIDUAL_FLOOR` times the largest such flux. Zero means
/// the field is exactly discretely p-harmonic away from its source.
///
/// Fluxes use the smoothing level recorded in `field.stats.epsilon`, i.e. the
/// functional the solver actually minimized; without it rounding noise on
/// edges with vanishing gradient dominates the defect when `p < 2`.
pub fn harmonic_residual(
    space: &MetricMeasureSpace,
    field: &PotentialField,
    domain: &VertexSet,
    cfg: &EnergyConfig,
) -> f64 {
    let (net, abs) = smoothed_flux(space, &field.values, cfg.p, field.stats.epsilon);
    residual_of(&net, &abs, field.source, |v| domain.contains(v) && !field.fixed_set.contains(v))
}

/// Relative floor of the local flux scale. Vertices whose neighbours all carry
/// the same value have no flux at all, and their defect is pure rounding.
pub const RESIDUAL_FLOOR: f64 = 1e-6;

fn residual_of(
    net: &[f64],
    abs: &[f64],
    source: Option<PointSource>,
    free: impl Fn(usize) -> bool,
) -> f64 {
    let rhs = |v: usize| source.filter(|s| s.vertex == v).map_or(0.0, |s| s.strength);
    let scale = (0..net.len())
        .filter(|&v| free(v))
        .map(|v| abs[v] + rhs(v).abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let floor = RESIDUAL_FLOOR * scale;
    (0..net.len())
        .filter(|&v| free(v))
        .map(|v| (net[v] - rhs(v)).abs() / (abs[v] + rhs(v).abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Minimizes `E / p - s u(x0)` with `u` pinned to `boundary`, starting from
/// the harmonic warm start.
pub fn minimize(
    space: &MetricMeasureSpace,
    domain: &VertexSet,
    boundary: &[Option<f64>],
    source: Option<PointSource>,
    cfg: &EnergyConfig,
) -> Result<PotentialField> {
    let problem = DirichletProblem {
        domain: domain.clone(),
        boundary: boundary.to_vec(),
        source,
    };
    solve_dirichlet(space, &problem, cfg, Start::Harmonic)
}

pub fn solve_dirichlet(
    space: &MetricMeasureSpace,
    problem: &DirichletProblem,
    cfg: &EnergyConfig,
    start: Start,
) -> Result<PotentialField> {
    cfg.validate()?;
    problem.validate(space)?;
    Newton::new(space, problem, cfg)?.run(start)
}

/// Writes `iteration,epsilon,objective,energy,residual,step` rows.
pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,epsilon,objective,energy,residual,step")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            fmt_sig12(r.epsilon),
            fmt_sig12(r.objective),
            fmt_sig12(r.energy),
            fmt_sig12(r.residual),
            fmt_sig12(r.step)
        )?;
    }
    Ok(())
}

/// Relative tolerance for leaving an intermediate smoothing stage.
const STAGE_TOL: f64 = 1e-3;
const ARMIJO: f64 = 1e-4;
const MIN_DECAY: f64 = 1e-3;
const CG_TOL_FLOOR: f64 = 1e-13;

struct Newton<'a> {
    space: &'a MetricMeasureSpace,
    problem: &'a DirichletProblem,
    cfg: &'a EnergyConfig,
    map: FreeMap,
    solver: SpdSolver,
    /// Free index of the source vertex and its strength.
    source: Option<(usize, f64)>,
}

struct Local {
    /// Gradient of the smoothed objective on the free vertices.
    grad: Vec<f64>,
    /// Hessian coefficient per edge.
    coef: Vec<f64>,
    residual: f64,
}

impl<'a> Newton<'a> {
    fn new(space: &'a MetricMeasureSpace, problem: &'a DirichletProblem, cfg: &'a EnergyConfig) -> Result<Self> {
        let map = FreeMap::new(&problem.free_set());
        let solver = SpdSolver::new(space, &map, cfg.linear);
        let source = problem.source.map(|s| (map.index[s.vertex], s.strength));
        Ok(Self { space, problem, cfg, map, solver, source })
    }

    fn p(&self) -> f64 {
        self.cfg.p
    }

    fn pinned_values(&self) -> Vec<f64> {
        self.problem.boundary.iter().map(|b| b.unwrap_or(0.0)).collect()
    }

    fn run(mut self, start: Start) -> Result<PotentialField> {
        let mut u = self.pinned_values();
        if self.map.len() == 0 {
            return Ok(self.finish(u, SolveStats::default()));
        }
        let p = self.p();
        let harmonic = self.harmonic(&u)?;
        if p == 2.0 && start == Start::Harmonic {
            let mut stats = SolveStats { iterations: 1, stages: 1, ..SolveStats::default() };
            let local = self.local(&harmonic, 0.0);
            stats.residual = local.residual;
            stats.trace.push(self.trace_row(&harmonic, 1, 0.0, 1.0, &local));
            return self.check(harmonic, stats, 0.0);
        }
        let scale = edge_gradients(self.space, &harmonic)
            .into_iter()
            .fold(0.0, f64::max);
        if scale == 0.0 {
            // Constant data and no source: the harmonic start is the minimizer.
            return self.check(harmonic, SolveStats::default(), 0.0);
        }
        match start {
            Start::Harmonic => u = self.rescaled_start(harmonic),
            Start::Zero => {}
            Start::Random(seed) => {
                let pinned: Vec<f64> = self.problem.boundary.iter().filter_map(|b| *b).collect();
                let lo = pinned.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = pinned.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (lo, hi) = if hi > lo { (lo, hi) } else { (0.0, 1.0) };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for &v in &self.map.vertices {
                    u[v] = rng.random_range(lo..hi);
                }
            }
            Start::Given(values) => {
                if values.len() != u.len() {
                    return Err(Error::InvalidParameter("start field has the wrong length".into()));
                }
                for &v in &self.map.vertices {
                    u[v] = values[v];
                }
            }
        }
        let eps_min = self.cfg.epsilon_floor * scale;
        let eps = (self.cfg.epsilon0 * scale).max(eps_min);
        let stats = self.newton(&mut u, eps, eps_min)?;
        self.check(u, stats, eps_min)
    }

    /// `p = 2` solution with the same data: one linear solve.
    fn harmonic(&mut self, pinned: &[f64]) -> Result<Vec<f64>> {
        let coef: Vec<f64> = self
            .space
            .edges()
            .iter()
            .zip(self.space.edge_volumes())
            .map(|(e, w)| w / (e.length * e.length))
            .collect();
        let m = self.map.len();
        let mut rhs = vec![0.0; m];
        for (k, e) in self.space.edges().iter().enumerate() {
            let (ia, ib) = (self.map.index[e.a], self.map.index[e.b]);
            if ia != PINNED && ib == PINNED {
                rhs[ia] += coef[k] * pinned[e.b];
            } else if ib != PINNED && ia == PINNED {
                rhs[ib] += coef[k] * pinned[e.a];
            }
        }
        if let Some((i, s)) = self.source {
            rhs[i] += s;
        }
        let vals = self.solver.pattern().assemble(&coef, 0.0);
        self.solver.cg_tol = CG_TOL_FLOOR;
        let x = self.solver.solve(&vals, &rhs)?;
        let mut u = pinned.to_vec();
        for (i, &v) in self.map.vertices.iter().enumerate() {
            u[v] = x[i];
        }
        Ok(u)
    }

    /// For pure-source data the optimal multiple `c u` of a trial field has
    /// `c^(p-1) = s u(x0) / E(u)`.
    fn rescaled_start(&self, mut u: Vec<f64>) -> Vec<f64> {
        let all_zero = self.problem.boundary.iter().all(|b| b.map_or(true, |x| x == 0.0));
        if let (true, Some(src)) = (all_zero, self.problem.source) {
            let e = energy_from_gradients(self.space, &edge_gradients(self.space, &u), self.p());
            let work = src.strength * u[src.vertex];
            if e > 0.0 && work > 0.0 {
                let c = (work / e).powf(1.0 / (self.p() - 1.0));
                u.iter_mut().for_each(|x| *x *= c);
            }
        }
        u
    }

    fn objective(&self, u: &[f64], eps: f64) -> f64 {
        let p = self.p();
        let e2 = eps * eps;
        let mut acc = CompensatedSum::new();
        for (e, w) in self.space.edges().iter().zip(self.space.edge_volumes()) {
            let t = (u[e.a] - u[e.b]) / e.length;
            let psi = t * t + e2;
            acc.add(w / p * psi.powf(0.5 * p));
        }
        if let Some(src) = self.problem.source {
            acc.add(-src.strength * u[src.vertex]);
        }
        acc.value()
    }

    fn local(&self, u: &[f64], eps: f64) -> Local {
        let p = self.p();
        let e2 = eps * eps;
        let m = self.map.len();
        let n = self.space.num_vertices();
        let mut net = vec![CompensatedSum::new(); n];
        let mut abs = vec![0.0; n];
        let mut coef = Vec::with_capacity(self.space.num_edges());
        for (e, w) in self.space.edges().iter().zip(self.space.edge_volumes()) {
            let t = (u[e.a] - u[e.b]) / e.length;
            let psi = t * t + e2;
            let (f, c) = if p == 2.0 {
                (w / e.length * t, w / (e.length * e.length))
            } else if psi == 0.0 {
                (0.0, 0.0)
            } else {
                let base = psi.powf(0.5 * p - 2.0);
                (
                    w / e.length * base * psi * t,
                    w / (e.length * e.length) * base * ((p - 1.0) * t * t + e2),
                )
            };
            net[e.a].add(f);
            net[e.b].add(-f);
            abs[e.a] += f.abs();
            abs[e.b] += f.abs();
            coef.push(c);
        }
        let net: Vec<f64> = net.iter().map(CompensatedSum::value).collect();
        let mut grad: Vec<f64> = self.map.vertices.iter().map(|&v| net[v]).collect();
        if let Some((i, s)) = self.source {
            grad[i] -= s;
        }
        debug_assert_eq!(grad.len(), m);
        let residual = residual_of(&net, &abs, self.problem.source, |v| self.map.index[v] != PINNED);
        Local { grad, coef, residual }
    }

    fn trace_row(&self, u: &[f64], iteration: usize, eps: f64, step: f64, local: &Local) -> TraceRow {
        TraceRow {
            iteration,
            epsilon: eps,
            objective: self.objective(u, eps),
            energy: energy_from_gradients(self.space, &edge_gradients(self.space, u), self.p()),
            residual: local.residual,
            step,
        }
    }

    fn newton(&mut self, u: &mut [f64], mut eps: f64, eps_min: f64) -> Result<SolveStats> {
        let tol = self.cfg.tol_rel;
        let mut stats = SolveStats { stages: 1, ..SolveStats::default() };
        let mut obj = self.objective(u, eps);
        let mut local = self.local(u, eps);
        stats.trace.push(self.trace_row(u, 0, eps, 0.0, &local));
        let mut last_decrease = f64::INFINITY;
        // Stages settled by a single step make the next decay more aggressive.
        let mut decay = self.cfg.epsilon_decay;
        let mut stage_steps = 0;
        loop {
            let final_stage = eps <= eps_min;
            let stage_tol = if final_stage { tol } else { STAGE_TOL.max(tol) };
            let settled = local.residual <= stage_tol && (!final_stage || last_decrease <= tol);
            if settled {
                if final_stage {
                    break;
                }
                decay = if stage_steps <= 1 { (decay * decay).max(MIN_DECAY) } else { self.cfg.epsilon_decay };
                eps = (eps * decay).max(eps_min);
                stats.stages += 1;
                stage_steps = 0;
                obj = self.objective(u, eps);
                local = self.local(u, eps);
                last_decrease = f64::INFINITY;
                continue;
            }
            if stats.iterations >= self.cfg.max_iter {
                return Err(Error::NonConvergence { iterations: stats.iterations, residual: local.residual });
            }
            stats.iterations += 1;
            stage_steps += 1;
            let dir = self.direction(&local)?;
            let slope: f64 = dir.iter().zip(&local.grad).map(|(d, g)| d * g).sum();
            let (step, new_obj) = self.line_search(u, &dir, slope, obj, eps);
            if step == 0.0 {
                // The objective no longer resolves a decrease: take the full
                // step if it lowers the stationarity defect instead.
                let trial: Vec<f64> = {
                    let mut t = u.to_vec();
                    for (i, &v) in self.map.vertices.iter().enumerate() {
                        t[v] += dir[i];
                    }
                    t
                };
                let next = self.local(&trial, eps);
                if next.residual < local.residual {
                    u.copy_from_slice(&trial);
                    obj = self.objective(u, eps);
                    last_decrease = 0.0;
                    local = next;
                    stats.trace.push(self.trace_row(u, stats.iterations, eps, 1.0, &local));
                    continue;
                }
                if local.residual <= tol.sqrt() && final_stage {
                    break;
                }
                return Err(Error::NonConvergence { iterations: stats.iterations, residual: local.residual });
            }
            for (i, &v) in self.map.vertices.iter().enumerate() {
                u[v] += step * dir[i];
            }
            last_decrease = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
            obj = new_obj;
            local = self.local(u, eps);
            stats.trace.push(self.trace_row(u, stats.iterations, eps, step, &local));
        }
        stats.residual = local.residual;
        Ok(stats)
    }

    /// Newton direction, with a Levenberg shift if the factorization fails and
    /// a Jacobi-scaled gradient step as the last resort.
    fn direction(&mut self, local: &Local) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = local.grad.iter().map(|g| -g).collect();
        let vals = self.solver.pattern().assemble(&local.coef, 0.0);
        // inexact Newton: iterative solves only need to beat the current defect
        self.solver.cg_tol = (0.1 * local.residual).clamp(CG_TOL_FLOOR, 1e-3);
        if let Ok(d) = self.solver.solve(&vals, &rhs) {
            return Ok(d);
        }
        let diag = self.solver.pattern().diagonal(&vals);
        let top = diag.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut shift = 1e-10 * top;
        while shift <= top {
            let vals = self.solver.pattern().assemble(&local.coef, shift);
            if let Ok(d) = self.solver.solve(&vals, &rhs) {
                return Ok(d);
            }
            shift *= 100.0;
        }
        Ok(rhs
            .iter()
            .zip(&diag)
            .map(|(r, d)| r / d.max(1e-12 * top))
            .collect())
    }

    /// Backtracking until the Armijo condition holds; steps that change the
    /// objective only at rounding level are accepted when they do not
    /// increase it.
    fn line_search(&self, u: &[f64], dir: &[f64], slope: f64, obj: f64, eps: f64) -> (f64, f64) {
        if !(slope < 0.0) {
            return (0.0, obj);
        }
        let mut trial = u.to_vec();
        let mut step = 1.0;
        for _ in 0..60 {
            for (i, &v) in self.map.vertices.iter().enumerate() {
                trial[v] = u[v] + step * dir[i];
            }
            let val = self.objective(&trial, eps);
            let rounding = 64.0 * f64::EPSILON * obj.abs();
            if val <= obj + ARMIJO * step * slope || (val <= obj && -step * slope <= rounding) {
                return (step, val);
            }
            step *= 0.5;
        }
        (0.0, obj)
    }

    /// Clamps source-free results and re-evaluates the defect at the final
    /// smoothing level. For `p < 2` the unsmoothed flux `|t|^(p-1)` amplifies
    /// rounding noise on edges with `t ~ 0`, so `eps` is the floor actually
    /// minimized against.
    fn check(&self, mut u: Vec<f64>, mut stats: SolveStats, eps: f64) -> Result<PotentialField> {
        if self.problem.source.is_none() {
            let pinned: Vec<f64> = self.problem.boundary.iter().filter_map(|b| *b).collect();
            let lo = pinned.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = pinned.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &v in &self.map.vertices {
                u[v] = u[v].clamp(lo, hi);
            }
        }
        stats.residual = self.local(&u, eps).residual;
        stats.epsilon = eps;
        if !(stats.residual <= self.cfg.tol_rel) {
            return Err(Error::NonConvergence { iterations: stats.iterations, residual: stats.residual });
        }
        let mut field = self.finish(u, stats);
        field.stats.stages = field.stats.stages.max(1);
        Ok(field)
    }

    fn finish(&self, u: Vec<f64>, stats: SolveStats) -> PotentialField {
        let mut field =
            PotentialField::from_values(self.space, u, self.p(), self.problem.pinned_set(), self.problem.source);
        field.stats = stats;
        field
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmspace::{build_grid, build_path};

    #[test]
    fn config_defaults_and_validation() {
        let cfg = EnergyConfig::default();
        assert!(cfg.validate().is_ok());
        assert!(cfg.tol_rel <= 1e-3);
        assert!(EnergyConfig::with_p(1.0).validate().is_err());
        let parsed: EnergyConfig =
            serde_json::from_str(r#"{"p": 3, "tolRel": 1e-9, "maxIter": 50, "epsilon0": 0.5}"#).unwrap();
        assert_eq!(parsed.p, 3.0);
        assert_eq!(parsed.max_iter, 50);
        assert_eq!(parsed.epsilon_decay, 0.5);
    }

    #[test]
    fn constant_field_has_zero_energy() {
        let s = build_grid(2, 1.0, 0.125, 0.0).unwrap();
        let u = vec![3.0; s.num_vertices()];
        assert_eq!(p_energy(&s, &u, &EnergyConfig::with_p(2.5)), 0.0);
    }

    #[test]
    fn linear_field_energy_is_total_measure() {
        let s = build_grid(2, 1.0, 1.0 / 64.0, 0.0).unwrap();
        let u: Vec<f64> = (0..s.num_vertices()).map(|v| s.coord(v)[0]).collect();
        let e = p_energy(&s, &u, &EnergyConfig::with_p(2.0));
        assert!((e / s.total_measure() - 1.0).abs() < 0.02, "{e}");
    }

    #[test]
    fn energy_is_homogeneous() {
        let s = build_grid(2, 1.0, 0.125, 1.0).unwrap();
        let u: Vec<f64> = (0..s.num_vertices()).map(|v| (v as f64 * 0.37).sin()).collect();
        for p in [1.5, 2.0, 3.0] {
            let cfg = EnergyConfig::with_p(p);
            let e = p_energy(&s, &u, &cfg);
            let cu: Vec<f64> = u.iter().map(|x| -2.0 * x).collect();
            let ec = p_energy(&s, &cu, &cfg);
            assert!((ec / e - 2f64.powf(p)).abs() < 1e-12);
        }
    }

    fn path_problem(segments: usize) -> (MetricMeasureSpace, DirichletProblem) {
        let s = build_path(1.0, segments).unwrap();
        let n = s.num_vertices();
        let domain = VertexSet::from_predicate(n, |v| v != 0 && v != n - 1);
        let mut problem = DirichletProblem::zero_outside(domain);
        problem.boundary[n - 1] = Some(1.0);
        (s, problem)
    }

    #[test]
    fn path_minimizer_is_affine() {
        let (s, problem) = path_problem(20);
        for p in [1.5, 2.0, 3.0] {
            let field = solve_dirichlet(&s, &problem, &EnergyConfig::with_p(p), Start::Zero).unwrap();
            for v in 0..s.num_vertices() {
                assert!((field.values[v] - s.coord(v)[0]).abs() < 1e-8, "p={p} v={v}");
            }
        }
    }

    #[test]
    fn linear_path_field_is_harmonic() {
        let (s, problem) = path_problem(16);
        for p in [1.5, 2.0, 4.0] {
            let u: Vec<f64> = (0..s.num_vertices()).map(|v| s.coord(v)[0]).collect();
            let field = PotentialField::from_values(&s, u, p, problem.pinned_set(), None);
            let r = harmonic_residual(&s, &field, &problem.domain, &EnergyConfig::with_p(p));
            assert!(r < 1e-12, "p={p}: {r}");
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let s = build_grid(2, 1.0, 0.125, 0.0).unwrap();
        let domain = VertexSet::from_predicate(s.num_vertices(), |v| s.coord(v).iter().all(|x| x.abs() < 0.9));
        let problem = DirichletProblem::zero_outside(domain);
        for p in [1.5, 2.0, 3.0] {
            let f = solve_dirichlet(&s, &problem, &EnergyConfig::with_p(p), Start::Harmonic).unwrap();
            assert!(f.values.iter().all(|&x| x == 0.0));
            assert_eq!(f.energy, 0.0);
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let s = build_grid(2, 1.0, 0.125, 0.0).unwrap();
        let n = s.num_vertices();
        let domain = VertexSet::from_predicate(n, |v| s.coord(v).iter().all(|x| x.abs() < 0.9));
        let mut unpinned = DirichletProblem::zero_outside(domain.clone());
        unpinned.boundary[0] = None;
        assert!(matches!(
            solve_dirichlet(&s, &unpinned, &EnergyConfig::default(), Start::Zero),
            Err(Error::InvalidProblem(_))
        ));
        let split = VertexSet::from_predicate(n, |v| {
            let x = s.coord(v);
            x[1].abs() < 0.9 && (x[0] - 0.5).abs() < 0.3 || (x[0] + 0.5).abs() < 0.3 && x[1].abs() < 0.9
        });
        assert!(matches!(
            solve_dirichlet(&s, &DirichletProblem::zero_outside(split), &EnergyConfig::default(), Start::Zero),
            Err(Error::DisconnectedDomain(_))
        ));
    }

    #[test]
    fn random_field_has_positive_residual() {
        let s = build_grid(2, 1.0, 0.125, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..s.num_vertices()).map(|_| rng.random::<f64>()).collect();
        let field = PotentialField::from_values(&s, u, 2.0, VertexSet::empty(s.num_vertices()), None);
        let r = harmonic_residual(&s, &field, &VertexSet::full(s.num_vertices()), &EnergyConfig::default());
        assert!(r > 1e-3);
    }

    #[test]
    fn trace_csv_has_header() {
        let rows = vec![TraceRow { iteration: 1, epsilon: 0.5, objective: -1.0, energy: 2.0, residual: 1e-9, step: 1.0 }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,epsilon,objective,energy,residual,step\n1,"));
    }
}
