use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use greenlab::asympt::{
    default_window, fit_local_behavior, harnack_limit, harnack_sphere_ratio, integrability_scan, IntegrabilityReport,
    NormTarget, Trend,
};
use greenlab::capacity::{
    check_capacity_sandwich, ring_capacity_sweep_with_floor, singleton_capacity_trend, solve_capacity,
    standard_level_pairs, verify_potential_scaling, CapacityProblem, RingCapacityProfile, TrendVerdict,
    CONFORMAL_BAND, MIN_RADIUS_CELLS,
};
use greenlab::green::{
    attach_ring_capacities, check_definition_criteria, check_growth_bounds, compute_k, cutoff_potential,
    default_cutoff, normalize, GreenFile, profile_levels, radial_extrema, solve_singular, GreenFunction, RadialProfile, Verdict,
};
use greenlab::mmspace::{dyadic_radii, estimate_doubling, estimate_pointwise_dimension, slope_radii, SpaceFile};
use greenlab::numeric::fmt_sig12;
use greenlab::penergy::{solve_dirichlet, Start};
use greenlab::{EnergyConfig, MetricMeasureSpace, VertexSet};
use serde_json::json;

use crate::config::{CapParams, GreenParams, PointSpec, RunConfig, ScanParams, VerifyParams};
use crate::error::CliError;
use crate::manifest::{sha256_hex, Check, CheckVerdict, OutDir, RunManifest};

/// Relative agreement required between K computed with two cutoffs.
const CUTOFF_TOL: f64 = 0.02;
/// Relative agreement required between `K(G)` and its target.
const K_TOL: f64 = 0.03;
/// Largest sup-norm gap between harmonic-start and random-start potentials.
const UNIQUENESS_TOL: f64 = 1e-6;
/// Shell half-width for the sphere Harnack check, in cells. Wider shells
/// mix in the radial decay of G.
const SPHERE_HALF_WIDTH: f64 = 0.5;
/// Shells per fit window.
const FIT_SHELLS: usize = 8;

/// Dyadic radii from `r_max` down to `r_min`, or five log-spaced ones when
/// fewer than four dyadic radii fit.
fn default_sweep_radii(r_max: f64, r_min: f64) -> Vec<f64> {
    let dyadic: Vec<f64> = (0..)
        .map(|k| r_max / f64::from(1u32 << k))
        .take_while(|&r| r >= r_min * (1.0 - 1e-9))
        .collect();
    if dyadic.len() >= 4 || r_max <= r_min {
        return dyadic;
    }
    (0..5).map(|i| r_max * (r_min / r_max).powf(f64::from(i) / 4.0)).collect()
}

pub struct Run {
    pub cfg: RunConfig,
    pub base: PathBuf,
    pub out: OutDir,
    timings: BTreeMap<String, f64>,
    checks: Vec<Check>,
    nonconverged: Vec<String>,
}

pub struct Outcome {
    pub manifest: RunManifest,
    pub nonconverged: Vec<String>,
}

impl Run {
    pub fn new(cfg: RunConfig, base: &Path) -> Result<Self, CliError> {
        cfg.validate()?;
        let out = OutDir::open(&if cfg.out.is_absolute() { cfg.out.clone() } else { base.join(&cfg.out) })?;
        Ok(Self {
            cfg,
            base: base.to_path_buf(),
            out,
            timings: BTreeMap::new(),
            checks: Vec::new(),
            nonconverged: Vec::new(),
        })
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let value = f(self);
        *self.timings.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
        value
    }

    fn check(&mut self, name: &str, verdict: CheckVerdict, detail: serde_json::Value) {
        self.checks.push(Check { name: name.to_string(), verdict, detail });
    }

    fn space(&mut self) -> Result<MetricMeasureSpace, CliError> {
        let base = self.base.clone();
        let block = self.cfg.space.clone();
        self.timed("space", |_| block.load(&base))
    }

    fn solver(&self, p: Option<f64>) -> EnergyConfig {
        let mut cfg = self.cfg.solver.clone();
        if let Some(p) = p {
            cfg.p = p;
        }
        cfg
    }

    pub fn finish(mut self, command: &str) -> Result<Outcome, CliError> {
        // The output location is not part of the experiment.
        let hashed = RunConfig { out: PathBuf::new(), ..self.cfg.clone() };
        let config_bytes = serde_json::to_vec(&hashed)?;
        let manifest = RunManifest {
            tool: "greenlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: sha256_hex(&config_bytes),
            seed: self.cfg.seed,
            checks: std::mem::take(&mut self.checks),
            timings: std::mem::take(&mut self.timings),
            outputs: self.out.inventory()?,
        };
        self.out.write_json("run.json", &manifest)?;
        Ok(Outcome { manifest, nonconverged: std::mem::take(&mut self.nonconverged) })
    }

    pub fn gen(&mut self) -> Result<(), CliError> {
        let space = self.space()?;
        let file = SpaceFile::from_space(&space);
        self.out.write_json("space.json", &file)?;
        let center = space.nearest_vertex(&vec![0.0; space.dim()]);
        let radii = dyadic_radii(0.5 * space.local_radius(), space.h());
        let doubling = estimate_doubling(&space, center, &radii).ok();
        println!(
            "{} space: n = {}, h = {}, {} vertices, {} edges, doubling estimate {}",
            space.generator().name(),
            space.dim(),
            space.h(),
            space.num_vertices(),
            space.num_edges(),
            doubling.map_or("n/a".to_string(), |c| format!("{c:.4}")),
        );
        let summary = json!({
            "vertices": space.num_vertices(),
            "edges": space.num_edges(),
            "doubling": doubling,
            "center": center,
        });
        self.check("space-summary", CheckVerdict::NotEvaluated, summary);
        Ok(())
    }

    fn require_point(point: &Option<PointSpec>, space: &MetricMeasureSpace) -> Result<usize, CliError> {
        point.as_ref().ok_or_else(|| CliError::Config("missing --x0".into()))?.resolve(space)
    }

    fn require_radius(r: Option<f64>) -> Result<f64, CliError> {
        match r {
            Some(r) if r > 0.0 && r.is_finite() => Ok(r),
            Some(r) => Err(CliError::Config(format!("R must be positive, got {r}"))),
            None => Err(CliError::Config("missing --R".into())),
        }
    }

    fn sweep(
        &mut self,
        space: &MetricMeasureSpace,
        x0: usize,
        big_r: f64,
        radii: Option<Vec<f64>>,
        min_cells: Option<f64>,
        cfg: &EnergyConfig,
    ) -> Result<RingCapacityProfile, CliError> {
        let floor = min_cells.unwrap_or(MIN_RADIUS_CELLS);
        let radii = radii.unwrap_or_else(|| default_sweep_radii(0.5 * big_r, floor * space.h()));
        let profile = self.timed("capacity", |_| {
            ring_capacity_sweep_with_floor(
                space,
                x0,
                &radii,
                big_r,
                cfg.p,
                cfg,
                floor,
            )
        })?;
        let mut csv = Vec::new();
        profile.write_csv(&mut csv)?;
        self.out.write("profile.csv", &csv)?;
        for row in profile.rows.iter().filter(|r| r.cap.is_none()) {
            self.nonconverged.push(format!("capacity row r = {}: {}", row.r, row.error.as_deref().unwrap_or("")));
        }
        let sandwich = check_capacity_sandwich(&profile);
        let trend = singleton_capacity_trend(&profile);
        let report = match &sandwich {
            Ok(s) => json!({
                "regime": s.regime.label(),
                "spread": s.spread,
                "pass": s.pass,
                "pointwiseQ": s.pointwise_q,
                "fittedLowerConst": s.fitted_lower_const,
                "fittedUpperConst": s.fitted_upper_const,
                "ratios": s.ratios,
                "singletonTrend": trend,
            }),
            Err(e) => json!({ "error": e.to_string(), "singletonTrend": trend }),
        };
        self.out.write_json("sandwich.json", &report)?;
        match sandwich {
            Ok(s) => self.check(
                "capacity-sandwich",
                CheckVerdict::from_bool(s.pass),
                json!({"regime": s.regime.label(), "spread": s.spread}),
            ),
            Err(e) if self.nonconverged.is_empty() => return Err(e.into()),
            Err(e) => self.check("capacity-sandwich", CheckVerdict::NotEvaluated, json!(e.to_string())),
        }
        let verdict = match trend {
            TrendVerdict::Pass => CheckVerdict::Pass,
            TrendVerdict::Fail => CheckVerdict::Fail,
            TrendVerdict::NotApplicable => CheckVerdict::NotApplicable,
        };
        self.check("singleton-trend", verdict, json!({"pointwiseQ": profile.pointwise_q, "p": profile.p}));
        Ok(profile)
    }

    pub fn cap(&mut self, params: &CapParams) -> Result<(), CliError> {
        let space = self.space()?;
        let x0 = Self::require_point(&params.x0, &space)?;
        let big_r = Self::require_radius(params.big_r)?;
        let cfg = self.solver(params.p);
        self.sweep(&space, x0, big_r, params.radii.clone(), params.min_radius_cells, &cfg)?;
        Ok(())
    }

    fn green_function(
        &mut self,
        space: &MetricMeasureSpace,
        x0: usize,
        big_r: f64,
        cfg: &EnergyConfig,
    ) -> Result<GreenFunction, CliError> {
        let dist = space.distances_from(x0);
        let domain = VertexSet::from_predicate(dist.len(), |v| dist[v] < big_r);
        Ok(self.timed("green", |_| solve_singular(space, &domain, x0, cfg.p, cfg))?)
    }

    /// Shells `4h * sqrt(2)^k` up to `R/2`, ring capacities relative to the
    /// outermost shell.
    fn growth_profile(
        &mut self,
        space: &MetricMeasureSpace,
        g: &GreenFunction,
        big_r: f64,
        cfg: &EnergyConfig,
    ) -> Result<RadialProfile, CliError> {
        let h = space.h();
        let mut radii = Vec::new();
        let mut r = 4.0 * h;
        while r <= 0.5 * big_r * (1.0 + 1e-12) {
            radii.push(r);
            r *= std::f64::consts::SQRT_2;
        }
        let mut profile = radial_extrema(space, g, &radii, h)?;
        let outer = profile.shells.last().map_or(0.0, |s| s.r);
        self.timed("ring-capacities", |_| attach_ring_capacities(space, &mut profile, outer, g.p, cfg))?;
        Ok(profile)
    }

    fn criteria(
        &mut self,
        space: &MetricMeasureSpace,
        g: &GreenFunction,
        levels: Option<Vec<(f64, f64)>>,
        peaks: Option<&[f64]>,
        big_r: f64,
        cfg: &EnergyConfig,
    ) -> Result<(), CliError> {
        let levels = match levels {
            Some(l) => l,
            None => {
                let radii: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|f| f * big_r).collect();
                profile_levels(&radial_extrema(space, g, &radii, space.h())?)
            }
        };
        let peak = g.peak();
        let (valid, flagged): (Vec<_>, Vec<_>) = levels.into_iter().partition(|&(_, b)| b <= peak);
        for (a, b) in &flagged {
            eprintln!("warning: level pair ({a}, {b}) lies above the peak value {peak}; row flagged");
        }
        let report = self.timed("criteria", |_| check_definition_criteria(space, g, &valid, peaks, cfg))?;
        let cutoff = default_cutoff(space, g, cfg)?;
        let k = compute_k(space, g, &cutoff, cfg)?;
        let target = if g.normalized { 1.0 } else { g.source_strength };
        self.out.write_json(
            "criteria.json",
            &json!({
                "report": report,
                "flaggedLevels": flagged,
                "k": k,
                "kTarget": target,
            }),
        )?;
        let verdict = |v: Verdict| match v {
            Verdict::Pass => CheckVerdict::Pass,
            Verdict::Fail => CheckVerdict::Fail,
            Verdict::NotEvaluated => CheckVerdict::NotEvaluated,
        };
        self.check(
            "green-harmonic-positive",
            verdict(report.harmonic_positive),
            json!({"residual": report.residual, "minValue": report.min_value}),
        );
        self.check("green-vanishes-outside", verdict(report.vanishes_outside), json!(null));
        self.check("green-singularity", verdict(report.singularity), json!({"peaks": peaks}));
        let products: Vec<f64> = report.levels.iter().map(|r| r.product).collect();
        self.check("green-level-sets", verdict(report.level_sets), json!({"products": products}));
        self.check(
            "green-k",
            CheckVerdict::from_bool((k / target - 1.0).abs() <= K_TOL),
            json!({"k": k, "target": target}),
        );
        Ok(())
    }

    pub fn green(&mut self, params: &GreenParams) -> Result<(), CliError> {
        let space = self.space()?;
        let x0 = Self::require_point(&params.x0, &space)?;
        let big_r = Self::require_radius(params.big_r)?;
        let cfg = self.solver(params.p);
        let g = match &params.green_file {
            Some(path) => {
                let path = if path.is_absolute() { path.clone() } else { self.base.join(path) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let g = serde_json::from_str::<GreenFile>(&text)?.into_green()?;
                if g.values.len() != space.num_vertices() || g.x0 != x0 {
                    return Err(CliError::Config("green file does not match the space and x0".into()));
                }
                g
            }
            None => {
                let g = self.green_function(&space, x0, big_r, &cfg)?;
                if params.normalize {
                    normalize(&g, &cfg)
                } else {
                    g
                }
            }
        };
        let cfg = EnergyConfig { p: g.p, ..cfg };
        self.out.write_json("green.json", &g.to_file())?;
        let profile = self.growth_profile(&space, &g, big_r, &cfg)?;
        let mut csv = Vec::new();
        profile.write_csv(&mut csv)?;
        self.out.write("profile.csv", &csv)?;
        self.criteria(&space, &g, params.levels.clone(), None, big_r, &cfg)
    }

    pub fn verify(&mut self, params: &VerifyParams) -> Result<(), CliError> {
        let space = self.space()?;
        let x0 = Self::require_point(&params.x0, &space)?;
        let big_r = Self::require_radius(params.big_r)?;
        let cfg = self.solver(params.p);
        let h = space.h();

        self.sweep(&space, x0, big_r, params.radii.clone(), None, &cfg)?;

        // Level-set law and uniqueness on the potential of closed ball(x0, R/4).
        let problem = CapacityProblem::ring(&space, x0, 0.25 * big_r, big_r, cfg.p)?;
        let cap = self.timed("capacity", |_| solve_capacity(&space, &problem, &cfg))?;
        let scaling = self.timed("scaling", |_| verify_potential_scaling(&space, &cap, &standard_level_pairs(), &cfg))?;
        let mut csv = Vec::new();
        writeln!(csv, "alpha,beta,measured,predicted,relError")?;
        for r in &scaling.rows {
            writeln!(
                csv,
                "{},{},{},{},{}",
                fmt_sig12(r.alpha),
                fmt_sig12(r.beta),
                fmt_sig12(r.measured),
                fmt_sig12(r.predicted),
                fmt_sig12(r.rel_error)
            )?;
        }
        self.out.write("scaling.csv", &csv)?;
        let worst = scaling.rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
        self.check("potential-scaling", CheckVerdict::from_bool(scaling.pass), json!({"worstRelError": worst}));
        let seed = self.cfg.seed;
        let random = self.timed("uniqueness", |_| {
            solve_dirichlet(&space, &problem.dirichlet(), &cfg, Start::Random(seed))
        })?;
        let gap = cap.potential.values.iter().zip(&random.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.check("random-start-uniqueness", CheckVerdict::from_bool(gap <= UNIQUENESS_TOL), json!({"supGap": gap}));

        // Green's function on this mesh and peaks on coarser ones.
        let g = normalize(&self.green_function(&space, x0, big_r, &cfg)?, &cfg);
        self.out.write_json("green.json", &g.to_file())?;
        let coarse: Vec<MetricMeasureSpace> = match self.cfg.space.generated() {
            Some(gen) => (1..=params.refinements)
                .rev()
                .map(|k| gen.with_h(h * f64::from(1u32 << k)).build())
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };
        let point = space.coord(x0).to_vec();
        let mut peaks = Vec::new();
        for s in &coarse {
            let c = s.nearest_vertex(&point);
            peaks.push(normalize(&self.green_function(s, c, big_r, &cfg)?, &cfg).peak());
        }
        peaks.push(g.peak());
        let peaks = (peaks.len() >= 2).then_some(peaks);
        self.criteria(&space, &g, None, peaks.as_deref(), big_r, &cfg)?;

        let k1 = compute_k(&space, &g, &cutoff_potential(&space, &g, 0.2 * big_r, &cfg)?, &cfg)?;
        let k2 = compute_k(&space, &g, &cutoff_potential(&space, &g, 0.4 * big_r, &cfg)?, &cfg)?;
        self.check(
            "k-cutoff-independence",
            CheckVerdict::from_bool((k1 / k2 - 1.0).abs() <= CUTOFF_TOL),
            json!({"k": [k1, k2]}),
        );

        let profile = self.growth_profile(&space, &g, big_r, &cfg)?;
        let mut csv = Vec::new();
        profile.write_csv(&mut csv)?;
        self.out.write("green_profile.csv", &csv)?;
        let growth = check_growth_bounds(&profile, cfg.p, &cfg)?;
        self.check(
            "growth-bounds",
            CheckVerdict::from_bool(growth.pass),
            json!({"upperSpread": growth.upper_spread, "lowerSpread": growth.lower_spread, "r0": growth.r0}),
        );
        let radii: Vec<f64> = profile.shells.iter().map(|s| s.r).collect();
        let spheres = radial_extrema(&space, &g, &radii, SPHERE_HALF_WIDTH * h)?;
        let harnack = harnack_sphere_ratio(&spheres, harnack_limit(space.generator()))?;
        self.check("harnack", CheckVerdict::from_bool(harnack.pass), json!(harnack));

        let window = default_window(h, 0.5 * big_r);
        let fit_radii: Vec<f64> = (0..FIT_SHELLS)
            .map(|i| window.0 * (window.1 / window.0).powf(i as f64 / (FIT_SHELLS - 1) as f64))
            .collect();
        let fit_profile = radial_extrema(&space, &g, &fit_radii, h)?;
        let dim = estimate_pointwise_dimension(&space, x0, &slope_radii(big_r, h))?;
        let fit = fit_local_behavior(&fit_profile, &g, &dim, window)?;
        self.out.write_json("fit.json", &fit)?;
        self.check(
            "local-fit",
            CheckVerdict::from_bool(fit.pass),
            json!({"model": fit.model, "slope": fit.fitted_slope, "rSquared": fit.r_squared}),
        );

        let scan_applicable = cfg.p < dim.log_mass_slope - CONFORMAL_BAND && coarse.len() >= 2;
        if scan_applicable {
            let mut spaces = coarse;
            spaces.push(space);
            let crit = |target: NormTarget| {
                let q = dim.log_mass_slope;
                match target {
                    NormTarget::Function => q * (cfg.p - 1.0) / (q - cfg.p),
                    NormTarget::Gradient => q * (cfg.p - 1.0) / (q - 1.0),
                }
            };
            let mut qs: Vec<f64> = [NormTarget::Function, NormTarget::Gradient]
                .iter()
                .flat_map(|&t| [0.5 * crit(t), 1.5 * crit(t)])
                .collect();
            qs.sort_by(f64::total_cmp);
            let reports = self.timed("scan", |_| {
                integrability_scan(&spaces, &point, cfg.p, &qs, 0.5 * big_r, big_r, &cfg)
            })?;
            self.record_scan(&reports)?;
        } else {
            self.check("integrability", CheckVerdict::NotApplicable, json!({"pointwiseQ": dim.log_mass_slope}));
        }
        Ok(())
    }

    fn record_scan(&mut self, reports: &[IntegrabilityReport]) -> Result<(), CliError> {
        let mut csv = Vec::new();
        writeln!(csv, "q,target,h,norm")?;
        for r in reports {
            let target = match r.target {
                NormTarget::Function => "function",
                NormTarget::Gradient => "gradient",
            };
            for (h, n) in r.mesh_sequence.iter().zip(&r.norms) {
                writeln!(csv, "{},{},{},{}", fmt_sig12(r.q), target, fmt_sig12(*h), fmt_sig12(*n))?;
            }
        }
        self.out.write("scan.csv", &csv)?;
        self.out.write_json("scan.json", &reports)?;
        for r in reports {
            let crit = r.critical_q_pointwise;
            let expected = if r.q <= 0.75 * crit {
                Some(Trend::Bounded)
            } else if r.q >= 1.25 * crit {
                Some(Trend::Diverging)
            } else {
                None
            };
            let verdict = match expected {
                Some(t) => CheckVerdict::from_bool(r.trend == t),
                None => CheckVerdict::NotEvaluated,
            };
            let name = format!("integrability-{:?}-q{:.4}", r.target, r.q).to_lowercase();
            self.check(&name, verdict, json!({"trend": r.trend, "expected": expected, "criticalQ": crit}));
        }
        Ok(())
    }

    pub fn scan(&mut self, params: &ScanParams) -> Result<(), CliError> {
        let gen = self
            .cfg
            .space
            .generated()
            .cloned()
            .ok_or_else(|| CliError::Config("scan needs a generated space block".into()))?;
        if params.meshes.len() < 2 {
            return Err(CliError::Config("scan needs at least two meshes".into()));
        }
        let spaces: Vec<MetricMeasureSpace> =
            self.timed("space", |_| params.meshes.iter().map(|&h| gen.with_h(h).build()).collect::<Result<_, _>>())?;
        let point = params.point.clone().unwrap_or_else(|| vec![0.0; gen.dim()]);
        let cfg = self.solver(params.p);
        let reports = self.timed("scan", |_| {
            integrability_scan(&spaces, &point, cfg.p, &params.q, params.r, params.domain_radius, &cfg)
        })?;
        self.record_scan(&reports)
    }
}
