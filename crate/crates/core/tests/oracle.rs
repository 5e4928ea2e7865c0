//! p = 2 solves against an independent banded Cholesky on every generator.

mod common;

use common::{harmonic_oracle, rel_sup_diff};
use greenlab::capacity::{solve_capacity, CapacityProblem};
use greenlab::green::{compute_k, default_cutoff, solve_singular};
use greenlab::mmspace::{build_cone, build_glued_balls, build_grid, build_path};
use greenlab::penergy::{minimize, solve_dirichlet, DirichletProblem, PointSource, Start};
use greenlab::{EnergyConfig, MetricMeasureSpace, VertexSet};

fn spaces() -> Vec<(&'static str, MetricMeasureSpace, Vec<f64>, f64)> {
    vec![
        ("grid2", build_grid(2, 0.5, 1.0 / 16.0, 0.0).unwrap(), vec![0.0, 0.0], 0.4),
        ("grid3", build_grid(3, 0.5, 1.0 / 16.0, 0.0).unwrap(), vec![0.0; 3], 0.4),
        ("weighted", build_grid(2, 0.5, 1.0 / 16.0, 1.0).unwrap(), vec![0.0, 0.0], 0.4),
        ("cone", build_cone(2, 1.0, 1.0 / 16.0).unwrap(), vec![0.0, 0.0], 0.6),
        ("glued", build_glued_balls(3, 0.25, 0.5).unwrap(), vec![-1.25, 0.0, 0.0], 0.9),
        ("path", build_path(1.0, 40).unwrap(), vec![0.5], 0.4),
    ]
}

fn ball(space: &MetricMeasureSpace, x0: usize, r: f64) -> VertexSet {
    let d = space.distances_from(x0);
    VertexSet::from_predicate(d.len(), |v| d[v] < r)
}

#[test]
fn condenser_matches_linear_solve_from_every_start() {
    let cfg = EnergyConfig::with_p(2.0);
    for (name, space, point, big_r) in spaces() {
        let x0 = space.nearest_vertex(&point);
        let core = VertexSet::from_predicate(space.num_vertices(), |v| space.distance(x0, v) <= 0.3 * big_r);
        let problem = DirichletProblem::zero_outside(ball(&space, x0, big_r)).pin(&core, 1.0);
        let oracle = harmonic_oracle(&space, &problem.boundary, None);
        for start in [Start::Harmonic, Start::Zero, Start::Random(5)] {
            let u = solve_dirichlet(&space, &problem, &cfg, start.clone()).unwrap_or_else(|e| panic!("{name}: {e}"));
            let diff = rel_sup_diff(&u.values, &oracle);
            assert!(diff <= 1e-6, "{name} {start:?}: {diff:e}");
        }
    }
}

#[test]
fn point_source_matches_linear_solve() {
    let cfg = EnergyConfig::with_p(2.0);
    for (name, space, point, big_r) in spaces() {
        let x0 = space.nearest_vertex(&point);
        let domain = ball(&space, x0, big_r);
        let boundary: Vec<Option<f64>> =
            (0..space.num_vertices()).map(|v| if domain.contains(v) { None } else { Some(0.0) }).collect();
        let source = PointSource { vertex: x0, strength: 1.5 };
        let u = minimize(&space, &domain, &boundary, Some(source), &cfg).unwrap();
        let oracle = harmonic_oracle(&space, &boundary, Some((x0, 1.5)));
        assert!(rel_sup_diff(&u.values, &oracle) <= 1e-6, "{name}");
    }
}

#[test]
fn capacity_equals_oracle_energy() {
    let cfg = EnergyConfig::with_p(2.0);
    for (name, space, point, big_r) in spaces() {
        let x0 = space.nearest_vertex(&point);
        let problem = CapacityProblem::ring(&space, x0, 0.3 * big_r, big_r, 2.0).unwrap();
        let cap = solve_capacity(&space, &problem, &cfg).unwrap().value;
        let boundary = problem.dirichlet().boundary;
        let u = harmonic_oracle(&space, &boundary, None);
        let energy: f64 = space
            .edges()
            .iter()
            .map(|e| 0.5 * (space.measure()[e.a] + space.measure()[e.b]) * ((u[e.a] - u[e.b]) / e.length).powi(2))
            .sum();
        assert!((cap / energy - 1.0).abs() <= 1e-9, "{name}: {cap} vs {energy}");
    }
}

#[test]
fn green_flux_equals_source_strength() {
    for p in [1.5, 2.0, 3.0] {
        let cfg = EnergyConfig::with_p(p);
        let space = build_grid(2, 0.5, 1.0 / 32.0, 0.0).unwrap();
        let x0 = space.nearest_vertex(&[0.0, 0.0]);
        let g = solve_singular(&space, &ball(&space, x0, 0.45), x0, p, &cfg).unwrap();
        let k = compute_k(&space, &g, &default_cutoff(&space, &g, &cfg).unwrap(), &cfg).unwrap();
        assert!((k - 1.0).abs() <= 1e-6, "p = {p}: {k}");
    }
}

#[test]
fn planar_annulus_converges_to_closed_form() {
    let target = 2.0 * std::f64::consts::PI / 4f64.ln();
    let errors: Vec<f64> = [16.0, 32.0, 64.0]
        .iter()
        .map(|k| {
            let space = build_grid(2, 0.5, 1.0 / k, 0.0).unwrap();
            let x0 = space.nearest_vertex(&[0.0, 0.0]);
            let problem = CapacityProblem::ring(&space, x0, 0.1, 0.4, 2.0).unwrap();
            let cap = solve_capacity(&space, &problem, &EnergyConfig::with_p(2.0)).unwrap().value;
            (cap / target - 1.0).abs()
        })
        .collect();
    assert!(errors[2] < 0.05, "{errors:?}");
    assert!(errors[2] < errors[0], "{errors:?}");
}
