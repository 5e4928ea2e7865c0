use std::collections::HashMap;

use super::{Generator, MetricMeasureSpace};

const TOL: f64 = 1e-9;

/// The continuum set a lattice space discretizes. Used only to decide which
/// straight segments between nearby vertices stay inside the space.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    /// A convex set: every segment is admissible.
    Convex,
    /// Double cone `|x'| <= |x_n|`; each nappe is convex, the nappes meet
    /// only at the apex.
    Cone,
    /// Two closed balls joined along the first axis by a segment.
    Glued { left: Vec<f64>, right: Vec<f64>, radius: f64 },
    /// No continuum information; the metric graph is the edge graph.
    Graph,
}

impl Region {
    pub fn for_generator(generator: &Generator, h: f64, dim: usize) -> Region {
        match generator {
            Generator::Grid { .. } | Generator::Path { .. } => Region::Convex,
            Generator::Cone { .. } => Region::Cone,
            Generator::Glued { neck_length } => {
                let (left, right, radius) = super::generators::glued_layout(*neck_length, h, dim);
                Region::Glued { left, right, radius }
            }
            Generator::Custom => Region::Graph,
        }
    }

    /// Whether the closed segment `[a, b]` lies in the region, assuming both
    /// endpoints do.
    pub fn segment_inside(&self, a: &[f64], b: &[f64]) -> bool {
        match self {
            Region::Convex => true,
            Region::Cone => {
                let (za, zb) = (a[a.len() - 1], b[b.len() - 1]);
                let apex_a = a.iter().all(|x| x.abs() < TOL);
                let apex_b = b.iter().all(|x| x.abs() < TOL);
                apex_a || apex_b || (za > 0.0 && zb > 0.0) || (za < 0.0 && zb < 0.0)
            }
            Region::Glued { left, right, radius } => {
                let in_ball = |p: &[f64], c: &[f64]| dist(p, c) <= radius + TOL;
                let on_axis = |p: &[f64]| p[1..].iter().all(|x| x.abs() < TOL);
                (in_ball(a, left) && in_ball(b, left))
                    || (in_ball(a, right) && in_ball(b, right))
                    || (on_axis(a) && on_axis(b))
            }
            Region::Graph => false,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Stencil reach in cells: offsets with max-norm up to this many cells.
fn stencil_reach(dim: usize) -> i64 {
    if dim <= 2 {
        3
    } else {
        2
    }
}

/// Metric graph of a geodesic space: every energy edge, plus every pair of
/// vertices within the stencil reach whose segment stays in the region.
pub(super) fn metric_stencil(space: &MetricMeasureSpace, region: &Region) -> Vec<(usize, usize, f64)> {
    let mut out: Vec<(usize, usize, f64)> = space
        .edges()
        .iter()
        .map(|e| (e.a.min(e.b), e.a.max(e.b), e.length))
        .collect();
    if *region == Region::Graph {
        return out;
    }
    let dim = space.dim();
    let h = space.h();
    let reach = stencil_reach(dim);
    let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|x| (x / h).floor() as i64).collect() };

    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for v in 0..space.num_vertices() {
        buckets.entry(key(space.coord(v))).or_default().push(v);
    }
    let mut existing: std::collections::HashSet<(usize, usize)> =
        out.iter().map(|&(a, b, _)| (a, b)).collect();

    let span = (2 * reach + 1) as usize;
    let mut offset = vec![0i64; dim];
    for v in 0..space.num_vertices() {
        let pv = space.coord(v);
        let base = key(pv);
        for code in 0..span.pow(dim as u32) {
            let mut c = code;
            for o in offset.iter_mut() {
                *o = (c % span) as i64 - reach;
                c /= span;
            }
            let cell: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            let Some(candidates) = buckets.get(&cell) else {
                continue;
            };
            for &w in candidates {
                if w <= v {
                    continue;
                }
                let pw = space.coord(w);
                let max_norm = pv
                    .iter()
                    .zip(pw)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if max_norm > reach as f64 * h * (1.0 + 1e-9) {
                    continue;
                }
                if existing.contains(&(v, w)) || !region.segment_inside(pv, pw) {
                    continue;
                }
                existing.insert((v, w));
                out.push((v, w, dist(pv, pw)));
            }
        }
    }
    out.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    out
}
