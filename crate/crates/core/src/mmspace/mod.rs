//! Discrete metric measure spaces.
//!
//! A space is a connected weighted graph whose vertices carry ambient
//! coordinates and a positive mass (the measure of the vertex cell). Edges
//! carry a length and an edge volume; the p-energy of a field is
//! `sum_e volume_e * (|du_e| / length_e)^p`.
//!
//! Distances follow the space's [`MetricMode`]: lattice grids use the ambient
//! Euclidean distance, cones and glued balls use the intrinsic shortest-path
//! distance of a metric stencil graph (lattice pairs up to a few cells apart
//! whose connecting segment stays inside the space).

mod dimension;
mod generators;
mod io;
mod region;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sets::VertexSet;

pub use dimension::{
    dyadic_radii, estimate_doubling, estimate_pointwise_dimension, slope_radii, BallIndex, DimensionEstimate,
};
pub use generators::{build_cone, build_glued_balls, build_grid, build_path};
pub use io::SpaceFile;
pub use region::Region;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricMode {
    GraphGeodesic,
    AmbientEuclidean,
}

/// How a space was generated. Carried into the space file so that the
/// intrinsic metric can be rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum Generator {
    Grid {
        #[serde(rename = "halfWidth")]
        half_width: f64,
        alpha: f64,
    },
    Cone {
        #[serde(rename = "halfHeight")]
        half_height: f64,
    },
    Glued {
        #[serde(rename = "neckLength")]
        neck_length: f64,
    },
    Path {
        length: f64,
    },
    Custom,
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Grid { .. } => "grid",
            Generator::Cone { .. } => "cone",
            Generator::Glued { .. } => "glued",
            Generator::Path { .. } => "path",
            Generator::Custom => "custom",
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Generator::Grid { alpha, .. } => *alpha,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Compressed adjacency: neighbors of `v` are `targets[offsets[v]..offsets[v+1]]`.
#[derive(Clone, Debug, Default)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<(usize, usize)>,
}

impl Adjacency {
    fn build(n: usize, pairs: impl Iterator<Item = (usize, usize)> + Clone) -> Self {
        let mut degree = vec![0usize; n];
        for (a, b) in pairs.clone() {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![(0, 0); offsets[n]];
        for (k, (a, b)) in pairs.enumerate() {
            targets[cursor[a]] = (b, k);
            cursor[a] += 1;
            targets[cursor[b]] = (a, k);
            cursor[b] += 1;
        }
        Self { offsets, targets }
    }

    #[inline]
    fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// The discretized `(X, d, mu)`. Immutable after construction.
#[derive(Clone, Debug)]
pub struct MetricMeasureSpace {
    dim: usize,
    h: f64,
    generator: Generator,
    mode: MetricMode,
    coords: Vec<f64>,
    measure: Vec<f64>,
    edges: Vec<Edge>,
    edge_volume: Vec<f64>,
    adjacency: Adjacency,
    /// Metric stencil for graph-geodesic spaces: (a, b, length).
    metric_edges: Vec<(usize, usize, f64)>,
    metric_adjacency: Adjacency,
}

impl MetricMeasureSpace {
    /// Validates and assembles a space. Edge volumes default to the mean of
    /// the endpoint masses.
    pub fn from_parts(
        dim: usize,
        h: f64,
        generator: Generator,
        mode: MetricMode,
        coords: Vec<f64>,
        measure: Vec<f64>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("mesh scale must be positive, got {h}")));
        }
        let n = measure.len();
        if n == 0 {
            return Err(Error::InvalidParameter("space has no vertices".into()));
        }
        if coords.len() != n * dim {
            return Err(Error::InvalidParameter(format!(
                "expected {} coordinates, got {}",
                n * dim,
                coords.len()
            )));
        }
        if let Some((v, m)) = measure.iter().enumerate().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidParameter(format!("vertex {v} has non-positive measure {m}")));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.a >= n || e.b >= n {
                return Err(Error::InvalidParameter(format!("edge ({}, {}) out of range", e.a, e.b)));
            }
            if e.a == e.b {
                return Err(Error::InvalidParameter(format!("self loop at vertex {}", e.a)));
            }
            if !(e.length > 0.0 && e.length.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) has non-positive length {}",
                    e.a, e.b, e.length
                )));
            }
            if !seen.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(Error::InvalidParameter(format!("edge ({}, {}) stored twice", e.a, e.b)));
            }
        }
        drop(seen);

        let adjacency = Adjacency::build(n, edges.iter().map(|e| (e.a, e.b)));
        let edge_volume = edges
            .iter()
            .map(|e| 0.5 * (measure[e.a] + measure[e.b]))
            .collect();

        let mut space = Self {
            dim,
            h,
            generator,
            mode,
            coords,
            measure,
            edges,
            edge_volume,
            adjacency,
            metric_edges: Vec::new(),
            metric_adjacency: Adjacency::default(),
        };
        if !space.is_connected() {
            return Err(Error::Disconnected(format!(
                "{} space with {} vertices has more than one component",
                space.generator.name(),
                n
            )));
        }
        if mode == MetricMode::GraphGeodesic {
            let region = Region::for_generator(&space.generator, h, dim);
            space.metric_edges = region::metric_stencil(&space, &region);
            space.metric_adjacency =
                Adjacency::build(n, space.metric_edges.iter().map(|&(a, b, _)| (a, b)));
        }
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nominal mesh spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn metric_mode(&self) -> MetricMode {
        self.mode
    }

    pub fn num_vertices(&self) -> usize {
        self.measure.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn coord(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_measure(&self) -> f64 {
        crate::numeric::compensated_sum(self.measure.iter().copied())
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Volume attached to each edge in the energy quadrature.
    pub fn edge_volumes(&self) -> &[f64] {
        &self.edge_volume
    }

    /// `(neighbor, edge index)` pairs incident to `v`.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        self.adjacency.neighbors(v)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }

    pub fn metric_edge_count(&self) -> usize {
        self.metric_edges.len()
    }

    /// Vertex closest (in ambient coordinates) to `point`; ties go to the
    /// lowest index.
    pub fn nearest_vertex(&self, point: &[f64]) -> usize {
        assert_eq!(point.len(), self.dim);
        let mut best = (f64::INFINITY, 0);
        for v in 0..self.num_vertices() {
            let d2: f64 = self
                .coord(v)
                .iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.0 {
                best = (d2, v);
            }
        }
        best.1
    }

    pub fn euclidean(&self, a: usize, b: usize) -> f64 {
        self.coord(a)
            .iter()
            .zip(self.coord(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Distances from `center` to every vertex under the space's metric.
    pub fn distances_from(&self, center: usize) -> Vec<f64> {
        match self.mode {
            MetricMode::AmbientEuclidean => (0..self.num_vertices())
                .map(|v| self.euclidean(center, v))
                .collect(),
            MetricMode::GraphGeodesic => self.geodesic_from(center),
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        match self.mode {
            MetricMode::AmbientEuclidean => self.euclidean(a, b),
            MetricMode::GraphGeodesic => self.geodesic_from(a)[b],
        }
    }

    fn geodesic_from(&self, center: usize) -> Vec<f64> {
        let n = self.num_vertices();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[center] = 0.0;
        heap.push(HeapEntry { dist: 0.0, vertex: center });
        while let Some(HeapEntry { dist: d, vertex: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(w, k) in self.metric_adjacency.neighbors(v) {
                let nd = d + self.metric_edges[k].2;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(HeapEntry { dist: nd, vertex: w });
                }
            }
        }
        dist
    }

    /// Largest distance from `center`.
    pub fn eccentricity(&self, center: usize) -> f64 {
        self.distances_from(center)
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Diameter estimate by a double sweep: exact for grids (the farthest
    /// vertex from a corner is the opposite corner), a lower bound in general.
    pub fn diameter(&self) -> f64 {
        let d0 = self.distances_from(0);
        let far = argmax(&d0);
        self.eccentricity(far)
    }

    /// Default local radius `R_K`: a quarter of the diameter.
    pub fn local_radius(&self) -> f64 {
        0.25 * self.diameter()
    }

    pub fn is_connected(&self) -> bool {
        self.is_connected_subset(&VertexSet::full(self.num_vertices()))
    }

    /// Whether the subgraph induced on `set` is connected (empty sets are not).
    pub fn is_connected_subset(&self, set: &VertexSet) -> bool {
        let Some(start) = set.iter().next() else {
            return false;
        };
        let mut visited = vec![false; self.num_vertices()];
        let mut stack = vec![start];
        visited[start] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in self.neighbors(v) {
                if set.contains(w) && !visited[w] {
                    visited[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == set.len()
    }

    /// Whether removing `v` disconnects the graph.
    pub fn is_cut_vertex(&self, v: usize) -> bool {
        let mut rest = VertexSet::full(self.num_vertices());
        rest.remove(v);
        !self.is_connected_subset(&rest)
    }

    /// Open ball `{w : d(center, w) < r}`.
    pub fn ball(&self, center: usize, r: f64) -> BallIndex {
        BallIndex::from_distances(self, center, r, &self.distances_from(center))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
