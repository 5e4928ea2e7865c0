use super::{Edge, Generator, MetricMeasureSpace, MetricMode};
use crate::error::{Error, Result};

/// Number of lattice steps covering `extent`, tolerant to round-off in the
/// ratio.
fn steps(extent: f64, h: f64) -> i64 {
    (extent / h + 1e-9).floor() as i64
}

fn check_mesh(h: f64, extent: f64, what: &str) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("mesh size must be positive, got {h}")));
    }
    if !(extent >= 8.0 * h * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "{what} {extent} must be at least 8h = {}",
            8.0 * h
        )));
    }
    Ok(())
}

/// Iterates integer points of `[-m, m]^n` in lexicographic order (last axis
/// fastest).
fn lattice_points(n: usize, m: i64) -> impl Iterator<Item = Vec<i64>> {
    let side = (2 * m + 1) as usize;
    (0..side.pow(n as u32)).map(move |mut code| {
        let mut k = vec![0i64; n];
        for slot in k.iter_mut().rev() {
            *slot = (code % side) as i64 - m;
            code /= side;
        }
        k
    })
}

/// Keeps the lattice points accepted by `keep`, joins lattice neighbors, and
/// returns (coords, index map, edges).
fn lattice_subset(
    n: usize,
    m: i64,
    h: f64,
    mut keep: impl FnMut(&[i64]) -> bool,
) -> (Vec<Vec<i64>>, Vec<Edge>) {
    let side = (2 * m + 1) as usize;
    let mut index = vec![usize::MAX; side.pow(n as u32)];
    let mut points = Vec::new();
    for (code, k) in lattice_points(n, m).enumerate() {
        if keep(&k) {
            index[code] = points.len();
            points.push(k);
        }
    }
    let code_of = |k: &[i64]| -> usize {
        k.iter().fold(0usize, |acc, &x| acc * side + (x + m) as usize)
    };
    let mut edges = Vec::new();
    for (i, k) in points.iter().enumerate() {
        for axis in 0..n {
            if k[axis] == m {
                continue;
            }
            let mut nb = k.clone();
            nb[axis] += 1;
            let j = index[code_of(&nb)];
            if j != usize::MAX {
                edges.push(Edge { a: i, b: j, length: h });
            }
        }
    }
    (points, edges)
}

/// Axis-aligned lattice on `[-half_width, half_width]^n` with spacing `h` and
/// measure density `|x|^alpha`, regularized to `max(|x|, h/2)^alpha`.
pub fn build_grid(n: usize, half_width: f64, h: f64, alpha: f64) -> Result<MetricMeasureSpace> {
    if !(n == 2 || n == 3) {
        return Err(Error::InvalidParameter(format!("grid dimension must be 2 or 3, got {n}")));
    }
    check_mesh(h, half_width, "half width")?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("measure exponent must be >= 0, got {alpha}")));
    }
    let m = steps(half_width, h);
    let (points, edges) = lattice_subset(n, m, h, |_| true);
    let cell = h.powi(n as i32);
    let mut coords = Vec::with_capacity(points.len() * n);
    let mut measure = Vec::with_capacity(points.len());
    for k in &points {
        let x: Vec<f64> = k.iter().map(|&i| i as f64 * h).collect();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        measure.push(if alpha == 0.0 { cell } else { cell * r.max(0.5 * h).powf(alpha) });
        coords.extend(x);
    }
    MetricMeasureSpace::from_parts(
        n,
        h,
        Generator::Grid { half_width, alpha },
        MetricMode::AmbientEuclidean,
        coords,
        measure,
        edges,
    )
}

/// Lattice points of the double cone `x_1^2 + ... + x_{n-1}^2 <= x_n^2`,
/// truncated at `|x_n| <= half_height`, with Lebesgue cell masses and the
/// intrinsic (shortest path) metric.
pub fn build_cone(n: usize, half_height: f64, h: f64) -> Result<MetricMeasureSpace> {
    if !(n == 2 || n == 3) {
        return Err(Error::InvalidParameter(format!("cone dimension must be 2 or 3, got {n}")));
    }
    check_mesh(h, half_height, "half height")?;
    let m = steps(half_height, h);
    let (points, edges) = lattice_subset(n, m, h, |k| {
        let radial: i64 = k[..n - 1].iter().map(|x| x * x).sum();
        radial <= k[n - 1] * k[n - 1]
    });
    let coords = points
        .iter()
        .flat_map(|k| k.iter().map(|&i| i as f64 * h))
        .collect();
    let measure = vec![h.powi(n as i32); points.len()];
    MetricMeasureSpace::from_parts(
        n,
        h,
        Generator::Cone { half_height },
        MetricMode::GraphGeodesic,
        coords,
        measure,
        edges,
    )
}

/// Ball centers and lattice radius of the glued-balls layout. The junction
/// vertices (extreme lattice points of each ball on the first axis) sit at
/// `x_1 = -+neck_length/2`.
pub(super) fn glued_layout(neck_length: f64, h: f64, dim: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let radius = steps(1.0, h) as f64 * h;
    let mut left = vec![0.0; dim];
    let mut right = vec![0.0; dim];
    left[0] = -(0.5 * neck_length + radius);
    right[0] = 0.5 * neck_length + radius;
    (left, right, radius)
}

/// Two unit-ball lattices joined by a one-dimensional chain of vertices along
/// the first axis. Ball cells carry Lebesgue mass `h^3`; the neck is
/// Lebesgue-null in the continuum and its chain vertices carry the same small
/// cell mass `h^3`.
pub fn build_glued_balls(n: usize, h: f64, neck_length: f64) -> Result<MetricMeasureSpace> {
    if n != 3 {
        return Err(Error::InvalidParameter(format!("glued balls need dimension 3, got {n}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("mesh size must be positive, got {h}")));
    }
    if !(neck_length >= 2.0 * h * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "neck length {neck_length} must be at least 2h = {}",
            2.0 * h
        )));
    }
    let m = steps(1.0, h);
    if m < 4 {
        return Err(Error::InvalidParameter(format!("mesh size {h} too coarse for a unit ball")));
    }
    let (left, right, _) = glued_layout(neck_length, h, n);
    let (ball, ball_edges) = lattice_subset(n, m, h, |k| {
        let r2: i64 = k.iter().map(|x| x * x).sum();
        r2 <= m * m
    });
    let cell = h.powi(n as i32);
    let nb = ball.len();

    let mut coords = Vec::new();
    let mut edges = Vec::new();
    for center in [&left, &right] {
        let offset = coords.len() / n;
        for k in &ball {
            coords.extend(k.iter().zip(center.iter()).map(|(&ki, c)| c + ki as f64 * h));
        }
        edges.extend(ball_edges.iter().map(|e| Edge { a: e.a + offset, b: e.b + offset, length: e.length }));
    }
    let mut measure = vec![cell; 2 * nb];

    let axis_extreme = |sign: i64| {
        ball.iter()
            .position(|k| k[0] == sign * m && k[1..].iter().all(|&x| x == 0))
            .expect("ball lattice contains its axis extremes")
    };
    let left_junction = axis_extreme(1);
    let right_junction = nb + axis_extreme(-1);

    let segments = (neck_length / h - 1e-9).ceil().max(2.0) as usize;
    let spacing = neck_length / segments as f64;
    let mut prev = left_junction;
    for j in 1..segments {
        let id = measure.len();
        let mut x = vec![0.0; n];
        x[0] = -0.5 * neck_length + j as f64 * spacing;
        coords.extend(x);
        measure.push(cell);
        edges.push(Edge { a: prev, b: id, length: spacing });
        prev = id;
    }
    edges.push(Edge { a: prev, b: right_junction, length: spacing });

    MetricMeasureSpace::from_parts(
        n,
        h,
        Generator::Glued { neck_length },
        MetricMode::GraphGeodesic,
        coords,
        measure,
        edges,
    )
}

/// Uniform path graph on `[0, length]` with `segments` edges, unit-density
/// measure (`h` per vertex) and the ambient metric.
pub fn build_path(length: f64, segments: usize) -> Result<MetricMeasureSpace> {
    if segments < 2 || !(length > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "path needs positive length and at least 2 segments, got {length}, {segments}"
        )));
    }
    let h = length / segments as f64;
    let coords: Vec<f64> = (0..=segments).map(|i| i as f64 * h).collect();
    let measure = vec![h; segments + 1];
    let edges = (0..segments).map(|i| Edge { a: i, b: i + 1, length: h }).collect();
    MetricMeasureSpace::from_parts(
        1,
        h,
        Generator::Path { length },
        MetricMode::AmbientEuclidean,
        coords,
        measure,
        edges,
    )
}
