//! Test oracles that share no numerical code with the library.
#![allow(dead_code)]

use greenlab::MetricMeasureSpace;

/// Symmetric positive definite solve by banded Cholesky. `entries` lists the
/// lower triangle `(i, j, a_ij)` with `i >= j`; duplicates are summed.
pub fn banded_cholesky_solve(n: usize, entries: &[(usize, usize, f64)], b: &[f64]) -> Vec<f64> {
    let bw = entries.iter().map(|&(i, j, _)| i - j).max().unwrap_or(0);
    let w = bw + 1;
    // band[i * w + (i - j)] holds a_ij for j in [i - bw, i].
    let mut band = vec![0.0f64; n * w];
    for &(i, j, a) in entries {
        assert!(i >= j);
        band[i * w + (i - j)] += a;
    }
    for i in 0..n {
        let j0 = i.saturating_sub(bw);
        for j in j0..=i {
            let mut s = band[i * w + (i - j)];
            let k0 = j0.max(j.saturating_sub(bw));
            for k in k0..j {
                s -= band[i * w + (i - k)] * band[j * w + (j - k)];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite at row {i}");
                band[i * w] = s.sqrt();
            } else {
                band[i * w + (i - j)] = s / band[j * w];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let j0 = i.saturating_sub(bw);
        for k in j0..i {
            y[i] -= band[i * w + (i - k)] * y[k];
        }
        y[i] /= band[i * w];
    }
    for i in (0..n).rev() {
        for k in i + 1..(i + w).min(n) {
            y[i] -= band[k * w + (k - i)] * y[k];
        }
        y[i] /= band[i * w];
    }
    y
}

/// Weighted graph Laplacian problem for `p = 2`: conductance
/// `((mu_a + mu_b) / 2) / l^2` per edge, values pinned where `pinned` is
/// `Some`, and an optional point source.
pub fn harmonic_oracle(
    space: &MetricMeasureSpace,
    pinned: &[Option<f64>],
    source: Option<(usize, f64)>,
) -> Vec<f64> {
    let n = space.num_vertices();
    let mut index = vec![usize::MAX; n];
    let mut m = 0;
    for v in 0..n {
        if pinned[v].is_none() {
            index[v] = m;
            m += 1;
        }
    }
    let mu = space.measure();
    let mut entries = Vec::new();
    let mut rhs = vec![0.0; m];
    for e in space.edges() {
        let c = 0.5 * (mu[e.a] + mu[e.b]) / (e.length * e.length);
        let (ia, ib) = (index[e.a], index[e.b]);
        match (pinned[e.a], pinned[e.b]) {
            (None, None) => {
                entries.push((ia, ia, c));
                entries.push((ib, ib, c));
                entries.push((ia.max(ib), ia.min(ib), -c));
            }
            (None, Some(vb)) => {
                entries.push((ia, ia, c));
                rhs[ia] += c * vb;
            }
            (Some(va), None) => {
                entries.push((ib, ib, c));
                rhs[ib] += c * va;
            }
            (Some(_), Some(_)) => {}
        }
    }
    if let Some((v, s)) = source {
        rhs[index[v]] += s;
    }
    let x = banded_cholesky_solve(m, &entries, &rhs);
    (0..n)
        .map(|v| pinned[v].unwrap_or_else(|| x[index[v]]))
        .collect()
}

pub fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// `max |a - b| / max |b|`.
pub fn rel_sup_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&d) / max_abs(b).max(f64::MIN_POSITIVE)
}
