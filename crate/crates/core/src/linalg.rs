//! Sparse symmetric positive definite systems on the free vertices of a
//! Dirichlet problem.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, MatMut, Side};

use crate::error::{Error, Result};
use crate::mmspace::MetricMeasureSpace;
use crate::penergy::LinearBackend;
use crate::sets::VertexSet;

pub(crate) const PINNED: usize = usize::MAX;

/// Free vertices renumbered `0..m` in increasing vertex order.
#[derive(Clone, Debug)]
pub(crate) struct FreeMap {
    pub index: Vec<usize>,
    pub vertices: Vec<usize>,
}

impl FreeMap {
    pub fn new(free: &VertexSet) -> Self {
        let mut index = vec![PINNED; free.mask().len()];
        let vertices: Vec<usize> = free.iter().collect();
        for (i, &v) in vertices.iter().enumerate() {
            index[v] = i;
        }
        Self { index, vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }
}

/// Lower-triangular CSC pattern of a weighted graph Laplacian restricted to
/// the free vertices, with scatter positions for every edge.
pub(crate) struct LaplacePattern {
    m: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    diag_pos: Vec<usize>,
    /// Position of the off-diagonal entry of each edge joining two free
    /// vertices, `PINNED` otherwise.
    edge_pos: Vec<usize>,
    edge_ends: Vec<(usize, usize)>,
}

impl LaplacePattern {
    pub fn new(space: &MetricMeasureSpace, map: &FreeMap) -> Self {
        let m = map.len();
        let mut col_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::new();
        let mut diag_pos = Vec::with_capacity(m);
        let mut edge_pos = vec![PINNED; space.num_edges()];
        let mut lower: Vec<(usize, usize)> = Vec::new();
        col_ptr.push(0);
        for (j, &v) in map.vertices.iter().enumerate() {
            diag_pos.push(row_idx.len());
            row_idx.push(j);
            lower.clear();
            for &(w, k) in space.neighbors(v) {
                let i = map.index[w];
                if i != PINNED && i > j {
                    lower.push((i, k));
                }
            }
            lower.sort_unstable();
            for &(i, k) in &lower {
                edge_pos[k] = row_idx.len();
                row_idx.push(i);
            }
            col_ptr.push(row_idx.len());
        }
        let edge_ends = space
            .edges()
            .iter()
            .map(|e| (map.index[e.a], map.index[e.b]))
            .collect();
        Self { m, col_ptr, row_idx, diag_pos, edge_pos, edge_ends }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// Values for `sum_e c_e (e_a - e_b)(e_a - e_b)^T + diag(shift)`.
    pub fn assemble(&self, edge_coef: &[f64], shift: f64) -> Vec<f64> {
        let mut vals = vec![0.0; self.row_idx.len()];
        for (k, &c) in edge_coef.iter().enumerate() {
            let (i, j) = self.edge_ends[k];
            if i != PINNED {
                vals[self.diag_pos[i]] += c;
            }
            if j != PINNED {
                vals[self.diag_pos[j]] += c;
            }
            if self.edge_pos[k] != PINNED {
                vals[self.edge_pos[k]] -= c;
            }
        }
        if shift != 0.0 {
            for &d in &self.diag_pos {
                vals[d] += shift;
            }
        }
        vals
    }

    pub fn diagonal(&self, vals: &[f64]) -> Vec<f64> {
        self.diag_pos.iter().map(|&d| vals[d]).collect()
    }

    /// `y = A x` for the symmetric matrix stored by its lower triangle.
    fn matvec(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.m {
            let xj = x[j];
            let mut acc = 0.0;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let a = vals[p];
                if i == j {
                    acc += a * xj;
                } else {
                    acc += a * x[i];
                    y[i] += a * xj;
                }
            }
            y[j] += acc;
        }
    }
}

/// Repeated solves with one sparsity pattern and changing values.
pub(crate) struct SpdSolver {
    pattern: LaplacePattern,
    use_direct: bool,
    symbolic: Option<(SymbolicSparseColMat<usize>, SymbolicLlt<usize>)>,
    pub cg_tol: f64,
    pub cg_iterations: usize,
}

/// Above this many unknowns in three dimensions the automatic backend
/// switches to preconditioned conjugate gradients.
const DIRECT_LIMIT_3D: usize = 60_000;
const DIRECT_LIMIT: usize = 2_000_000;

impl SpdSolver {
    pub fn new(space: &MetricMeasureSpace, map: &FreeMap, backend: LinearBackend) -> Self {
        let pattern = LaplacePattern::new(space, map);
        let limit = if space.dim() >= 3 { DIRECT_LIMIT_3D } else { DIRECT_LIMIT };
        let use_direct = match backend {
            LinearBackend::Direct => true,
            LinearBackend::Cg => false,
            LinearBackend::Auto => pattern.dim() <= limit,
        };
        Self { pattern, use_direct, symbolic: None, cg_tol: 1e-13, cg_iterations: 0 }
    }

    pub fn pattern(&self) -> &LaplacePattern {
        &self.pattern
    }

    /// Solves `A x = b` where `A` has lower-triangle values `vals`.
    pub fn solve(&mut self, vals: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        if self.pattern.m == 0 {
            return Ok(Vec::new());
        }
        if self.use_direct {
            self.solve_direct(vals, b)
        } else {
            self.solve_cg(vals, b, None)
        }
    }

    fn solve_direct(&mut self, vals: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let m = self.pattern.m;
        if self.symbolic.is_none() {
            let sym = SymbolicSparseColMat::new_checked(
                m,
                m,
                self.pattern.col_ptr.clone(),
                None,
                self.pattern.row_idx.clone(),
            );
            let llt = SymbolicLlt::try_new(sym.as_ref(), Side::Lower)
                .map_err(|e| Error::LinearSolve(format!("symbolic factorization: {e:?}")))?;
            self.symbolic = Some((sym, llt));
        }
        let (sym, symbolic) = self.symbolic.as_ref().unwrap();
        let mat = SparseColMatRef::new(sym.as_ref(), vals);
        let llt = Llt::try_new_with_symbolic(symbolic.clone(), mat, Side::Lower)
            .map_err(|e| Error::LinearSolve(format!("cholesky: {e:?}")))?;
        let mut x = b.to_vec();
        llt.solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(&mut x, m, 1));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("non-finite solution".into()));
        }
        Ok(x)
    }

    /// Jacobi-preconditioned conjugate gradients, stopping at
    /// `|r| <= cg_tol * |b|`.
    pub fn solve_cg(&mut self, vals: &[f64], b: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>> {
        let m = self.pattern.m;
        let inv_diag: Vec<f64> = self.pattern.diagonal(vals).iter().map(|d| 1.0 / d).collect();
        if inv_diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::LinearSolve("non-positive diagonal".into()));
        }
        let bnorm = norm(b);
        let mut x = x0.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
        if bnorm == 0.0 {
            return Ok(vec![0.0; m]);
        }
        let mut r = vec![0.0; m];
        self.pattern.matvec(vals, &x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; m];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * m + 100;
        for it in 0..max_iter {
            if norm(&r) <= self.cg_tol * bnorm {
                self.cg_iterations += it;
                return Ok(x);
            }
            self.pattern.matvec(vals, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::LinearSolve("matrix is not positive definite".into()));
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolve(format!(
            "conjugate gradients stalled at relative residual {:.3e}",
            norm(&r) / bnorm
        )))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
