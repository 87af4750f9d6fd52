//! Point-matrix storage, (p,2)-norms, subspaces, projections, and center
//! distances.
//!
//! A `PointMatrix` holds n points in R^d, dense (row-major) or sparse
//! (compressed rows), chosen at construction: triplet input denser than 25%
//! is stored dense, since compressed indexing only pays off below that.
//! Costs and norms follow the (p,2) convention: the l2 norm acts within a
//! row, the p-norm across rows. `cost_p` returns the sum of p-th powers
//! without the final root, which is the form every downstream bound is
//! stated in.
//!
//! All types are immutable after construction. Row-wise reductions map rows
//! in index order and sum sequentially, so results do not depend on thread
//! count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{ORTHO_TOL, PIVOT_REL_TOL};
use crate::error::{Error, Result};

/// Rows below this run serially; above it, per-row maps go through rayon.
const PAR_ROW_THRESHOLD: usize = 512;

#[derive(Debug, Clone)]
enum Storage {
    /// Row-major n*d values.
    Dense(Vec<f64>),
    /// Compressed rows: row_ptr has n+1 entries; cols/vals hold nnz each,
    /// column indices strictly increasing within a row.
    Sparse { row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64> },
}

/// n points in R^d.
#[derive(Debug, Clone)]
pub struct PointMatrix {
    n: usize,
    d: usize,
    nnz: usize,
    storage: Storage,
}

impl PointMatrix {
    /// Builds dense storage from row vectors. Rejects ragged rows and
    /// non-finite entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("matrix needs at least one row".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("rows need at least one coordinate".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {} has {} coordinates, expected {}",
                    i,
                    r.len(),
                    d
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), d, flat)
    }

    /// Builds dense storage from a row-major buffer of length n*d.
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("matrix needs n >= 1 and d >= 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "flat buffer has {} values, expected {}",
                data.len(),
                n * d
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {} column {}",
                pos / d,
                pos % d
            )));
        }
        let nnz = data.iter().filter(|v| **v != 0.0).count();
        Ok(PointMatrix { n, d, nnz, storage: Storage::Dense(data) })
    }

    /// Builds from (row, col, value) triplets. Entries with value 0 are
    /// dropped; duplicate coordinates are rejected. Falls back to dense
    /// storage above 25% density.
    pub fn from_triplets(n: usize, d: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("matrix needs n >= 1 and d >= 1".into()));
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n || c >= d {
                return Err(Error::InvalidInput(format!(
                    "triplet ({}, {}) outside {}x{}",
                    r, c, n, d
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite entry at row {} column {}",
                    r, c
                )));
            }
            if v != 0.0 {
                entries.push((r, c, v));
            }
        }
        entries.sort_unstable_by_key(|a| (a.0, a.1));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidInput(format!(
                    "duplicate coordinate ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let nnz = entries.len();
        if (nnz as f64) > 0.25 * (n as f64) * (d as f64) {
            let mut flat = vec![0.0; n * d];
            for (r, c, v) in entries {
                flat[r * d + c] = v;
            }
            return Self::from_flat(n, d, flat);
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = entries.iter().map(|e| e.1).collect();
        let vals = entries.iter().map(|e| e.2).collect();
        Ok(PointMatrix { n, d, nnz, storage: Storage::Sparse { row_ptr, cols, vals } })
    }

    /// Dense view of a nalgebra matrix; rows become points.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let mut flat = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                flat.push(m[(i, j)]);
            }
        }
        Self::from_flat(n, d, flat)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    /// Calls `f(col, value)` for each stored nonzero of row `i` in column
    /// order. Dense rows skip exact zeros for consistency.
    pub fn for_each_nonzero(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(data) => {
                for (c, &v) in data[i * self.d..(i + 1) * self.d].iter().enumerate() {
                    if v != 0.0 {
                        f(c, v);
                    }
                }
            }
            Storage::Sparse { row_ptr, cols, vals } => {
                for idx in row_ptr[i]..row_ptr[i + 1] {
                    f(cols[idx], vals[idx]);
                }
            }
        }
    }

    /// Writes row `i` densely into `buf` (length d).
    pub fn row_dense(&self, i: usize, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.d);
        match &self.storage {
            Storage::Dense(data) => buf.copy_from_slice(&data[i * self.d..(i + 1) * self.d]),
            Storage::Sparse { row_ptr, cols, vals } => {
                buf.fill(0.0);
                for idx in row_ptr[i]..row_ptr[i + 1] {
                    buf[cols[idx]] = vals[idx];
                }
            }
        }
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        let mut s = 0.0;
        match &self.storage {
            Storage::Dense(data) => {
                for &v in &data[i * self.d..(i + 1) * self.d] {
                    s += v * v;
                }
            }
            Storage::Sparse { row_ptr, vals, .. } => {
                for &v in &vals[row_ptr[i]..row_ptr[i + 1]] {
                    s += v * v;
                }
            }
        }
        s
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.n).map(|i| self.row_norm_sq(i)).fold(0.0f64, f64::max).sqrt()
    }

    /// Total p-th-power mass Σ ‖row‖^p; the natural scale for relative
    /// floors.
    pub fn mass_p(&self, p: f64) -> f64 {
        (0..self.n).map(|i| self.row_norm_sq(i).sqrt().powf(p)).sum()
    }

    /// A · U for a d×ell matrix U; nnz-proportional on sparse storage.
    pub fn mul_basis(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.nrows() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} rows, points have dimension {}",
                u.nrows(),
                self.d
            )));
        }
        let ell = u.ncols();
        let mut out = DMatrix::<f64>::zeros(self.n, ell);
        match &self.storage {
            Storage::Dense(data) => {
                for i in 0..self.n {
                    let row = &data[i * self.d..(i + 1) * self.d];
                    for j in 0..ell {
                        let col = u.column(j);
                        let mut s = 0.0;
                        for c in 0..self.d {
                            s += row[c] * col[c];
                        }
                        out[(i, j)] = s;
                    }
                }
            }
            Storage::Sparse { row_ptr, cols, vals } => {
                for i in 0..self.n {
                    for idx in row_ptr[i]..row_ptr[i + 1] {
                        let (c, v) = (cols[idx], vals[idx]);
                        for j in 0..ell {
                            out[(i, j)] += v * u[(c, j)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::<f64>::zeros(self.n, self.d);
        let mut buf = vec![0.0; self.d];
        for i in 0..self.n {
            self.row_dense(i, &mut buf);
            for j in 0..self.d {
                m[(i, j)] = buf[j];
            }
        }
        m
    }
}

/// An ell-dimensional subspace of R^d via a column-orthonormal basis.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Validates column-orthonormality to `ORTHO_TOL` per Gram entry.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let (d, ell) = basis.shape();
        if ell > d {
            return Err(Error::DimensionMismatch(format!(
                "subspace dimension {} exceeds ambient dimension {}",
                ell, d
            )));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("basis has non-finite entries".into()));
        }
        let gram = basis.tr_mul(&basis);
        for i in 0..ell {
            for j in 0..ell {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > ORTHO_TOL {
                    return Err(Error::InvalidInput(format!(
                        "basis not orthonormal: gram[{},{}] = {:.3e}",
                        i,
                        j,
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(Subspace { basis })
    }

    /// The whole space: identity basis.
    pub fn full(d: usize) -> Self {
        Subspace { basis: DMatrix::identity(d, d) }
    }

    /// Zero-dimensional subspace (projection maps everything to 0).
    pub fn empty(d: usize) -> Self {
        Subspace { basis: DMatrix::zeros(d, 0) }
    }

    pub fn d(&self) -> usize {
        self.basis.nrows()
    }

    pub fn ell(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
}

/// k centers in R^m, stored as rows.
#[derive(Debug, Clone)]
pub struct CenterSet {
    centers: DMatrix<f64>,
}

impl CenterSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let pm = PointMatrix::from_rows(rows)?;
        Ok(CenterSet { centers: pm.to_dmatrix() })
    }

    pub fn from_dmatrix(centers: DMatrix<f64>) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::InvalidInput("center set needs k >= 1 and m >= 1".into()));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("center set has non-finite entries".into()));
        }
        Ok(CenterSet { centers })
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn center(&self, j: usize) -> Vec<f64> {
        (0..self.centers.ncols()).map(|c| self.centers[(j, c)]).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.centers
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::invalid_parameter("p", format!("{} (need finite p >= 1)", p)));
    }
    Ok(())
}

fn map_rows<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n >= PAR_ROW_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// (p,2)-norm: (Σ ‖row‖₂^p)^(1/p).
pub fn norm_p2(m: &PointMatrix, p: f64) -> Result<f64> {
    check_p(p)?;
    let powers = map_rows(m.n(), |i| m.row_norm_sq(i).sqrt().powf(p));
    Ok(powers.iter().sum::<f64>().powf(1.0 / p))
}

/// (p,2)-norm of a dense matrix's rows.
pub fn norm_p2_dense(m: &DMatrix<f64>, p: f64) -> Result<f64> {
    check_p(p)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry".into()));
    }
    let sum: f64 = (0..m.nrows()).map(|i| m.row(i).norm().powf(p)).sum();
    Ok(sum.powf(1.0 / p))
}

/// Exact per-row distances ‖Aᵢ − Aᵢ U Uᵀ‖₂.
///
/// Dense rows subtract the reconstruction explicitly; sparse rows use the
/// Pythagorean form ‖a‖² − ‖Uᵀa‖² (clamped at 0), which avoids densifying
/// but gives up relative accuracy only when the residual is tiny against
/// the row norm.
pub fn residual_norms(a: &PointMatrix, s: &Subspace) -> Result<Vec<f64>> {
    if s.d() != a.d() {
        return Err(Error::DimensionMismatch(format!(
            "subspace ambient {} vs points {}",
            s.d(),
            a.d()
        )));
    }
    let u = s.basis();
    let ell = s.ell();
    let d = a.d();
    Ok(map_rows(a.n(), |i| {
        if a.is_sparse() {
            let mut coef = vec![0.0; ell];
            a.for_each_nonzero(i, |c, v| {
                for j in 0..ell {
                    coef[j] += v * u[(c, j)];
                }
            });
            let proj_sq: f64 = coef.iter().map(|x| x * x).sum();
            (a.row_norm_sq(i) - proj_sq).max(0.0).sqrt()
        } else {
            let mut row = vec![0.0; d];
            a.row_dense(i, &mut row);
            let mut resid = row.clone();
            for j in 0..ell {
                let col = u.column(j);
                let mut c = 0.0;
                for idx in 0..d {
                    c += row[idx] * col[idx];
                }
                for idx in 0..d {
                    resid[idx] -= c * col[idx];
                }
            }
            resid.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
    }))
}

/// Σ dist(Aᵢ, S)^p — the p-th-power sum, no final root.
pub fn cost_p(a: &PointMatrix, s: &Subspace, p: f64) -> Result<f64> {
    check_p(p)?;
    let dists = residual_norms(a, s)?;
    Ok(dists.iter().map(|d| d.powf(p)).sum())
}

/// Projection in factored form: the coefficient matrix A·U. The
/// reconstruction (A·U)·Uᵀ is left to callers that need ambient rows.
pub fn project(a: &PointMatrix, s: &Subspace) -> Result<DMatrix<f64>> {
    if s.d() != a.d() {
        return Err(Error::DimensionMismatch(format!(
            "subspace ambient {} vs points {}",
            s.d(),
            a.d()
        )));
    }
    a.mul_basis(s.basis())
}

/// Nearest center by Euclidean distance; ties resolve to the lowest index.
pub fn dist_to_centers(x: &[f64], c: &CenterSet) -> Result<(usize, f64)> {
    if x.len() != c.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point dimension {} vs centers dimension {}",
            x.len(),
            c.dim()
        )));
    }
    let mut best = (0usize, f64::INFINITY);
    for j in 0..c.k() {
        let mut s = 0.0;
        for (idx, xv) in x.iter().enumerate() {
            let dlt = xv - c.matrix()[(j, idx)];
            s += dlt * dlt;
        }
        if s < best.1 {
            best = (j, s);
        }
    }
    Ok((best.0, best.1.sqrt()))
}

/// Orthonormal basis for the column space of V.
///
/// Twice-through Gram–Schmidt; a column whose remainder falls below
/// `PIVOT_REL_TOL` times the largest original column norm is dependent and
/// dropped, so rank-deficient input yields ell = rank(V). Already
/// orthonormal input passes through unchanged.
pub fn orthonormalize(v: &DMatrix<f64>) -> Subspace {
    let (d, m) = v.shape();
    let max_col_norm = (0..m).map(|j| v.column(j).norm()).fold(0.0f64, f64::max);
    if max_col_norm == 0.0 {
        return Subspace::empty(d);
    }
    let threshold = PIVOT_REL_TOL * max_col_norm;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m.min(d));
    for j in 0..m {
        let mut w: Vec<f64> = (0..d).map(|r| v[(r, j)]).collect();
        // Two passes keep orthogonality near machine precision even for
        // nearly dependent columns.
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= dot * bi;
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > threshold {
            for wi in &mut w {
                *wi /= norm;
            }
            basis.push(w);
            if basis.len() == d {
                break;
            }
        }
    }
    let ell = basis.len();
    let mut u = DMatrix::<f64>::zeros(d, ell);
    for (j, b) in basis.iter().enumerate() {
        for r in 0..d {
            u[(r, j)] = b[r];
        }
    }
    Subspace { basis: u }
}

// ==== tests ====
