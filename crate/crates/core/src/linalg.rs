//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gaussian kernel `exp(-|a-b|^2 / (2 bandwidth^2))` on scalars.
#[inline]
pub fn gaussian(a: f64, b: f64, bandwidth: f64) -> f64 {
    let d = a - b;
    (-d * d / (2.0 * bandwidth * bandwidth)).exp()
}

/// Gaussian kernel on vectors of equal length.
#[inline]
pub fn gaussian_vec(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Singular values sorted in decreasing order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Moore–Penrose pseudo-inverse; singular values below `rel_tol * s_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let cutoff = rel_tol * s_max;
    let full_column_rank =
        m.nrows() >= m.ncols() && svd.singular_values.iter().all(|&s| s > cutoff && s > 0.0);
    if full_column_rank {
        let (q, r) = m.clone().qr().unpack();
        if let Some(inv) = r.solve_upper_triangular(&q.transpose()) {
            return inv;
        }
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_i * u_i^T / s
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out += (vi * ui.transpose()) / s;
        }
    }
    out
}

/// Greedy pivoted Cholesky factorization of a PSD kernel matrix accessed entry by entry.
///
/// Produces `factor` (n x r) with `K ≈ factor * factor^T`, exact on the pivot rows and columns.
/// Pivoting stops once the largest residual diagonal entry is at most `tol`.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    pub pivots: Vec<usize>,
    pub factor: DMatrix<f64>,
    pub residual_max: f64,
}

impl PivotedCholesky {
    pub fn new<F>(n: usize, diag: impl Fn(usize) -> f64, entry: F, tol: f64) -> Self
    where
        F: Fn(usize, usize) -> f64,
    {
        let mut residual: Vec<f64> = (0..n).map(&diag).collect();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut pivots = Vec::new();
        let mut chosen = vec![false; n];
        loop {
            let best = residual
                .iter()
                .enumerate()
                .filter(|(i, _)| !chosen[*i])
                .max_by(|a, b| a.1.total_cmp(b.1));
            let Some((j, &rj)) = best else { break };
            if rj <= tol || rj <= 0.0 {
                break;
            }
            let root = rj.sqrt();
            let mut col = vec![0.0; n];
            for (i, c) in col.iter_mut().enumerate() {
                if chosen[i] {
                    continue;
                }
                let mut v = entry(i, j);
                for prev in &cols {
                    v -= prev[i] * prev[j];
                }
                *c = v / root;
            }
            col[j] = root;
            for (i, r) in residual.iter_mut().enumerate() {
                if !chosen[i] {
                    *r = (*r - col[i] * col[i]).max(0.0);
                }
            }
            chosen[j] = true;
            residual[j] = 0.0;
            pivots.push(j);
            cols.push(col);
        }
        let residual_max = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen[*i])
            .map(|(_, r)| *r)
            .fold(0.0, f64::max);
        let r = cols.len();
        let factor = DMatrix::from_fn(n, r, |i, k| cols[k][i]);
        Self {
            pivots,
            factor,
            residual_max,
        }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Lower-triangular block of the factor restricted to the pivot rows (in pivot order).
    pub fn pivot_block(&self) -> DMatrix<f64> {
        let r = self.rank();
        DMatrix::from_fn(r, r, |a, b| self.factor[(self.pivots[a], b)])
    }
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("pivot block has a positive diagonal")
}

/// Solve `L^T x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("pivot block has a positive diagonal")
}

/// Cholesky solve of a symmetric PSD system, escalating a diagonal jitter until the
/// factorization succeeds. Returns the solution and the jitter that was used.
pub fn solve_psd_with_jitter(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    ladder: &[f64],
) -> Result<(DVector<f64>, f64)> {
    let n = m.nrows();
    let mut last = 0.0;
    for &jitter in ladder {
        last = jitter;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(chol) = a.cholesky() {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok((x, jitter));
            }
        }
    }
    Err(Error::IllConditioned { jitter: last })
}

/// Jitter ladder `0, 1e-12 t, 1e-11 t, ..., 1e-8 t` with `t` the trace of the system.
pub fn jitter_ladder(trace: f64) -> Vec<f64> {
    let t = if trace > 0.0 { trace } else { 1.0 };
    let mut out = vec![0.0];
    out.extend((8..=12).rev().map(|p| t * 10f64.powi(-p)).rev());
    out
}
