//! Weighted least squares by Householder QR with in-order column dropping.
//!
//! Columns are processed left to right. A column whose component orthogonal to
//! the already-accepted columns has norm below `RANK_TOLERANCE` times its own
//! norm is dropped and receives a zero coefficient. Predictions are then the
//! same as those from any generalized inverse, and earlier columns (intercept,
//! base covariates) always win over later ones (augmenting basis terms).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold for declaring a column linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Full-length coefficient vector; dropped columns hold 0.
    pub coef: DVector<f64>,
    /// Indices of the columns kept in the fit, ascending.
    pub kept: Vec<usize>,
    /// Indices of columns dropped as collinear, ascending.
    pub dropped: Vec<usize>,
    /// Upper-triangular factor over the kept columns.
    r: DMatrix<f64>,
    /// Weighted residual sum of squares.
    pub rss: f64,
}

impl LeastSquares {
    /// `(R^T R)^{-1}` over the kept columns, i.e. `(X^T W X)^{-1}`.
    pub fn unscaled_covariance(&self) -> DMatrix<f64> {
        let k = self.kept.len();
        let mut rinv = DMatrix::<f64>::identity(k, k);
        // back-substitute each unit vector
        for col in 0..k {
            for i in (0..k).rev() {
                let mut s = rinv[(i, col)];
                for j in (i + 1)..k {
                    s -= self.r[(i, j)] * rinv[(j, col)];
                }
                rinv[(i, col)] = s / self.r[(i, i)];
            }
        }
        &rinv * rinv.transpose()
    }
}

/// Minimizes `sum_i w_i (y_i - x_i^T b)^2` over the rows where `rows[i]` holds.
///
/// `weights = None` means unit weights. Weights must be positive and finite on
/// the selected rows.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &[f64],
    rows: &[bool],
    weights: Option<&[f64]>,
) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if y.len() != n || rows.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Dimension(format!(
            "design has {n} rows but y/subset/weights lengths are {}/{}/{}",
            y.len(),
            rows.len(),
            weights.map_or(n, <[f64]>::len)
        )));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| rows[i]).collect();
    let m = idx.len();
    if m == 0 {
        return Err(Error::EmptySubset);
    }

    let mut a = DMatrix::<f64>::zeros(m, p);
    let mut b = DVector::<f64>::zeros(m);
    for (r, &i) in idx.iter().enumerate() {
        let w = match weights {
            Some(w) => {
                let wi = w[i];
                if !(wi > 0.0 && wi.is_finite()) {
                    return Err(Error::InvalidWeight { index: i, value: wi });
                }
                wi
            }
            None => 1.0,
        };
        if !y[i].is_finite() {
            return Err(Error::NonFinite(format!("response at row {i}")));
        }
        let sw = w.sqrt();
        for j in 0..p {
            a[(r, j)] = sw * x[(i, j)];
        }
        b[r] = sw * y[i];
    }

    let col_norms: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let mut kept = Vec::with_capacity(p);
    let mut dropped = Vec::new();
    let mut k = 0usize;
    for j in 0..p {
        if k >= m {
            dropped.push(j);
            continue;
        }
        let tail_norm = a.view((k, j), (m - k, 1)).norm();
        if !(col_norms[j] > 0.0) || tail_norm <= RANK_TOLERANCE * col_norms[j] {
            dropped.push(j);
            continue;
        }
        // Householder reflector sending a[k.., j] to (alpha, 0, ..., 0).
        let alpha = if a[(k, j)] > 0.0 { -tail_norm } else { tail_norm };
        let mut v: DVector<f64> = a.view((k, j), (m - k, 1)).column(0).into_owned();
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            for jj in j..p {
                let dot = v.dot(&a.view((k, jj), (m - k, 1)).column(0));
                let f = 2.0 * dot / vnorm2;
                for r in 0..(m - k) {
                    a[(k + r, jj)] -= f * v[r];
                }
            }
            let dot = v.dot(&b.rows(k, m - k));
            let f = 2.0 * dot / vnorm2;
            for r in 0..(m - k) {
                b[k + r] -= f * v[r];
            }
        }
        kept.push(j);
        k += 1;
    }

    let rank = kept.len();
    let mut r = DMatrix::<f64>::zeros(rank, rank);
    for (ri, _) in kept.iter().enumerate() {
        for (cj, &col) in kept.iter().enumerate().skip(ri) {
            r[(ri, cj)] = a[(ri, col)];
        }
    }
    let mut sol = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = b[i];
        for j in (i + 1)..rank {
            s -= r[(i, j)] * sol[j];
        }
        sol[i] = s / r[(i, i)];
    }
    let rss = b.rows(rank, m - rank).norm_squared();
    let mut coef = DVector::<f64>::zeros(p);
    for (pos, &col) in kept.iter().enumerate() {
        coef[col] = sol[pos];
    }
    Ok(LeastSquares {
        coef,
        kept,
        dropped,
        r,
        rss,
    })
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}
