//! Thin wrappers around nalgebra decompositions with the conventions the
//! tensor-train code relies on: singular values sorted descending and a
//! deterministic sign for every singular pair.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin SVD `m = u * diag(s) * vt`.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

pub(crate) fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input".into()));
    }
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(rows, 0),
            s: Vec::new(),
            vt: DMatrix::zeros(0, cols),
        });
    }
    let dec = m.clone().svd(true, true);
    let u0 = dec.u.expect("u requested");
    let vt0 = dec.v_t.expect("v_t requested");
    let s0 = dec.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s0[b].partial_cmp(&s0[a]).unwrap_or(Ordering::Equal));

    let mut u = DMatrix::zeros(rows, k);
    let mut vt = DMatrix::zeros(k, cols);
    let mut s = Vec::with_capacity(k);
    for (j, &src) in order.iter().enumerate() {
        // largest-magnitude entry of each left singular vector is made positive
        let mut pivot = 0;
        for i in 0..rows {
            if u0[(i, src)].abs() > u0[(pivot, src)].abs() {
                pivot = i;
            }
        }
        let sign = if u0[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..rows {
            u[(i, j)] = sign * u0[(i, src)];
        }
        for c in 0..cols {
            vt[(j, c)] = sign * vt0[(src, c)];
        }
        s.push(s0[src]);
    }
    Ok(Svd { u, s, vt })
}

/// Thin QR with `q` having orthonormal columns and `r` upper triangular.
pub(crate) fn qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let dec = m.clone().qr();
    (dec.q(), dec.r())
}

/// `m = l * q` with `q` having orthonormal rows.
pub(crate) fn lq(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (q, r) = qr(&m.transpose());
    (r.transpose(), q.transpose())
}

/// Row-major copy of a matrix.
pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Solves the symmetric positive semi-definite system `(g + ridge I) x = h`.
///
/// The ridge is multiplied by ten until the Cholesky factorization succeeds.
pub(crate) fn solve_ridge(g: &DMatrix<f64>, h: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = g.nrows();
    let trace_scale = (0..n).map(|i| g[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut lambda = ridge.max(0.0);
    for _ in 0..40 {
        let mut a = g.clone();
        for i in 0..n {
            a[(i, i)] += lambda;
        }
        if let Some(ch) = a.cholesky() {
            let rhs = nalgebra::DVector::from_column_slice(h);
            let x = ch.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x.as_slice().to_vec());
            }
        }
        lambda = if lambda == 0.0 {
            1e-14 * trace_scale
        } else {
            lambda * 10.0
        };
    }
    Err(Error::Degenerate(
        "normal equations could not be regularized".into(),
    ))
}

/// Ridge solve on the Jacobi-scaled system `D G D z = D h`, `x = D z`,
/// `D = diag(G)^{-1/2}`, with ridge `relative · trace / n` of the scaled
/// matrix (which equals `relative`). Columns with a zero diagonal get zero.
pub(crate) fn solve_scaled_ridge(g: &DMatrix<f64>, h: &[f64], relative: f64) -> Result<Vec<f64>> {
    let n = g.nrows();
    let scale: Vec<f64> = (0..n)
        .map(|i| if g[(i, i)] > 0.0 { 1.0 / g[(i, i)].sqrt() } else { 0.0 })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| {
        if i == j && scale[i] == 0.0 {
            1.0
        } else {
            scale[i] * g[(i, j)] * scale[j]
        }
    });
    let rhs: Vec<f64> = h.iter().zip(&scale).map(|(v, s)| v * s).collect();
    let trace: f64 = scaled.diagonal().sum();
    let z = solve_ridge(&scaled, &rhs, relative * trace / n as f64)?;
    Ok(z.iter().zip(&scale).map(|(v, s)| v * s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_is_sorted_and_sign_fixed() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, -3.0, 1.0]);
        let d = svd(&m).unwrap();
        assert!(d.s[0] >= d.s[1]);
        for j in 0..2 {
            let col = d.u.column(j);
            let big = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
        let rebuilt = &d.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.s.clone())) * &d.vt;
        assert!((rebuilt - m).norm() < 1e-12);
    }

    #[test]
    fn lq_reconstructs() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 2.0]);
        let (l, q) = lq(&m);
        assert!((&l * &q - &m).norm() < 1e-12);
        assert!((&q * q.transpose() - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn scaled_ridge_ignores_column_scale() {
        let g = DMatrix::from_row_slice(2, 2, &[1e12, 1e3, 1e3, 1e-4]);
        let x = solve_scaled_ridge(&g, &[1e6 + 1e3 * 2.0, 1e-3 + 1e-4 * 2.0], 1e-12).unwrap();
        assert!((x[0] - 1e-6).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn ridge_solve_handles_singular_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = solve_ridge(&g, &[2.0, 2.0], 0.0).unwrap();
        assert!((x[0] + x[1] - 2.0).abs() < 1e-6);
    }
}
