use nalgebra::DMatrix;

use super::quadrature::gauss_legendre;
use crate::error::{invalid, Error, Result};

/// `p` polynomials of degree `< p` on `[a, b]`, orthonormal in
/// `H²(a, b)` with inner product `∫ fg + f′g′ + f″g″`.
///
/// Each function is stored as coefficients on Legendre polynomials of the
/// affinely mapped variable `t = (2x − a − b) / (b − a)`.
#[derive(Clone, Debug)]
pub struct IntervalBasis {
    a: f64,
    b: f64,
    /// Row `j` holds the Legendre coefficients of `B_j`; lower triangular.
    coefficients: DMatrix<f64>,
}

impl IntervalBasis {
    pub fn new(a: f64, b: f64, p: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(invalid("interval", format!("need finite a < b, got [{a}, {b}]")));
        }
        if p == 0 {
            return Err(invalid("p", "at least one basis function is required"));
        }
        let gram = h2_gram_of_legendre(a, b, p)?;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Degenerate(format!("H² Gram on [{a}, {b}] with p = {p}")))?;
        let l = chol.l();
        let coefficients = l
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
        Ok(Self { a, b, coefficients })
    }

    pub fn len(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Legendre coefficients of `B_j` in the mapped variable.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::NonFinite("basis argument".into()));
        }
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation for hot loops; `out.len()` must equal `len()`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let p = self.len();
        debug_assert_eq!(out.len(), p);
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let mut legendre = [0.0; 32];
        let seed: &mut [f64] = if p <= 32 {
            &mut legendre[..p]
        } else {
            return self.eval_into_large(t, out);
        };
        legendre_values(t, seed);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..=j).map(|k| self.coefficients[(j, k)] * seed[k]).sum();
        }
    }

    fn eval_into_large(&self, t: f64, out: &mut [f64]) {
        let mut seed = vec![0.0; self.len()];
        legendre_values(t, &mut seed);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..=j).map(|k| self.coefficients[(j, k)] * seed[k]).sum();
        }
    }

    /// Values, first and second derivatives in `x`.
    pub fn eval_with_derivatives(&self, x: f64) -> [Vec<f64>; 3] {
        let p = self.len();
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let scale = 2.0 / (self.b - self.a);
        let [v, d1, d2] = legendre_with_derivatives(t, p);
        let combine = |seed: &[f64], s: f64| -> Vec<f64> {
            (0..p)
                .map(|j| s * (0..=j).map(|k| self.coefficients[(j, k)] * seed[k]).sum::<f64>())
                .collect()
        };
        [combine(&v, 1.0), combine(&d1, scale), combine(&d2, scale * scale)]
    }
}

fn legendre_values(t: f64, out: &mut [f64]) {
    let p = out.len();
    out[0] = 1.0;
    if p > 1 {
        out[1] = t;
    }
    for k in 1..p.saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

fn legendre_with_derivatives(t: f64, p: usize) -> [Vec<f64>; 3] {
    let mut v = vec![0.0; p];
    let mut d1 = vec![0.0; p];
    let mut d2 = vec![0.0; p];
    legendre_values(t, &mut v);
    if p > 1 {
        d1[1] = 1.0;
    }
    for k in 1..p.saturating_sub(1) {
        let c = (2 * k + 1) as f64;
        d1[k + 1] = d1[k - 1] + c * v[k];
        d2[k + 1] = d2[k - 1] + c * d1[k];
    }
    [v, d1, d2]
}

fn h2_gram_of_legendre(a: f64, b: f64, p: usize) -> Result<DMatrix<f64>> {
    let q = gauss_legendre(p + 1)?;
    let jac = (b - a) / 2.0;
    let s1 = 1.0 / jac;
    let s2 = s1 * s1;
    let mut gram = DMatrix::zeros(p, p);
    for (&t, &w) in q.nodes.iter().zip(&q.weights) {
        let [v, d1, d2] = legendre_with_derivatives(t, p);
        for i in 0..p {
            for j in 0..=i {
                let g = v[i] * v[j] + s1 * s1 * d1[i] * d1[j] + s2 * s2 * d2[i] * d2[j];
                gram[(i, j)] += w * jac * g;
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    Ok(gram)
}
