use crate::error::{invalid, Error, Result};

/// Probabilists' Hermite polynomials normalized so that
/// `E[h_i(G) h_j(G)] = δ_ij` for a standard normal `G`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HermiteBasis {
    degree: usize,
}

impl HermiteBasis {
    pub fn new(degree: usize) -> Self {
        Self { degree }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::NonFinite("Hermite argument".into()));
        }
        let mut out = vec![0.0; self.len()];
        hermite_into(x, &mut out);
        Ok(out)
    }
}

/// `out[k] = h_k(x)` for `k < out.len()`, by
/// `h_{k+1} = (x h_k − √k h_{k−1}) / √(k+1)`.
pub fn hermite_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

pub(crate) fn check_degree(p: usize) -> Result<()> {
    // k! overflows the normalization well past any practical degree
    if p > 150 {
        return Err(invalid("degree", format!("{p} exceeds the supported maximum of 150")));
    }
    Ok(())
}
