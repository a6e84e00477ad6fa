use super::hermite::{check_degree, hermite_into};
use crate::error::{check_len, Result};

/// Total-degree multi-indices `α ∈ ℕ^{d′}` with `|α|₁ ≤ p`.
///
/// Ordered by total degree, then lexicographically descending, so the set
/// for degree `p − 1` is a prefix of the set for degree `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 {
            return Err(crate::error::invalid("dim", "need at least one coordinate"));
        }
        check_degree(degree)?;
        let mut indices = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0; dim];
            compositions(total, 0, &mut current, &mut indices);
        }
        Ok(Self {
            dim,
            degree,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn position(&self, alpha: &[usize]) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }

    /// `Π_k h_{α_k}(g_k)` for every `α` in the set.
    pub fn chaos_feature(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::Error::NonFinite("chaos feature argument".into()));
        }
        let mut table = vec![0.0; self.dim * (self.degree + 1)];
        let mut out = vec![0.0; self.len()];
        self.chaos_feature_into(g, &mut table, &mut out);
        Ok(out)
    }

    /// Unchecked variant with caller-owned scratch of length
    /// `dim · (degree + 1)`.
    pub fn chaos_feature_into(&self, g: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let stride = self.degree + 1;
        for (k, &x) in g.iter().enumerate() {
            hermite_into(x, &mut scratch[k * stride..(k + 1) * stride]);
        }
        out[0] = 1.0;
        for (o, alpha) in out.iter_mut().zip(&self.indices).skip(1) {
            let mut v = 1.0;
            for (k, &a) in alpha.iter().enumerate() {
                if a > 0 {
                    v *= scratch[k * stride + a];
                }
            }
            *o = v;
        }
    }
}

fn compositions(remaining: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let dim = current.len();
    if k == dim - 1 {
        current[k] = remaining;
        out.push(current.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        current[k] = v;
        compositions(remaining - v, k + 1, current, out);
    }
    current[k] = 0;
}

/// `binom(n, k)` as an exact integer.
pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn enumeration_examples() {
        let s = MultiIndexSet::new(1, 3).unwrap();
        assert_eq!(s.indices(), &[vec![0], vec![1], vec![2], vec![3]]);
        let s = MultiIndexSet::new(2, 2).unwrap();
        let expected = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(s.indices(), expected.as_slice());
        assert_eq!(MultiIndexSet::new(5, 2).unwrap().len(), 21);
    }

    #[test]
    fn sizes_and_prefix() {
        for dim in 1..5 {
            for p in 1..5 {
                let big = MultiIndexSet::new(dim, p).unwrap();
                let small = MultiIndexSet::new(dim, p - 1).unwrap();
                assert_eq!(big.len(), binomial(dim + p, p));
                assert_eq!(&big.indices()[..small.len()], small.indices());
            }
        }
    }

    #[test]
    fn feature_constant_and_zero_point() {
        let s = MultiIndexSet::new(2, 1).unwrap();
        assert_eq!(s.chaos_feature(&[0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(s.chaos_feature(&[3.1, -0.4]).unwrap()[0], 1.0);
        assert!(s.chaos_feature(&[1.0]).is_err());
    }

    #[test]
    fn monte_carlo_orthonormality() {
        let s = MultiIndexSet::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 1_000_000;
        let mut gram = vec![0.0; 36];
        let mut scratch = vec![0.0; 6];
        let mut f = vec![0.0; 6];
        for _ in 0..n {
            let g = [rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)];
            s.chaos_feature_into(&g, &mut scratch, &mut f);
            for i in 0..6 {
                for j in 0..6 {
                    gram[i * 6 + j] += f[i] * f[j];
                }
            }
        }
        for i in 0..6 {
            for j in 0..6 {
                let v = gram[i * 6 + j] / n as f64;
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 5e-3, "({i}, {j}) {v}");
            }
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(7, 2), 21);
        assert_eq!(binomial(4, 0), 1);
        assert_eq!(binomial(10, 10), 1);
    }
}
