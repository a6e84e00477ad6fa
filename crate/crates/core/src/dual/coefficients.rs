use crate::bases::MultiIndexSet;
use crate::error::{check_len, invalid, Result};
use crate::tt::{Core, TensorTrain};

/// Chaos coefficient tensor: one mode per time step, each indexed by the
/// multi-index set of the increments at that step.
#[derive(Clone, Debug)]
pub struct ChaosCoefficients {
    tt: TensorTrain,
    index_set: MultiIndexSet,
    rank: usize,
}

impl ChaosCoefficients {
    pub fn new(tt: TensorTrain, index_set: MultiIndexSet, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(invalid("rank", "must be at least 1"));
        }
        for n in tt.mode_dims() {
            check_len(index_set.len(), n)?;
        }
        Ok(Self { tt, index_set, rank })
    }

    pub fn zeros(steps: usize, index_set: MultiIndexSet, rank: usize) -> Result<Self> {
        let tt = TensorTrain::zeros(&vec![index_set.len(); steps])?;
        Self::new(tt, index_set, rank)
    }

    pub fn tt(&self) -> &TensorTrain {
        &self.tt
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn degree(&self) -> usize {
        self.index_set.degree()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn steps(&self) -> usize {
        self.tt.order()
    }

    /// Coefficient of the constant chaos `H_0 ⊗ ⋯ ⊗ H_0`.
    pub fn mean(&self) -> f64 {
        let tails = constant_tails(self.tt.cores());
        tails[0][0]
    }

    /// `E[X | F_n]`: cores `1..n` contracted with `feats`, the rest with the
    /// constant slot.
    pub fn conditional_evaluate<V: AsRef<[f64]>>(&self, feats: &[V], n: usize) -> Result<f64> {
        let steps = self.steps();
        if n > steps {
            return Err(invalid("n", format!("date {n} beyond {steps}")));
        }
        check_len(steps, feats.len())?;
        let cores = self.tt.cores();
        let mut v = vec![1.0];
        for (core, f) in cores.iter().zip(feats).take(n) {
            check_len(core.mode_dim(), f.as_ref().len())?;
            v = core.push_left(&v, f.as_ref());
        }
        for core in &cores[n..] {
            v = core.push_left(&v, &unit(core.mode_dim()));
        }
        Ok(v[0])
    }

    /// `E[X | F_n]` for all `n = 0..=N` in one left-to-right pass.
    pub fn evaluate_all_dates<V: AsRef<[f64]>>(&self, feats: &[V]) -> Result<Vec<f64>> {
        check_len(self.steps(), feats.len())?;
        for f in feats {
            check_len(self.index_set.len(), f.as_ref().len())?;
        }
        let tails = constant_tails(self.tt.cores());
        let mut out = vec![0.0; self.steps() + 1];
        prefix_values(self.tt.cores(), &tails, |k| feats[k].as_ref(), &mut out);
        Ok(out)
    }

    /// Sets the constant coefficient to zero: `x − ⟨x, E_0⟩ E_0`, rounded
    /// with at most one extra rank so that the result stays exact.
    pub fn project_zero_mean(&self) -> Result<Self> {
        let dims = self.tt.mode_dims();
        let e0 = TensorTrain::unit(&dims, &vec![0; dims.len()])?;
        let c = self.mean();
        let diff = self.tt.sub(&e0.scale(c))?;
        let rounded = diff.round(1e-14, self.rank.max(self.tt.max_rank()) + 1)?;
        Self::new(rounded, self.index_set.clone(), self.rank)
    }
}

pub(crate) fn unit(n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    e
}

/// `tails[k] = C_k[e_0] ⋯ C_{N−1}[e_0]` as vectors of length `r_{k}`.
pub(crate) fn constant_tails(cores: &[Core]) -> Vec<Vec<f64>> {
    let n = cores.len();
    let mut tails = vec![vec![1.0]; n + 1];
    for k in (0..n).rev() {
        tails[k] = cores[k].push_right(&unit(cores[k].mode_dim()), &tails[k + 1]);
    }
    tails
}

/// `out[n] = λ_n · tails[n]` with `λ_n = C_0[f_1] ⋯ C_{n−1}[f_n]`.
pub(crate) fn prefix_values<'a>(
    cores: &[Core],
    tails: &[Vec<f64>],
    feats: impl Fn(usize) -> &'a [f64],
    out: &mut [f64],
) {
    let mut lambda = vec![1.0];
    out[0] = tails[0][0];
    for (k, core) in cores.iter().enumerate() {
        lambda = core.push_left(&lambda, feats(k));
        out[k + 1] = lambda.iter().zip(&tails[k + 1]).map(|(a, b)| a * b).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_coeffs(steps: usize, dim: usize, degree: usize, rank: usize, seed: u64) -> ChaosCoefficients {
        let set = MultiIndexSet::new(dim, degree).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ranks = vec![rank; steps + 1];
        ranks[0] = 1;
        ranks[steps] = 1;
        let tt = TensorTrain::random(&vec![set.len(); steps], &ranks, &mut rng).unwrap();
        ChaosCoefficients::new(tt, set, rank).unwrap()
    }

    fn random_feats(set: &MultiIndexSet, steps: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..steps)
            .map(|_| {
                let g: Vec<f64> = (0..set.dim()).map(|_| rng.sample(StandardNormal)).collect();
                set.chaos_feature(&g).unwrap()
            })
            .collect()
    }

    #[test]
    fn dropping_trailing_terms() {
        let x = random_coeffs(3, 2, 2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats = random_feats(x.index_set(), 3, &mut rng);
        let full = x.tt().to_full().unwrap();
        let shape = full.shape().to_vec();
        // dense oracle: Σ_α X_α Π_{j≤n} f_j[α_j] Π_{j>n} δ_{α_j 0}
        for n in 0..=3 {
            let mut want = 0.0;
            let mut idx = vec![0; 3];
            for flat in 0..full.len() {
                let mut r = flat;
                for k in (0..3).rev() {
                    idx[k] = r % shape[k];
                    r /= shape[k];
                }
                if idx[n..].iter().any(|&a| a != 0) {
                    continue;
                }
                let w: f64 = (0..n).map(|k| feats[k][idx[k]]).product();
                want += full.data()[flat] * w;
            }
            let got = x.conditional_evaluate(&feats, n).unwrap();
            assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "n={n}");
        }
        let all = x.evaluate_all_dates(&feats).unwrap();
        for (n, v) in all.iter().enumerate() {
            assert!((v - x.conditional_evaluate(&feats, n).unwrap()).abs() < 1e-12);
        }
        assert!((all[0] - x.mean()).abs() < 1e-14);
        assert!(x.conditional_evaluate(&feats, 4).is_err());
        assert!(x.conditional_evaluate(&feats[..2], 1).is_err());
    }

    #[test]
    fn tower_property() {
        let x = random_coeffs(3, 1, 2, 2, 5);
        let set = x.index_set().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = random_feats(&set, 3, &mut rng);
        for n in 0..3 {
            let target = x.conditional_evaluate(&head, n).unwrap();
            let samples = 100_000;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..samples {
                let mut feats = head.clone();
                let tail = random_feats(&set, 3 - n, &mut rng);
                feats[n..].clone_from_slice(&tail);
                let v = x.conditional_evaluate(&feats, 3).unwrap();
                sum += v;
                sum_sq += v * v;
            }
            let mean = sum / samples as f64;
            let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
            assert!((mean - target).abs() < 3.0 * se + 1e-12, "n={n}: {mean} vs {target} (se {se})");
        }
    }

    #[test]
    fn projector_examples() {
        let set = MultiIndexSet::new(1, 2).unwrap();
        let e0 = TensorTrain::unit(&[3, 3, 3], &[0, 0, 0]).unwrap();
        let x = ChaosCoefficients::new(e0, set.clone(), 2).unwrap();
        assert!(x.project_zero_mean().unwrap().tt().norm() < 1e-14);

        let x = random_coeffs(3, 1, 2, 2, 9);
        let dense = x.tt().to_full().unwrap();
        let projected = x.project_zero_mean().unwrap();
        let pd = projected.tt().to_full().unwrap();
        assert!(pd.data()[0].abs() < 1e-12);
        for (a, b) in dense.data().iter().zip(pd.data()).skip(1) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(projected.mean().abs() < 1e-12);

        let again = projected.project_zero_mean().unwrap();
        let ad = again.tt().to_full().unwrap();
        assert!(ad.distance(&pd) < 1e-12);
    }

    #[test]
    fn zero_coefficients() {
        let set = MultiIndexSet::new(2, 1).unwrap();
        let x = ChaosCoefficients::zeros(2, set.clone(), 4).unwrap();
        let feats = vec![vec![1.0, 0.3, -0.2]; 2];
        assert_eq!(x.evaluate_all_dates(&feats).unwrap(), vec![0.0; 3]);
        assert!(ChaosCoefficients::zeros(2, set.clone(), 0).is_err());
        let wrong = TensorTrain::zeros(&[3, 4]).unwrap();
        assert!(ChaosCoefficients::new(wrong, set, 1).is_err());
    }
}
