use std::sync::Arc;

use rayon::prelude::*;

use super::coefficients::{constant_tails, prefix_values};
use crate::bases::MultiIndexSet;
use crate::error::{invalid, Error, Result};
use crate::manifold::{ManifoldPoint, Objective, TangentAccumulator, TangentVector};
use crate::market::PathEnsemble;
use crate::tt::Core;

/// Largest number of cached feature entries (`paths · steps · |Λ|`).
pub const FEATURE_GUARD: usize = 200_000_000;

const BLOCK: usize = 2048;

/// Maximum of `v` smoothed with sharpness `η`, or the hard maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mollifier {
    Hard,
    Smooth(f64),
}

impl Mollifier {
    pub fn smooth(eta: f64) -> Result<Self> {
        if eta > 0.0 && eta.is_finite() {
            Ok(Self::Smooth(eta))
        } else {
            Err(invalid("eta", format!("must be positive and finite, got {eta}")))
        }
    }

    pub fn apply(&self, v: &[f64]) -> f64 {
        match *self {
            Self::Hard => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Self::Smooth(eta) => smooth_max(v, eta).0,
        }
    }
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::Smooth(50.0)
    }
}

/// `Σ v_n e^{η v_n} / Σ e^{η v_n}` and the Boltzmann weights.
pub fn smooth_max(v: &[f64], eta: f64) -> (f64, Vec<f64>) {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = v.iter().map(|x| (eta * (x - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let value = top + v.iter().zip(&w).map(|(x, wn)| wn * (x - top)).sum::<f64>();
    (value, w)
}

/// `∂ smooth_max / ∂v_k = w_k (1 + η (v_k − value))`.
pub fn smooth_max_gradient(v: &[f64], eta: f64) -> (f64, Vec<f64>) {
    let (value, w) = smooth_max(v, eta);
    let grad = v.iter().zip(&w).map(|(x, wk)| wk * (1.0 + eta * (x - value))).collect();
    (value, grad)
}

/// Discounted payoffs and cached chaos features of the increments.
#[derive(Clone, Debug)]
pub struct ChaosSamples {
    index_set: MultiIndexSet,
    steps: usize,
    paths: usize,
    features: Vec<f64>,
    payoffs: Vec<f64>,
}

impl ChaosSamples {
    /// Features up to `degree`; lower degrees use prefixes of them.
    pub fn from_ensemble(ensemble: &PathEnsemble, degree: usize) -> Result<Self> {
        if !ensemble.has_increments() {
            return Err(invalid("ensemble", "increments were not kept"));
        }
        let index_set = MultiIndexSet::new(ensemble.dim(), degree)?;
        let (paths, steps, len) = (ensemble.paths(), ensemble.steps(), index_set.len());
        let entries = paths as u128 * steps as u128 * len as u128;
        if entries > FEATURE_GUARD as u128 {
            return Err(Error::TooLarge {
                entries,
                limit: FEATURE_GUARD,
            });
        }
        let mut features = vec![0.0; paths * steps * len];
        let stride = steps * len;
        features.par_chunks_mut(stride.max(1)).enumerate().try_for_each(|(i, out)| {
            let mut scratch = vec![0.0; ensemble.dim() * (degree + 1)];
            for n in 1..=steps {
                let g = ensemble.increment(i, n).expect("increments checked");
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("increments".into()));
                }
                index_set.chaos_feature_into(g, &mut scratch, &mut out[(n - 1) * len..n * len]);
            }
            Ok(())
        })?;
        let payoffs = (0..paths)
            .flat_map(|i| ensemble.discounted_payoffs(i).iter().copied())
            .collect();
        Ok(Self {
            index_set,
            steps,
            paths,
            features,
            payoffs,
        })
    }

    /// Builds samples from explicit features (sample-major, `steps · |Λ|`
    /// per sample) and discounted payoffs (`steps + 1` per sample).
    pub fn from_parts(index_set: MultiIndexSet, steps: usize, features: Vec<f64>, payoffs: Vec<f64>) -> Result<Self> {
        let len = index_set.len();
        if steps == 0 {
            return Err(invalid("steps", "need at least one step"));
        }
        if !features.len().is_multiple_of(steps * len) {
            return Err(invalid("features", "length is not a multiple of steps · |Λ|"));
        }
        let paths = features.len() / (steps * len);
        crate::error::check_len(paths * (steps + 1), payoffs.len())?;
        if features.iter().chain(&payoffs).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("samples".into()));
        }
        Ok(Self {
            index_set,
            steps,
            paths,
            features,
            payoffs,
        })
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Features of step `n` (1-based), truncated to the first `len` entries.
    #[inline]
    pub fn features(&self, path: usize, n: usize, len: usize) -> &[f64] {
        let full = self.index_set.len();
        &self.features[(path * self.steps + n - 1) * full..][..len]
    }

    /// `Z_0..Z_N` of one sample.
    #[inline]
    pub fn payoffs(&self, path: usize) -> &[f64] {
        &self.payoffs[path * (self.steps + 1)..][..self.steps + 1]
    }
}

/// Per-sample values `Z_n − M_n` for the coefficients in `cores`.
struct Evaluator<'a> {
    samples: &'a ChaosSamples,
    cores: &'a [Core],
    tails: Vec<Vec<f64>>,
    len: usize,
}

impl<'a> Evaluator<'a> {
    fn new(samples: &'a ChaosSamples, cores: &'a [Core]) -> Result<Self> {
        crate::error::check_len(samples.steps(), cores.len())?;
        let len = cores[0].mode_dim();
        if cores.iter().any(|c| c.mode_dim() != len) || len > samples.index_set().len() {
            return Err(invalid("coefficients", "mode sizes do not match the samples"));
        }
        Ok(Self {
            samples,
            cores,
            tails: constant_tails(cores),
            len,
        })
    }

    fn excess(&self, i: usize, out: &mut [f64]) {
        prefix_values(self.cores, &self.tails, |k| self.samples.features(i, k + 1, self.len), out);
        let mean = out[0];
        for (o, z) in out.iter_mut().zip(self.samples.payoffs(i)) {
            *o = z - (*o - mean);
        }
    }

    fn mean_over(&self, indices: &[usize], mollifier: Mollifier) -> f64 {
        let steps = self.samples.steps();
        let sums: Vec<f64> = indices
            .par_chunks(BLOCK)
            .map(|block| {
                let mut v = vec![0.0; steps + 1];
                block
                    .iter()
                    .map(|&i| {
                        self.excess(i, &mut v);
                        mollifier.apply(&v)
                    })
                    .sum()
            })
            .collect();
        sums.iter().sum::<f64>() / indices.len() as f64
    }
}

/// `(1/m) Σ_i amax_n (Z_n − (M_n))` with `M_n = E[X|F_n] − E[X]` over all samples.
pub fn dual_objective(x: &super::ChaosCoefficients, samples: &ChaosSamples, mollifier: Mollifier) -> Result<f64> {
    let all: Vec<usize> = (0..samples.paths()).collect();
    Evaluator::new(samples, x.tt().cores()).map(|e| e.mean_over(&all, mollifier))
}

/// Smoothed objective and its Riemannian gradient on `indices`.
pub fn dual_gradient(
    x: &Arc<ManifoldPoint>,
    samples: &ChaosSamples,
    indices: &[usize],
    eta: f64,
) -> Result<(f64, TangentVector)> {
    let eval = Evaluator::new(samples, x.left_cores())?;
    let steps = samples.steps();
    let m = indices.len() as f64;
    let partials: Vec<(f64, TangentAccumulator)> = indices
        .par_chunks(BLOCK)
        .map(|block| {
            let mut acc = TangentAccumulator::new(x);
            let mut v = vec![0.0; steps + 1];
            let mut coeffs = vec![0.0; steps + 1];
            let mut feats: Vec<&[f64]> = Vec::with_capacity(steps);
            let mut sum = 0.0;
            for &i in block {
                eval.excess(i, &mut v);
                let (value, grad) = smooth_max_gradient(&v, eta);
                sum += value;
                // d/dX of −M_n = −(F_n − E_0)
                let mut total = 0.0;
                for n in 1..=steps {
                    coeffs[n] = -grad[n] / m;
                    total += coeffs[n];
                }
                coeffs[0] = -total;
                feats.clear();
                feats.extend((1..=steps).map(|n| samples.features(i, n, eval.len)));
                acc.add_prefix_family(&coeffs, &feats)?;
            }
            Ok((sum, acc))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let (mut sum, mut acc) = iter.next().ok_or_else(|| invalid("indices", "no samples"))?;
    for (s, a) in iter {
        sum += s;
        acc.merge(&a)?;
    }
    Ok((sum / m, acc.finish()))
}

/// Smoothed training objective with a hard-max held-out score.
pub struct DualObjective<'a> {
    samples: &'a ChaosSamples,
    training: Vec<usize>,
    validation: Vec<usize>,
    eta: f64,
}

impl<'a> DualObjective<'a> {
    /// Every `holdout_every`-th sample is held out (none if 0).
    pub fn new(samples: &'a ChaosSamples, eta: f64, holdout_every: usize) -> Result<Self> {
        Mollifier::smooth(eta)?;
        let (validation, training): (Vec<usize>, Vec<usize>) = (0..samples.paths())
            .partition(|i| holdout_every > 0 && i % holdout_every == holdout_every - 1);
        if training.is_empty() {
            return Err(invalid("samples", "no training samples"));
        }
        Ok(Self {
            samples,
            training,
            validation,
            eta,
        })
    }

    pub fn training_len(&self) -> usize {
        self.training.len()
    }

    pub fn validation_len(&self) -> usize {
        self.validation.len()
    }

    pub fn hard_training_value(&self, x: &Arc<ManifoldPoint>) -> Result<f64> {
        Ok(Evaluator::new(self.samples, x.left_cores())?.mean_over(&self.training, Mollifier::Hard))
    }
}

impl Objective for DualObjective<'_> {
    fn value(&self, x: &Arc<ManifoldPoint>) -> Result<f64> {
        let eval = Evaluator::new(self.samples, x.left_cores())?;
        Ok(eval.mean_over(&self.training, Mollifier::Smooth(self.eta)))
    }

    fn value_and_gradient(&self, x: &Arc<ManifoldPoint>) -> Result<(f64, TangentVector)> {
        dual_gradient(x, self.samples, &self.training, self.eta)
    }

    fn validation(&self, x: &Arc<ManifoldPoint>) -> Result<Option<f64>> {
        if self.validation.is_empty() {
            return Ok(None);
        }
        let eval = Evaluator::new(self.samples, x.left_cores())?;
        Ok(Some(eval.mean_over(&self.validation, Mollifier::Hard)))
    }
}
