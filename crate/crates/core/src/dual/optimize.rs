use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::coefficients::{constant_tails, prefix_values, ChaosCoefficients};
use super::objective::{ChaosSamples, DualObjective, Mollifier};
use crate::bases::MultiIndexSet;
use crate::error::{check_len, invalid, Result};
use crate::manifold::{feasible_ranks, riemannian_cg, CgOptions, CgStop, CgTraceRow, ManifoldPoint, Objective};
use crate::market::{path_rng, BlackScholesModel, Payoff, Stepper};
use crate::primal::Estimate;
use crate::tt::{Core, TensorTrain};

const RESIM_BLOCK: usize = 4096;

#[derive(Clone, Debug)]
pub struct DualOptions {
    pub degree: usize,
    pub rank: usize,
    pub eta: f64,
    /// Every `holdout_every`-th sample scores iterates.
    pub holdout_every: usize,
    /// Relative size of the perturbation that lifts a padded optimum to
    /// full rank.
    pub noise: f64,
    pub noise_seed: u64,
    pub cg: CgOptions,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            degree: 2,
            rank: 4,
            eta: 50.0,
            holdout_every: 10,
            noise: 1e-6,
            noise_seed: 7,
            cg: CgOptions::default(),
        }
    }
}

/// Optimizer record of one degree of the continuation.
#[derive(Clone, Debug)]
pub struct DualStage {
    pub degree: usize,
    pub ranks: Vec<usize>,
    pub trace: Vec<CgTraceRow>,
    pub stop: CgStop,
    pub best_iteration: usize,
}

#[derive(Clone, Debug)]
pub struct DualResult {
    /// Optimized coefficients with the constant term removed.
    pub coefficients: ChaosCoefficients,
    pub stages: Vec<DualStage>,
    /// Smoothed objective on the training samples at the returned point.
    pub training_objective: f64,
    /// Hard-max objective on the held-out samples, when there are any.
    pub validation_objective: Option<f64>,
    pub training_seed: u64,
    /// High-biased price on fresh samples, once re-simulated.
    pub upper: Option<Estimate>,
}

/// Zero-pads every core of `x` to mode size `len`, then lifts it to
/// `ranks` with a small random TT.
fn continue_to(x: &TensorTrain, len: usize, ranks: &[usize], noise: f64, rng: &mut ChaCha8Rng) -> Result<TensorTrain> {
    let padded: Vec<Core> = x
        .cores()
        .iter()
        .map(|c| {
            let (a, p, b) = c.shape();
            let mut out = Core::zeros(a, len, b);
            for ia in 0..a {
                for i in 0..p {
                    for ib in 0..b {
                        out.set(ia, i, ib, c.get(ia, i, ib));
                    }
                }
            }
            out
        })
        .collect();
    let padded = TensorTrain::new(padded)?;
    let dims = padded.mode_dims();
    let perturbation = TensorTrain::random(&dims, ranks, rng)?;
    let scale = noise * padded.norm().max(1.0) / perturbation.norm();
    padded.add(&perturbation.scale(scale))?.round_to_ranks(ranks)
}

/// Degree continuation `p = 1..=degree` with Riemannian CG at fixed rank.
pub fn optimize_dual(samples: &ChaosSamples, training_seed: u64, opts: &DualOptions) -> Result<DualResult> {
    if samples.paths() < 10 {
        return Err(invalid("samples", "need at least 10 samples"));
    }
    if opts.degree > samples.index_set().degree() {
        return Err(invalid("degree", "samples carry features of a lower degree"));
    }
    if opts.rank == 0 {
        return Err(invalid("rank", "must be at least 1"));
    }
    let objective = DualObjective::new(samples, opts.eta, opts.holdout_every)?;
    let steps = samples.steps();
    let dim = samples.index_set().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
    let mut x = TensorTrain::zeros(&vec![1; steps])?;
    let mut stages = Vec::new();
    for degree in 1..=opts.degree {
        let len = MultiIndexSet::new(dim, degree)?.len();
        let mut wanted = vec![opts.rank; steps + 1];
        wanted[0] = 1;
        wanted[steps] = 1;
        let ranks = feasible_ranks(&vec![len; steps], &wanted);
        let start = ManifoldPoint::new(&continue_to(&x, len, &ranks, opts.noise, &mut rng)?)?;
        let result = riemannian_cg(&objective, &start, &opts.cg)?;
        x = result.point.tt();
        stages.push(DualStage {
            degree,
            ranks: result.point.ranks(),
            trace: result.trace,
            stop: result.stop,
            best_iteration: result.best_iteration,
        });
    }
    let set = MultiIndexSet::new(dim, opts.degree)?;
    let coefficients = ChaosCoefficients::new(x, set, opts.rank)?.project_zero_mean()?;
    let (training_objective, validation_objective) = if opts.degree == 0 {
        let p = ManifoldPoint::new(coefficients.tt())?;
        (objective.value(&p)?, objective.validation(&p)?)
    } else {
        let last = stages.last().expect("at least one stage");
        let row = last
            .trace
            .iter()
            .find(|r| r.iteration == last.best_iteration)
            .expect("best iterate is traced");
        (row.objective, row.validation)
    };
    Ok(DualResult {
        coefficients,
        stages,
        training_objective,
        validation_objective,
        training_seed,
        upper: None,
    })
}

/// High-biased price `mean_i max_n (Z_n − M_n)` on fresh samples streamed
/// from `seed`.
pub fn resimulate_upper(
    model: &BlackScholesModel,
    payoff: &Payoff,
    dates: &[f64],
    coefficients: &ChaosCoefficients,
    paths: usize,
    seed: u64,
    training_seed: u64,
) -> Result<Estimate> {
    if seed == training_seed {
        return Err(invalid("seed", "re-simulation must not reuse the training seed"));
    }
    if paths == 0 {
        return Err(invalid("paths", "need at least one sample"));
    }
    let steps = dates.len().saturating_sub(1);
    check_len(steps, coefficients.steps())?;
    check_len(model.dim(), payoff.dim())?;
    check_len(model.dim(), coefficients.index_set().dim())?;
    let stepper = Stepper::new(model, dates)?;
    let d = model.dim();
    let set = coefficients.index_set();
    let len = set.len();
    let cores = coefficients.tt().cores();
    let tails = constant_tails(cores);
    let discounts: Vec<f64> = dates.iter().map(|t| (-model.rate * t).exp()).collect();
    let z0 = payoff.eval(&model.s0);
    let starts: Vec<usize> = (0..paths).step_by(RESIM_BLOCK).collect();
    let sums: Vec<(f64, f64)> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + RESIM_BLOCK).min(paths);
            let (mut g, mut corr) = (vec![0.0; d], vec![0.0; d]);
            let mut scratch = vec![0.0; d * (set.degree() + 1)];
            let mut feats = vec![0.0; steps * len];
            let mut z = vec![0.0; steps + 1];
            let mut values = vec![0.0; steps + 1];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for i in start..end {
                let mut rng = path_rng(seed, i);
                let mut state = model.s0.clone();
                z[0] = z0;
                for n in 1..=steps {
                    stepper.advance(&mut rng, n - 1, &mut state, &mut g, &mut corr);
                    z[n] = discounts[n] * payoff.eval(&state);
                    set.chaos_feature_into(&g, &mut scratch, &mut feats[(n - 1) * len..n * len]);
                }
                prefix_values(cores, &tails, |k| &feats[k * len..(k + 1) * len], &mut values);
                let mean = values[0];
                let v = z
                    .iter()
                    .zip(&values)
                    .map(|(zn, xn)| zn - (xn - mean))
                    .fold(f64::NEG_INFINITY, f64::max);
                sum += v;
                sum_sq += v * v;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(Estimate::from_sums(sum, sum_sq, paths))
}

/// Hard-max dual value of `coefficients` on given samples.
pub fn upper_on(coefficients: &ChaosCoefficients, samples: &ChaosSamples) -> Result<f64> {
    super::objective::dual_objective(coefficients, samples, Mollifier::Hard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{equidistant_dates, simulate};

    fn put_setup(paths: usize, seed: u64) -> (BlackScholesModel, Payoff, Vec<f64>, ChaosSamples) {
        let model = BlackScholesModel::symmetric(1, 100.0, 0.05, 0.0, 0.2, 0.0, 1.0).unwrap();
        let payoff = Payoff::basket_put(100.0, 1).unwrap();
        let dates = equidistant_dates(1.0, 3).unwrap();
        let e = simulate(&model, &payoff, &dates, paths, seed, true).unwrap();
        let samples = ChaosSamples::from_ensemble(&e, 2).unwrap();
        (model, payoff, dates, samples)
    }

    #[test]
    fn degree_zero_is_the_zero_martingale() {
        let (_, _, _, samples) = put_setup(200, 1);
        let opts = DualOptions {
            degree: 0,
            ..DualOptions::default()
        };
        let r = optimize_dual(&samples, 1, &opts).unwrap();
        assert!(r.stages.is_empty());
        let hard = upper_on(&r.coefficients, &samples).unwrap();
        let want: f64 = (0..200)
            .map(|i| samples.payoffs(i).iter().copied().fold(f64::MIN, f64::max))
            .sum::<f64>()
            / 200.0;
        assert!((hard - want).abs() < 1e-12);
    }

    #[test]
    fn zero_padding_preserves_values() {
        let (_, _, _, samples) = put_setup(50, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x1 = TensorTrain::random(&[2, 2, 2], &[1, 2, 2, 1], &mut rng).unwrap();
        let padded = continue_to(&x1, 3, &[1, 2, 2, 1], 0.0, &mut rng).unwrap();
        let c1 = ChaosCoefficients::new(x1, MultiIndexSet::new(1, 1).unwrap(), 2).unwrap();
        let c2 = ChaosCoefficients::new(padded, MultiIndexSet::new(1, 2).unwrap(), 2).unwrap();
        for i in 0..50 {
            let f1: Vec<&[f64]> = (1..=3).map(|n| samples.features(i, n, 2)).collect();
            let f2: Vec<&[f64]> = (1..=3).map(|n| samples.features(i, n, 3)).collect();
            let a = c1.evaluate_all_dates(&f1).unwrap();
            let b = c2.evaluate_all_dates(&f2).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn optimization_lowers_the_bound() {
        let (model, payoff, dates, samples) = put_setup(2000, 4);
        let opts = DualOptions {
            degree: 2,
            rank: 2,
            cg: CgOptions {
                max_iterations: 40,
                ..CgOptions::default()
            },
            ..DualOptions::default()
        };
        let r = optimize_dual(&samples, 4, &opts).unwrap();
        let zero = ChaosCoefficients::zeros(3, MultiIndexSet::new(1, 2).unwrap(), 2).unwrap();
        let before = upper_on(&zero, &samples).unwrap();
        let after = upper_on(&r.coefficients, &samples).unwrap();
        assert!(after < before, "{after} vs {before}");
        assert!(r.coefficients.mean().abs() < 1e-12);
        for stage in &r.stages {
            for w in stage.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-12);
            }
        }
        let fresh = resimulate_upper(&model, &payoff, &dates, &r.coefficients, 20_000, 99, 4).unwrap();
        // American put, one year, three dates: European 5.57, Bermudan ≈ 5.9
        assert!(fresh.mean > 5.5 && fresh.mean < 7.0, "{fresh:?}");
        assert!(resimulate_upper(&model, &payoff, &dates, &r.coefficients, 10, 4, 4).is_err());
    }
}
