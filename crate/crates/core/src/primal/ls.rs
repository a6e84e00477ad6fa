use rayon::prelude::*;

use super::als::{fit_value_function, AlsOptions, FitReport, RegressionProblem};
use super::value::ExerciseRule;
use crate::bases::IntervalBasis;
use crate::error::{check_len, invalid, Error, Result};
use crate::market::{path_rng, BlackScholesModel, PathEnsemble, Payoff, Stepper};

/// Paths per block when re-simulating; block sums are combined in order.
const RESIM_BLOCK: usize = 4096;

/// Global price range of the ensemble, used as the basis interval.
pub fn domain_bounds(e: &PathEnsemble) -> Result<(f64, f64)> {
    let (a, b) = e.price_range();
    if !(a < b) {
        return Err(Error::Degenerate(format!("all simulated prices equal {a}")));
    }
    Ok((a, b))
}

#[derive(Clone, Debug)]
pub struct LsOptions {
    /// Basis functions per asset.
    pub degree: usize,
    pub als: AlsOptions,
    /// Regress on states sorted by decreasing price.
    pub sorted: bool,
}

impl Default for LsOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            als: AlsOptions::default(),
            sorted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DateReport {
    pub date: usize,
    pub in_the_money: usize,
    pub fit: Option<FitReport>,
}

#[derive(Clone, Debug)]
pub struct LsResult {
    /// One rule per date `0..=N`; the first and last are `Never`.
    pub rules: Vec<ExerciseRule>,
    pub in_sample_price: f64,
    pub reports: Vec<DateReport>,
    pub sorted: bool,
    pub training_seed: u64,
}

impl LsResult {
    pub fn max_rank(&self) -> usize {
        self.reports
            .iter()
            .filter_map(|r| r.fit.as_ref())
            .flat_map(|f| f.ranks.iter().copied())
            .max()
            .unwrap_or(1)
    }
}

/// Backward induction with a fitted continuation value on in-the-money
/// paths at every date `N−1, …, 1`.
pub fn longstaff_schwartz(ensemble: &PathEnsemble, payoff: &Payoff, opts: &LsOptions) -> Result<LsResult> {
    check_len(ensemble.dim(), payoff.dim())?;
    if opts.degree == 0 {
        return Err(invalid("degree", "at least one basis function is required"));
    }
    let sorted_copy;
    let e = if opts.sorted && !ensemble.is_sorted() {
        sorted_copy = ensemble.clone().sort_paths();
        &sorted_copy
    } else {
        ensemble
    };
    let (m, steps, dim) = (e.paths(), e.steps(), e.dim());
    let mut cashflow: Vec<f64> = (0..m).map(|i| e.discounted_payoff(i, steps)).collect();
    let mut rules = vec![ExerciseRule::Never; steps + 1];
    let mut reports = Vec::new();
    let mut basis: Option<IntervalBasis> = None;

    for n in (1..steps).rev() {
        let itm: Vec<usize> = (0..m).filter(|&i| e.discounted_payoff(i, n) > 0.0).collect();
        if itm.is_empty() {
            reports.push(DateReport {
                date: n,
                in_the_money: 0,
                fit: None,
            });
            continue;
        }
        if basis.is_none() {
            let (a, b) = domain_bounds(e)?;
            basis = Some(IntervalBasis::new(a, b, opts.degree)?);
        }
        let basis = basis.as_ref().expect("set above");
        let mut states = Vec::with_capacity(itm.len() * dim);
        for &i in &itm {
            states.extend_from_slice(e.state(i, n));
        }
        let targets: Vec<f64> = itm.iter().map(|&i| cashflow[i]).collect();
        let problem = RegressionProblem::new(&states, dim, &targets, basis, payoff)?;
        let (vf, fit) = fit_value_function(&problem, basis, payoff, &opts.als)?;
        let continuation: Vec<f64> = itm.par_iter().map(|&i| vf.eval(e.state(i, n))).collect();
        for (&i, c) in itm.iter().zip(continuation) {
            let z = e.discounted_payoff(i, n);
            if z > c {
                cashflow[i] = z;
            }
        }
        rules[n] = ExerciseRule::Fitted(vf);
        reports.push(DateReport {
            date: n,
            in_the_money: itm.len(),
            fit: Some(fit),
        });
    }
    reports.reverse();
    let in_sample_price = cashflow.iter().sum::<f64>() / m as f64;
    Ok(LsResult {
        rules,
        in_sample_price,
        reports,
        sorted: e.is_sorted(),
        training_seed: e.seed(),
    })
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
}

impl Estimate {
    pub(crate) fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / nf).sqrt(),
            paths: n,
        }
    }

    /// `sqrt(se_a² + se_b²)`.
    pub fn combined_stderr(&self, other: &Self) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

fn stopped_value(rules: &[ExerciseRule], discounted: impl Fn(usize) -> f64, state: impl Fn(usize) -> Vec<f64>) -> f64 {
    let steps = rules.len() - 1;
    for (n, rule) in rules.iter().enumerate().take(steps).skip(1) {
        let z = discounted(n);
        if z > 0.0 && rule.exercise(&state(n), z) {
            return z;
        }
    }
    discounted(steps)
}

/// Applies the exercise rules to the paths of a given ensemble.
pub fn resimulate_lower_on(ensemble: &PathEnsemble, rules: &[ExerciseRule], sorted: bool) -> Result<Estimate> {
    check_len(ensemble.steps() + 1, rules.len())?;
    let dim = ensemble.dim();
    let values: Vec<f64> = (0..ensemble.paths())
        .into_par_iter()
        .map(|i| {
            stopped_value(
                rules,
                |n| ensemble.discounted_payoff(i, n),
                |n| {
                    let mut s = ensemble.state(i, n).to_vec();
                    if sorted && !ensemble.is_sorted() {
                        s.sort_by(|a, b| b.total_cmp(a));
                    }
                    debug_assert_eq!(s.len(), dim);
                    s
                },
            )
        })
        .collect();
    let (sum, sum_sq) = block_sums(&values);
    Ok(Estimate::from_sums(sum, sum_sq, values.len()))
}

fn block_sums(values: &[f64]) -> (f64, f64) {
    values
        .chunks(RESIM_BLOCK)
        .map(|c| (c.iter().sum::<f64>(), c.iter().map(|v| v * v).sum::<f64>()))
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1))
}

/// Low-biased price from fresh paths simulated with `seed`, streamed so
/// that no ensemble is stored.
pub fn resimulate_lower(
    model: &BlackScholesModel,
    payoff: &Payoff,
    dates: &[f64],
    result: &LsResult,
    paths: usize,
    seed: u64,
) -> Result<Estimate> {
    if seed == result.training_seed {
        return Err(invalid("seed", "re-simulation must not reuse the training seed"));
    }
    if paths == 0 {
        return Err(invalid("paths", "need at least one sample"));
    }
    check_len(dates.len(), result.rules.len())?;
    check_len(model.dim(), payoff.dim())?;
    let stepper = Stepper::new(model, dates)?;
    let steps = dates.len() - 1;
    let d = model.dim();
    let discounts: Vec<f64> = dates.iter().map(|t| (-model.rate * t).exp()).collect();
    let starts: Vec<usize> = (0..paths).step_by(RESIM_BLOCK).collect();
    let sums: Vec<(f64, f64)> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + RESIM_BLOCK).min(paths);
            let (mut g, mut corr) = (vec![0.0; d], vec![0.0; d]);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for i in start..end {
                let mut rng = path_rng(seed, i);
                let mut state = model.s0.clone();
                let mut value = 0.0;
                for n in 1..=steps {
                    stepper.advance(&mut rng, n - 1, &mut state, &mut g, &mut corr);
                    let z = discounts[n] * payoff.eval(&state);
                    if n == steps {
                        value = z;
                        break;
                    }
                    if z > 0.0 {
                        let exercise = if result.sorted {
                            let mut s = state.clone();
                            s.sort_by(|a, b| b.total_cmp(a));
                            result.rules[n].exercise(&s, z)
                        } else {
                            result.rules[n].exercise(&state, z)
                        };
                        if exercise {
                            value = z;
                            break;
                        }
                    }
                }
                sum += value;
                sum_sq += value * value;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(Estimate::from_sums(sum, sum_sq, paths))
}
