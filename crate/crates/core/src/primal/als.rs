//! Rank-adaptive alternating least squares for the regression
//! `Y ≈ Σ_α V_α Π_k B_{α_k}(x_k) + c_φ φ(x)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::value::ValueFunctional;
use crate::bases::IntervalBasis;
use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, solve_scaled_ridge};
use crate::market::Payoff;
use crate::tt::{left_orthogonalize_step, right_orthogonalize_step, Core, TensorTrain};

/// Samples per block in normal-equation assembly; partial sums are added in
/// block order so results do not depend on the thread count.
const BLOCK: usize = 2048;

/// Sample-major basis features, payoff values and targets.
#[derive(Clone, Debug)]
pub(crate) struct Design {
    len: usize,
    dim: usize,
    p: usize,
    feats: Vec<f64>,
    payoff: Vec<f64>,
    targets: Vec<f64>,
}

impl Design {
    fn build(
        states: &[f64],
        dim: usize,
        targets: &[f64],
        rows: &[usize],
        basis: &IntervalBasis,
        payoff: &Payoff,
    ) -> Self {
        let p = basis.len();
        let mut feats = vec![0.0; rows.len() * dim * p];
        feats
            .par_chunks_mut(dim * p)
            .zip(rows.par_iter())
            .for_each(|(f, &row)| {
                let x = &states[row * dim..(row + 1) * dim];
                for (k, &xk) in x.iter().enumerate() {
                    basis.eval_into(xk, &mut f[k * p..(k + 1) * p]);
                }
            });
        Self {
            len: rows.len(),
            dim,
            p,
            feats,
            payoff: rows.iter().map(|&r| payoff.eval(&states[r * dim..(r + 1) * dim])).collect(),
            targets: rows.iter().map(|&r| targets[r]).collect(),
        }
    }

    #[inline]
    fn feat(&self, s: usize, k: usize) -> &[f64] {
        &self.feats[(s * self.dim + k) * self.p..][..self.p]
    }

    fn predict(&self, cores: &[Core], c_phi: f64, s: usize) -> f64 {
        let mut v = vec![1.0];
        for (k, core) in cores.iter().enumerate() {
            v = core.push_left(&v, self.feat(s, k));
        }
        v[0] + c_phi * self.payoff[s]
    }

    fn rmse(&self, cores: &[Core], c_phi: f64) -> f64 {
        if self.len == 0 {
            return f64::NAN;
        }
        let sse: f64 = (0..self.len)
            .into_par_iter()
            .map(|s| (self.targets[s] - self.predict(cores, c_phi, s)).powi(2))
            .with_min_len(BLOCK)
            .sum::<f64>();
        (sse / self.len as f64).sqrt()
    }
}

/// Training and validation data for one regression.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    pub(crate) train: Design,
    pub(crate) validation: Design,
}

impl RegressionProblem {
    /// Every sixth sample goes to validation, so validation is a fifth of
    /// the size of the training set.
    pub fn new(
        states: &[f64],
        dim: usize,
        targets: &[f64],
        basis: &IntervalBasis,
        payoff: &Payoff,
    ) -> Result<Self> {
        let n = targets.len();
        let mask: Vec<bool> = (0..n).map(|i| i % 6 == 5).collect();
        Self::with_split(states, dim, targets, &mask, basis, payoff)
    }

    pub fn with_split(
        states: &[f64],
        dim: usize,
        targets: &[f64],
        validation_mask: &[bool],
        basis: &IntervalBasis,
        payoff: &Payoff,
    ) -> Result<Self> {
        let n = targets.len();
        check_len(n * dim, states.len())?;
        check_len(n, validation_mask.len())?;
        check_len(dim, payoff.dim())?;
        if targets.iter().any(|v| !v.is_finite()) || states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression data".into()));
        }
        let train_rows: Vec<usize> = (0..n).filter(|&i| !validation_mask[i]).collect();
        let val_rows: Vec<usize> = (0..n).filter(|&i| validation_mask[i]).collect();
        if train_rows.is_empty() {
            return Err(invalid("samples", "no training samples"));
        }
        Ok(Self {
            train: Design::build(states, dim, targets, &train_rows, basis, payoff),
            validation: Design::build(states, dim, targets, &val_rows, basis, payoff),
        })
    }

    pub fn training_len(&self) -> usize {
        self.train.len
    }

    pub fn validation_len(&self) -> usize {
        self.validation.len
    }
}

#[derive(Clone, Debug)]
pub struct AlsOptions {
    pub max_rank: usize,
    pub max_sweeps: usize,
    /// Sweeps stop once the monitored RMSE improves by less than this
    /// relative amount.
    pub sweep_tolerance: f64,
    /// A rank increase is kept only if validation improves by this much.
    pub rank_tolerance: f64,
    pub ridge: f64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_rank: 6,
            max_sweeps: 40,
            sweep_tolerance: 1e-4,
            rank_tolerance: 1e-4,
            ridge: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroStep {
    /// Counts accepted and attempted rank increases.
    pub rank_level: usize,
    pub core: usize,
    pub training_rmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub micro_steps: Vec<MicroStep>,
    pub ranks: Vec<usize>,
    pub sweeps: usize,
    pub training_rmse: f64,
    pub validation_rmse: f64,
    pub rank_increases: usize,
}

struct Fitter<'a> {
    data: &'a Design,
    cores: Vec<Core>,
    c_phi: f64,
    /// `left[k]`: interface into core `k`, `len × r_{k}` row-major.
    left: Vec<Vec<f64>>,
    /// `right[k]`: interface of cores `k..d`, `len × r_{k}`.
    right: Vec<Vec<f64>>,
    ridge: f64,
}

impl<'a> Fitter<'a> {
    fn new(data: &'a Design, cores: Vec<Core>, c_phi: f64, ridge: f64) -> Self {
        let d = cores.len();
        let ones = vec![1.0; data.len];
        Self {
            data,
            cores,
            c_phi,
            left: vec![ones.clone(); d + 1],
            right: vec![ones; d + 1],
            ridge,
        }
    }

    fn order(&self) -> usize {
        self.cores.len()
    }

    fn update_left(&mut self, k: usize) {
        let (data, core) = (self.data, &self.cores[k]);
        let (rl, rr) = (core.left_rank(), core.right_rank());
        let prev = &self.left[k];
        let mut next = vec![0.0; data.len * rr];
        next.par_chunks_mut(rr)
            .enumerate()
            .with_min_len(BLOCK)
            .for_each(|(s, out)| core.push_left_into(&prev[s * rl..(s + 1) * rl], data.feat(s, k), out));
        self.left[k + 1] = next;
    }

    fn update_right(&mut self, k: usize) {
        let (data, core) = (self.data, &self.cores[k]);
        let (rl, rr) = (core.left_rank(), core.right_rank());
        let prev = &self.right[k + 1];
        let mut next = vec![0.0; data.len * rl];
        next.par_chunks_mut(rl)
            .enumerate()
            .with_min_len(BLOCK)
            .for_each(|(s, out)| {
                let v = core.push_right(data.feat(s, k), &prev[s * rr..(s + 1) * rr]);
                out.copy_from_slice(&v);
            });
        self.right[k] = next;
    }

    /// Right-orthogonalizes cores `1..d` and refreshes all interfaces.
    fn prepare(&mut self) {
        let d = self.order();
        for k in (1..d).rev() {
            right_orthogonalize_step(&mut self.cores, k);
        }
        for k in (1..d).rev() {
            self.update_right(k);
        }
    }

    /// Solves jointly for core `k` and `c_φ`; returns the training RMSE.
    fn solve(&mut self, k: usize) -> Result<f64> {
        let data = self.data;
        let (rl, p, rr) = self.cores[k].shape();
        let width = rl * p * rr;
        let cols = width + 1;
        let (left, right) = (&self.left[k], &self.right[k + 1]);
        let row = |s: usize, out: &mut [f64]| {
            let l = &left[s * rl..(s + 1) * rl];
            let r = &right[s * rr..(s + 1) * rr];
            let f = data.feat(s, k);
            let mut idx = 0;
            for &la in l {
                for &fi in f {
                    let c = la * fi;
                    for &rb in r {
                        out[idx] = c * rb;
                        idx += 1;
                    }
                }
            }
            out[width] = data.payoff[s];
        };

        let starts: Vec<usize> = (0..data.len).step_by(BLOCK).collect();
        let partials: Vec<(DMatrix<f64>, DVector<f64>)> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + BLOCK).min(data.len);
                // column s holds the design row of sample start + s
                let mut at = DMatrix::zeros(cols, end - start);
                for s in start..end {
                    row(s, at.column_mut(s - start).as_mut_slice());
                }
                let y = DVector::from_column_slice(&data.targets[start..end]);
                (&at * at.transpose(), &at * y)
            })
            .collect();
        let mut gram = DMatrix::zeros(cols, cols);
        let mut rhs = DVector::zeros(cols);
        for (g, h) in partials {
            gram += g;
            rhs += h;
        }
        let w = solve_scaled_ridge(&gram, rhs.as_slice(), self.ridge)?;
        self.cores[k].data_mut().copy_from_slice(&w[..width]);
        self.c_phi = w[width];

        let core = &self.cores[k];
        let c_phi = self.c_phi;
        let sse: f64 = (0..data.len)
            .into_par_iter()
            .with_min_len(BLOCK)
            .map(|s| {
                let l = &left[s * rl..(s + 1) * rl];
                let r = &right[s * rr..(s + 1) * rr];
                let t = core.push_left(l, data.feat(s, k));
                let v: f64 = t.iter().zip(r).map(|(a, b)| a * b).sum();
                (data.targets[s] - v - c_phi * data.payoff[s]).powi(2)
            })
            .sum();
        let rmse = (sse / data.len as f64).sqrt();
        if !rmse.is_finite() {
            return Err(Error::NonFinite("ALS micro-step".into()));
        }
        Ok(rmse)
    }

    /// One forward and one backward sweep; interfaces must be prepared.
    fn sweep(&mut self, level: usize, log: &mut Vec<MicroStep>) -> Result<()> {
        let d = self.order();
        if d == 1 {
            let training_rmse = self.solve(0)?;
            log.push(MicroStep {
                rank_level: level,
                core: 0,
                training_rmse,
            });
            return Ok(());
        }
        for k in 0..d - 1 {
            let training_rmse = self.solve(k)?;
            log.push(MicroStep {
                rank_level: level,
                core: k,
                training_rmse,
            });
            left_orthogonalize_step(&mut self.cores, k);
            self.update_left(k);
        }
        for k in (1..d).rev() {
            let training_rmse = self.solve(k)?;
            log.push(MicroStep {
                rank_level: level,
                core: k,
                training_rmse,
            });
            right_orthogonalize_step(&mut self.cores, k);
            self.update_right(k);
        }
        Ok(())
    }

    /// Two-site residual gradients with the orthogonality center at each
    /// bond in turn. Leaves cores `0..d−1` left-orthogonal. Returns, per
    /// bond, the gradient norm and the leading left singular vector.
    fn bond_gradients(&mut self) -> Result<Vec<(f64, Vec<f64>)>> {
        let d = self.order();
        let data = self.data;
        let residuals: Vec<f64> = (0..data.len)
            .into_par_iter()
            .with_min_len(BLOCK)
            .map(|s| data.targets[s] - data.predict(&self.cores, self.c_phi, s))
            .collect();
        self.prepare();
        let mut out = Vec::with_capacity(d - 1);
        for j in 0..d - 1 {
            let rl = self.cores[j].left_rank();
            let rr = self.cores[j + 1].right_rank();
            let p = data.p;
            let (left, right) = (&self.left[j], &self.right[j + 2]);
            let starts: Vec<usize> = (0..data.len).step_by(BLOCK).collect();
            let partials: Vec<DMatrix<f64>> = starts
                .par_iter()
                .map(|&start| {
                    let end = (start + BLOCK).min(data.len);
                    let mut g = DMatrix::zeros(rl * p, p * rr);
                    for s in start..end {
                        let l = &left[s * rl..(s + 1) * rl];
                        let r = &right[s * rr..(s + 1) * rr];
                        let (fj, fk) = (data.feat(s, j), data.feat(s, j + 1));
                        for a in 0..rl {
                            for i in 0..p {
                                let li = residuals[s] * l[a] * fj[i];
                                if li == 0.0 {
                                    continue;
                                }
                                for i2 in 0..p {
                                    for b in 0..rr {
                                        g[(a * p + i, i2 * rr + b)] += li * fk[i2] * r[b];
                                    }
                                }
                            }
                        }
                    }
                    g
                })
                .collect();
            let mut g = DMatrix::zeros(rl * p, p * rr);
            for part in partials {
                g += part;
            }
            let svd = linalg::svd(&g)?;
            let lead = svd.u.column(0).iter().cloned().collect();
            out.push((g.norm(), lead));
            left_orthogonalize_step(&mut self.cores, j);
            self.update_left(j);
        }
        Ok(out)
    }

    /// Adds one rank on bond `j` (between cores `j` and `j + 1`) without
    /// changing the represented function. Core `j` must be left-orthogonal.
    fn grow_bond(&mut self, j: usize, direction: &[f64]) -> bool {
        let (rl, p, rr) = self.cores[j].shape();
        let q = self.cores[j].left_unfolding();
        let u = DVector::from_column_slice(direction);
        let mut v = &u - &q * (q.transpose() * &u);
        let n = v.norm();
        if n < 1e-8 {
            return false;
        }
        v /= n;
        let mut grown = DMatrix::zeros(rl * p, rr + 1);
        grown.columns_mut(0, rr).copy_from(&q);
        grown.column_mut(rr).copy_from(&v);
        self.cores[j] = Core::from_left_unfolding(&grown, rl, p);

        let next = &self.cores[j + 1];
        let (nl, np, nr) = next.shape();
        let mut padded = Core::zeros(nl + 1, np, nr);
        padded.data_mut()[..nl * np * nr].copy_from_slice(next.data());
        self.cores[j + 1] = padded;
        true
    }
}

/// Initial rank-one train representing the constant one.
fn constant_start(basis: &IntervalBasis, dim: usize) -> Vec<Core> {
    let p = basis.len();
    let (a, b) = basis.interval();
    let b0 = basis.eval_with_derivatives(0.5 * (a + b))[0][0];
    (0..dim)
        .map(|_| {
            let mut core = Core::zeros(1, p, 1);
            core.data_mut()[0] = 1.0 / b0;
            core
        })
        .collect()
}

fn fit_at_fixed_ranks(
    fitter: &mut Fitter<'_>,
    validation: &Design,
    opts: &AlsOptions,
    level: usize,
    report: &mut FitReport,
) -> Result<f64> {
    let use_validation = validation.len > 0;
    let score = |f: &Fitter<'_>, last_training: f64| {
        if use_validation {
            validation.rmse(&f.cores, f.c_phi)
        } else {
            last_training
        }
    };
    fitter.prepare();
    let mut best = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        fitter.sweep(level, &mut report.micro_steps)?;
        report.sweeps += 1;
        let last = report.micro_steps.last().map_or(f64::NAN, |m| m.training_rmse);
        let current = score(fitter, last);
        if !current.is_finite() {
            return Err(Error::NonFinite("validation error".into()));
        }
        let improved = best.is_infinite() || current < best * (1.0 - opts.sweep_tolerance);
        best = best.min(current);
        if !improved || current == 0.0 {
            break;
        }
    }
    Ok(best)
}

/// Fits the value functional with validation-guarded rank growth.
pub fn fit_value_function(
    problem: &RegressionProblem,
    basis: &IntervalBasis,
    payoff: &Payoff,
    opts: &AlsOptions,
) -> Result<(ValueFunctional, FitReport)> {
    if opts.max_rank == 0 {
        return Err(invalid("max_rank", "must be positive"));
    }
    let train = &problem.train;
    let dim = train.dim;
    check_len(dim, payoff.dim())?;
    check_len(basis.len(), train.p)?;

    let mut report = FitReport::default();
    let mut fitter = Fitter::new(train, constant_start(basis, dim), 0.0, opts.ridge);
    let mut score = fit_at_fixed_ranks(&mut fitter, &problem.validation, opts, 0, &mut report)?;

    let mut level = 0;
    loop {
        if dim == 1 {
            break;
        }
        let ranks = ranks_of(&fitter.cores);
        let saved = (fitter.cores.clone(), fitter.c_phi);
        let grads = fitter.bond_gradients()?;
        let p = basis.len();
        let candidate = grads
            .iter()
            .enumerate()
            .filter(|(j, _)| {
                let r = ranks[j + 1];
                r < opts.max_rank && r < ranks[*j] * p && r < p * ranks[j + 2]
            })
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
        let Some((j, (norm, lead))) = candidate else {
            fitter.cores = saved.0;
            fitter.c_phi = saved.1;
            break;
        };
        if *norm == 0.0 || !fitter.grow_bond(j, lead) {
            fitter.cores = saved.0;
            fitter.c_phi = saved.1;
            break;
        }
        level += 1;
        let new_score = fit_at_fixed_ranks(&mut fitter, &problem.validation, opts, level, &mut report)?;
        if new_score <= score * (1.0 - opts.rank_tolerance) {
            score = new_score;
            report.rank_increases += 1;
        } else {
            fitter.cores = saved.0;
            fitter.c_phi = saved.1;
            break;
        }
    }

    report.ranks = ranks_of(&fitter.cores);
    report.training_rmse = train.rmse(&fitter.cores, fitter.c_phi);
    report.validation_rmse = problem.validation.rmse(&fitter.cores, fitter.c_phi);
    let tt = TensorTrain::new(fitter.cores)?;
    let vf = ValueFunctional::new(tt, fitter.c_phi, basis.clone(), payoff.clone())?;
    Ok((vf, report))
}

fn ranks_of(cores: &[Core]) -> Vec<usize> {
    let mut r = vec![1];
    r.extend(cores.iter().map(Core::right_rank));
    r
}
