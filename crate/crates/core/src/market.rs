//! Correlated Black–Scholes simulation, payoffs and path bookkeeping.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_len, invalid, Error, Result};
use crate::tt::{read_f64, read_u64};

/// Multi-asset geometric Brownian motion with a common correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct BlackScholesModel {
    pub s0: Vec<f64>,
    pub rate: f64,
    pub dividends: Vec<f64>,
    pub vols: Vec<f64>,
    pub rho: f64,
    pub maturity: f64,
}

impl BlackScholesModel {
    pub fn new(
        s0: Vec<f64>,
        rate: f64,
        dividends: Vec<f64>,
        vols: Vec<f64>,
        rho: f64,
        maturity: f64,
    ) -> Result<Self> {
        let d = s0.len();
        if d == 0 {
            return Err(invalid("s0", "at least one asset is required"));
        }
        check_len(d, dividends.len())?;
        check_len(d, vols.len())?;
        if s0.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid("s0", "initial prices must be positive"));
        }
        if vols.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("sigma", "volatilities must be positive"));
        }
        if !rate.is_finite() || dividends.iter().any(|v| !v.is_finite()) {
            return Err(invalid("rate", "rates must be finite"));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(invalid("maturity", "must be positive"));
        }
        check_correlation(d, rho)?;
        Ok(Self {
            s0,
            rate,
            dividends,
            vols,
            rho,
            maturity,
        })
    }

    /// All assets share `s0`, `δ` and `σ`.
    pub fn symmetric(
        d: usize,
        s0: f64,
        rate: f64,
        dividend: f64,
        vol: f64,
        rho: f64,
        maturity: f64,
    ) -> Result<Self> {
        Self::new(vec![s0; d], rate, vec![dividend; d], vec![vol; d], rho, maturity)
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }
}

fn check_correlation(d: usize, rho: f64) -> Result<()> {
    let lower = if d > 1 { -1.0 / (d as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !rho.is_finite() || rho > 1.0 || (d > 1 && rho <= lower) {
        return Err(invalid(
            "rho",
            format!("{rho} is outside the admissible range ({lower}, 1] for d = {d}"),
        ));
    }
    Ok(())
}

/// The two nonzero patterns of the equicorrelation Cholesky factor: the
/// diagonal and the constant value below the diagonal in each column.
#[derive(Clone, Debug)]
struct EquicorrelationRoot {
    diagonal: Vec<f64>,
    below: Vec<f64>,
}

impl EquicorrelationRoot {
    fn new(d: usize, rho: f64) -> Self {
        let mut diagonal = Vec::with_capacity(d);
        let mut below = Vec::with_capacity(d);
        let mut sum_sq = 0.0f64;
        for _ in 0..d {
            let l = (1.0 - sum_sq).max(0.0).sqrt();
            let c = if l > 1e-14 { (rho - sum_sq) / l } else { 0.0 };
            diagonal.push(l);
            below.push(c);
            sum_sq += c * c;
        }
        Self { diagonal, below }
    }

    /// `out = L g` in O(d).
    fn apply(&self, g: &[f64], out: &mut [f64]) {
        let mut prefix = 0.0;
        for j in 0..g.len() {
            out[j] = self.diagonal[j] * g[j] + prefix;
            prefix += self.below[j] * g[j];
        }
    }
}

/// Lower-triangular `L` with `L Lᵀ = Γ`, `Γ = (1 − ρ) I + ρ 11ᵀ`.
///
/// For `ρ = 1` the matrix is singular and the factor has zero diagonal
/// entries past the first.
pub fn correlation_root(d: usize, rho: f64) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(invalid("d", "at least one asset is required"));
    }
    check_correlation(d, rho)?;
    let root = EquicorrelationRoot::new(d, rho);
    Ok(DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => root.diagonal[j],
        std::cmp::Ordering::Greater => root.below[j],
        std::cmp::Ordering::Less => 0.0,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayoffKind {
    BasketPut,
    MaxCall,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Payoff {
    pub kind: PayoffKind,
    pub strike: f64,
    pub weights: Vec<f64>,
}

impl Payoff {
    pub fn new(kind: PayoffKind, strike: f64, weights: Vec<f64>) -> Result<Self> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(invalid("strike", "must be positive"));
        }
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights", "need finite weights for at least one asset"));
        }
        Ok(Self {
            kind,
            strike,
            weights,
        })
    }

    /// `(K − Σ S_j / d)_+`.
    pub fn basket_put(strike: f64, d: usize) -> Result<Self> {
        Self::new(PayoffKind::BasketPut, strike, vec![1.0 / d.max(1) as f64; d])
    }

    /// `(max_j S_j − K)_+`.
    pub fn max_call(strike: f64, d: usize) -> Result<Self> {
        Self::new(PayoffKind::MaxCall, strike, vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn eval(&self, s: &[f64]) -> f64 {
        debug_assert_eq!(s.len(), self.weights.len());
        match self.kind {
            PayoffKind::BasketPut => {
                let basket: f64 = s.iter().zip(&self.weights).map(|(x, w)| x * w).sum();
                (self.strike - basket).max(0.0)
            }
            PayoffKind::MaxCall => {
                let top = s
                    .iter()
                    .zip(&self.weights)
                    .map(|(x, w)| x * w)
                    .fold(f64::NEG_INFINITY, f64::max);
                (top - self.strike).max(0.0)
            }
        }
    }
}

/// `t_n = n T / steps` for `n = 0..=steps`.
pub fn equidistant_dates(maturity: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(invalid("steps", "need at least one time step"));
    }
    Ok((0..=steps).map(|n| maturity * n as f64 / steps as f64).collect())
}

fn check_dates(dates: &[f64], maturity: f64) -> Result<()> {
    if dates.len() < 2 || dates[0] != 0.0 {
        return Err(invalid("dates", "need t_0 = 0 and at least one further date"));
    }
    if dates.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("dates", "must be strictly increasing"));
    }
    let last = dates[dates.len() - 1];
    if (last - maturity).abs() > 1e-12 * maturity.max(1.0) {
        return Err(invalid("dates", format!("last date {last} differs from maturity {maturity}")));
    }
    Ok(())
}

/// Simulated paths: `m` samples of `N + 1` states, their discounted payoffs
/// and optionally the standardized Gaussian increments that drove them.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    dates: Vec<f64>,
    dim: usize,
    paths: usize,
    states: Vec<f64>,
    increments: Option<Vec<f64>>,
    discounted: Vec<f64>,
    seed: u64,
    sorted: bool,
}

impl PathEnsemble {
    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn has_increments(&self) -> bool {
        self.increments.is_some()
    }

    /// `S_n` of sample `path`.
    #[inline]
    pub fn state(&self, path: usize, n: usize) -> &[f64] {
        let stride = (self.dates.len()) * self.dim;
        &self.states[path * stride + n * self.dim..][..self.dim]
    }

    /// `G_n` of sample `path`, `1 ≤ n ≤ N`.
    #[inline]
    pub fn increment(&self, path: usize, n: usize) -> Option<&[f64]> {
        debug_assert!(n >= 1);
        let stride = self.steps() * self.dim;
        self.increments
            .as_ref()
            .map(|g| &g[path * stride + (n - 1) * self.dim..][..self.dim])
    }

    /// `Z_n = e^{−r t_n} φ(S_n)`.
    #[inline]
    pub fn discounted_payoff(&self, path: usize, n: usize) -> f64 {
        self.discounted[path * self.dates.len() + n]
    }

    /// All `Z_0..Z_N` of one sample.
    pub fn discounted_payoffs(&self, path: usize) -> &[f64] {
        &self.discounted[path * self.dates.len()..][..self.dates.len()]
    }

    /// Global minimum and maximum over all stored asset prices.
    pub fn price_range(&self) -> (f64, f64) {
        self.states
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Sorts every state by decreasing price. Payoffs and increments stay.
    pub fn sort_paths(mut self) -> Self {
        let dim = self.dim;
        self.states
            .par_chunks_mut(dim)
            .for_each(|s| s.sort_by(|a, b| b.total_cmp(a)));
        self.sorted = true;
        self
    }

    /// Header `m, N, d` (u64), the `N + 1` dates, then `S` and `G`, all
    /// little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.increments.as_ref().ok_or_else(|| {
            Error::Degenerate("ensemble was simulated without storing increments".into())
        })?;
        for v in [self.paths, self.steps(), self.dim] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in self.dates.iter().chain(&self.states).chain(g) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump and recomputes discounted payoffs for `payoff` at `rate`.
    pub fn read_from<R: Read>(mut r: R, payoff: &Payoff, rate: f64) -> Result<Self> {
        let paths = read_u64(&mut r)? as usize;
        let steps = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let total = (paths as u128) * (steps as u128 + 1) * dim as u128;
        if paths == 0 || steps == 0 || dim == 0 || total > 1 << 34 {
            return Err(Error::Format(format!("implausible header m={paths} N={steps} d={dim}")));
        }
        check_len(dim, payoff.dim())?;
        let dates = (0..=steps).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let states = (0..paths * (steps + 1) * dim)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let increments = (0..paths * steps * dim)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut e = Self {
            dates,
            dim,
            paths,
            states,
            increments: Some(increments),
            discounted: Vec::new(),
            seed: 0,
            sorted: false,
        };
        e.discounted = discount_all(&e, payoff, rate);
        Ok(e)
    }
}

fn discount_all(e: &PathEnsemble, payoff: &Payoff, rate: f64) -> Vec<f64> {
    let len = e.dates.len();
    let discounts: Vec<f64> = e.dates.iter().map(|t| (-rate * t).exp()).collect();
    let mut out = vec![0.0; e.paths * len];
    out.par_chunks_mut(len).enumerate().for_each(|(m, z)| {
        for (n, zn) in z.iter_mut().enumerate() {
            *zn = discounts[n] * payoff.eval(e.state(m, n));
        }
    });
    out
}

/// RNG of sample `path`: independent of how samples are split across threads.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Precomputed per-step drift and diffusion of the exact log-normal update.
pub(crate) struct Stepper {
    root: EquicorrelationRoot,
    drift: Vec<Vec<f64>>,
    diffusion: Vec<Vec<f64>>,
}

impl Stepper {
    pub(crate) fn new(model: &BlackScholesModel, dates: &[f64]) -> Result<Self> {
        check_dates(dates, model.maturity)?;
        let root = EquicorrelationRoot::new(model.dim(), model.rho);
        let mut drift = Vec::new();
        let mut diffusion = Vec::new();
        for w in dates.windows(2) {
            let dt = w[1] - w[0];
            drift.push(
                (0..model.dim())
                    .map(|j| (model.rate - model.dividends[j] - 0.5 * model.vols[j].powi(2)) * dt)
                    .collect(),
            );
            diffusion.push(model.vols.iter().map(|s| s * dt.sqrt()).collect());
        }
        Ok(Self {
            root,
            drift,
            diffusion,
        })
    }

    /// Draws `G` into `g` and advances `state` across step `step` (0-based).
    #[inline]
    pub(crate) fn advance<R: Rng>(
        &self,
        rng: &mut R,
        step: usize,
        state: &mut [f64],
        g: &mut [f64],
        correlated: &mut [f64],
    ) {
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        self.root.apply(g, correlated);
        let (mu, vol) = (&self.drift[step], &self.diffusion[step]);
        for j in 0..state.len() {
            state[j] *= (mu[j] + vol[j] * correlated[j]).exp();
        }
    }
}

/// Simulates `paths` samples on `dates` with sample `i` drawn from stream `i`
/// of the generator seeded by `seed`.
pub fn simulate(
    model: &BlackScholesModel,
    payoff: &Payoff,
    dates: &[f64],
    paths: usize,
    seed: u64,
    keep_increments: bool,
) -> Result<PathEnsemble> {
    if paths == 0 {
        return Err(invalid("paths", "need at least one sample"));
    }
    let d = model.dim();
    check_len(d, payoff.dim())?;
    let stepper = Stepper::new(model, dates)?;
    let steps = dates.len() - 1;
    let state_len = (steps + 1) * d;
    let mut states = vec![0.0; paths * state_len];
    let mut increments = if keep_increments {
        vec![0.0; paths * steps * d]
    } else {
        Vec::new()
    };
    let simulate_one = |m: usize, s: &mut [f64], g_out: Option<&mut [f64]>| {
        let mut rng = path_rng(seed, m);
        let mut g = vec![0.0; d];
        let mut corr = vec![0.0; d];
        let mut current = model.s0.clone();
        s[..d].copy_from_slice(&current);
        let mut g_out = g_out;
        for n in 0..steps {
            stepper.advance(&mut rng, n, &mut current, &mut g, &mut corr);
            s[(n + 1) * d..(n + 2) * d].copy_from_slice(&current);
            if let Some(out) = g_out.as_deref_mut() {
                out[n * d..(n + 1) * d].copy_from_slice(&g);
            }
        }
    };
    if keep_increments {
        states
            .par_chunks_mut(state_len)
            .zip(increments.par_chunks_mut(steps * d))
            .enumerate()
            .for_each(|(m, (s, g))| simulate_one(m, s, Some(g)));
    } else {
        states
            .par_chunks_mut(state_len)
            .enumerate()
            .for_each(|(m, s)| simulate_one(m, s, None));
    }
    let mut e = PathEnsemble {
        dates: dates.to_vec(),
        dim: d,
        paths,
        states,
        increments: keep_increments.then_some(increments),
        discounted: Vec::new(),
        seed,
        sorted: false,
    };
    e.discounted = discount_all(&e, payoff, model.rate);
    Ok(e)
}
