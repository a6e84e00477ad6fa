//! Desk-scale property checks shared by the `check` command and the
//! acceptance suite.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bases::quadrature::{gauss_hermite, gauss_legendre};
use crate::bases::{HermiteBasis, IntervalBasis, MultiIndexSet};
use crate::dual::{dual_gradient, dual_objective, smooth_max, ChaosCoefficients, ChaosSamples, Mollifier};
use crate::manifold::{project_tt, retract, ManifoldPoint, TangentVector};
use crate::market::{equidistant_dates, simulate, BlackScholesModel, Payoff};
use crate::tt::{Core, DenseTensor, TensorTrain};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

type Check = fn() -> crate::Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("tt round trip", tt_round_trip),
    ("tt rounding bounds", tt_rounding_bounds),
    ("tangent projection", tangent_projection),
    ("retraction first order", retraction_first_order),
    ("gradient finite differences", gradient_finite_differences),
    ("hermite orthonormality", hermite_orthonormality),
    ("interval basis orthonormality", interval_orthonormality),
    ("gbm moments", gbm_moments),
    ("chaos martingale increments", chaos_martingale),
    ("chaos tower property", chaos_tower),
    ("smooth max sandwich", smooth_max_sandwich),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check; errors count as failures.
pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckOutcome {
                name,
                passed,
                detail,
                elapsed: start.elapsed(),
            }
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn tt_round_trip() -> crate::Result<(bool, String)> {
    let mut r = rng(1);
    let shape = vec![4, 5, 3, 4];
    let t = DenseTensor::from_fn(shape, |_| normal(&mut r))?;
    let back = TensorTrain::from_full(&t, 0.0, usize::MAX)?.to_full()?;
    let rel = back.distance(&t) / t.norm();
    Ok((rel <= 1e-10, format!("relative error {rel:.2e}")))
}

fn tt_rounding_bounds() -> crate::Result<(bool, String)> {
    let mut r = rng(2);
    let dims = [4, 3, 5, 4];
    let a = TensorTrain::random(&dims, &[1, 3, 3, 3, 1], &mut r)?;
    let b = TensorTrain::random(&dims, &[1, 2, 2, 2, 1], &mut r)?;
    let x = a.add(&b.scale(1e-6))?;
    let dense = x.to_full()?;
    let tol = 1e-4;
    let rounded = x.round(tol, 6)?;
    let err = rounded.to_full()?.distance(&dense) / dense.norm();
    let capped = x.round(0.0, 2)?;
    let monotone = capped
        .ranks()
        .iter()
        .zip(x.ranks())
        .all(|(&c, xr)| c <= xr.min(2));
    let lhs = a.add(&b)?.inner(&x)?;
    let rhs = a.inner(&x)? + b.inner(&x)?;
    let bilinear = (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0);
    Ok((
        err <= tol && monotone && bilinear,
        format!("error {err:.2e} (tol {tol:.0e}), capped ranks {:?}", capped.ranks()),
    ))
}

fn point(dims: &[usize], ranks: &[usize], seed: u64) -> crate::Result<Arc<ManifoldPoint>> {
    ManifoldPoint::new(&TensorTrain::random(dims, ranks, &mut rng(seed))?)
}

fn random_tangent(x: &Arc<ManifoldPoint>, seed: u64) -> crate::Result<TangentVector> {
    let mut r = rng(seed);
    let cores = x
        .left_cores()
        .iter()
        .map(|c| {
            let (a, p, b) = c.shape();
            Core::new(a, p, b, (0..a * p * b).map(|_| normal(&mut r)).collect())
        })
        .collect::<crate::Result<Vec<_>>>()?;
    TangentVector::from_variations(x, cores)
}

fn tangent_projection() -> crate::Result<(bool, String)> {
    let dims = [3, 4, 3];
    let x = point(&dims, &[1, 2, 2, 1], 3)?;
    let a = TensorTrain::random(&dims, &[1, 3, 3, 1], &mut rng(4))?;
    let b = TensorTrain::random(&dims, &[1, 2, 3, 1], &mut rng(5))?;
    let pa = project_tt(&x, &a)?.embed();
    let ppa = project_tt(&x, &pa)?.embed();
    let idem = ppa.to_full()?.distance(&pa.to_full()?) / pa.norm();
    let pb = project_tt(&x, &b)?.embed();
    let adj = (pa.inner(&b)? - a.inner(&pb)?).abs();
    Ok((
        idem <= 1e-9 && adj <= 1e-9 * a.norm() * b.norm(),
        format!("idempotence {idem:.2e}, adjointness {adj:.2e}"),
    ))
}

fn retraction_first_order() -> crate::Result<(bool, String)> {
    let x = point(&[3, 4, 3, 2], &[1, 2, 3, 2, 1], 6)?;
    let xi = random_tangent(&x, 7)?;
    let xi = xi.scale(x.norm() / xi.norm());
    let base = x.tt().to_full()?;
    let direction = xi.embed().to_full()?;
    let gap = |t: f64| -> crate::Result<f64> {
        let moved = retract(&xi, t)?.tt().to_full()?;
        let linear: Vec<f64> = base.data().iter().zip(direction.data()).map(|(a, b)| a + t * b).collect();
        let linear = DenseTensor::new(base.shape().to_vec(), linear)?;
        Ok(moved.distance(&linear) / base.norm())
    };
    let (g1, g2) = (gap(1e-2)?, gap(1e-3)?);
    // second order: a tenfold smaller step shrinks the gap about a hundredfold
    let ok = g2 <= 2e-2 * g1.max(1e-14) || g2 <= 1e-12;
    Ok((ok, format!("gap {g1:.2e} at 1e-2, {g2:.2e} at 1e-3")))
}

fn random_chaos_samples(dim: usize, degree: usize, steps: usize, paths: usize, seed: u64) -> crate::Result<ChaosSamples> {
    let set = MultiIndexSet::new(dim, degree)?;
    let mut r = rng(seed);
    let mut features = Vec::new();
    let mut payoffs = Vec::new();
    for _ in 0..paths {
        for _ in 0..steps {
            let g: Vec<f64> = (0..dim).map(|_| normal(&mut r)).collect();
            features.extend(set.chaos_feature(&g)?);
        }
        payoffs.extend((0..=steps).map(|_| (r.random::<f64>() - 0.3).max(0.0)));
    }
    ChaosSamples::from_parts(set, steps, features, payoffs)
}

fn gradient_finite_differences() -> crate::Result<(bool, String)> {
    let samples = random_chaos_samples(2, 1, 3, 50, 8)?;
    let tt = TensorTrain::random(&[3, 3, 3], &[1, 2, 2, 1], &mut rng(9))?;
    let x = ManifoldPoint::new(&tt.scale(0.1))?;
    let eta = 5.0;
    let indices: Vec<usize> = (0..samples.paths()).collect();
    let (_, grad) = dual_gradient(&x, &samples, &indices, eta)?;
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let xi = random_tangent(&x, 100 + trial)?;
        let xi = xi.scale(1.0 / xi.norm());
        let h = 1e-5;
        let at = |t: f64| -> crate::Result<f64> {
            let y = x.tt().add(&xi.embed().scale(t))?;
            let c = ChaosCoefficients::new(y, samples.index_set().clone(), 4)?;
            dual_objective(&c, &samples, Mollifier::Smooth(eta))
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        let exact = grad.inner(&xi)?;
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3));
    }
    Ok((worst <= 1e-5, format!("worst relative error {worst:.2e}")))
}

fn hermite_orthonormality() -> crate::Result<(bool, String)> {
    let degree = 10;
    let q = gauss_hermite(degree + 2)?;
    let basis = HermiteBasis::new(degree);
    let vals: Vec<Vec<f64>> = q.nodes.iter().map(|&x| basis.eval(x)).collect::<crate::Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..=degree {
        for j in 0..=degree {
            let g: f64 = vals.iter().zip(&q.weights).map(|(v, w)| w * v[i] * v[j]).sum();
            worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max Gram deviation {worst:.2e}")))
}

fn interval_orthonormality() -> crate::Result<(bool, String)> {
    let (a, b, p) = (60.0, 140.0, 6);
    let basis = IntervalBasis::new(a, b, p)?;
    let q = gauss_legendre(p + 2)?;
    let half = 0.5 * (b - a);
    let evals: Vec<[Vec<f64>; 3]> = q
        .nodes
        .iter()
        .map(|&t| basis.eval_with_derivatives(a + half * (t + 1.0)))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            let g: f64 = evals
                .iter()
                .zip(&q.weights)
                .map(|(e, w)| half * w * (0..3).map(|k| e[k][i] * e[k][j]).sum::<f64>())
                .sum();
            worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max H² Gram deviation {worst:.2e}")))
}

fn gbm_moments() -> crate::Result<(bool, String)> {
    let (d, rho, m) = (3, 0.4, 40_000);
    let model = BlackScholesModel::symmetric(d, 100.0, 0.05, 0.02, 0.2, rho, 1.0)?;
    let payoff = Payoff::max_call(100.0, d)?;
    let dates = equidistant_dates(1.0, 2)?;
    let e = simulate(&model, &payoff, &dates, m, 11, true)?;
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for j in 0..d {
        // e^{−(r−δ)t} S_t is a martingale
        let xs: Vec<f64> = (0..m).map(|i| e.state(i, 2)[j] * (-(0.05 - 0.02) * 1.0f64).exp()).collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let z = (mean - 100.0).abs() / (var / m as f64).sqrt();
        worst_z = worst_z.max(z);
        ok &= z <= 4.0;
    }
    // log-return covariance over the first step
    let dt = 0.5;
    let lr = |i: usize, j: usize| (e.state(i, 1)[j] / e.state(i, 0)[j]).ln();
    let mean = |j: usize| (0..m).map(|i| lr(i, j)).sum::<f64>() / m as f64;
    let (m0, m1) = (mean(0), mean(1));
    let cov = (0..m).map(|i| (lr(i, 0) - m0) * (lr(i, 1) - m1)).sum::<f64>() / (m - 1) as f64;
    let var = (0..m).map(|i| (lr(i, 0) - m0).powi(2)).sum::<f64>() / (m - 1) as f64;
    let target_var = 0.04 * dt;
    let corr = cov / var;
    ok &= (var / target_var - 1.0).abs() <= 5.0 / (m as f64).sqrt() * 2f64.sqrt();
    ok &= (corr - rho).abs() <= 5.0 / (m as f64).sqrt();
    Ok((
        ok,
        format!("martingale |z| ≤ {worst_z:.2}, variance ratio {:.4}, correlation {corr:.4}", var / target_var),
    ))
}

fn random_zero_mean(steps: usize, set: &MultiIndexSet, rank: usize, seed: u64) -> crate::Result<ChaosCoefficients> {
    let mut ranks = vec![rank; steps + 1];
    ranks[0] = 1;
    ranks[steps] = 1;
    let tt = TensorTrain::random(&vec![set.len(); steps], &ranks, &mut rng(seed))?;
    ChaosCoefficients::new(tt, set.clone(), rank)?.project_zero_mean()
}

fn chaos_martingale() -> crate::Result<(bool, String)> {
    let steps = 3;
    let set = MultiIndexSet::new(2, 2)?;
    let x = random_zero_mean(steps, &set, 2, 12)?;
    let m = 100_000;
    let mut r = rng(13);
    let mut sums = vec![(0.0, 0.0); steps];
    for _ in 0..m {
        let feats: Vec<Vec<f64>> = (0..steps)
            .map(|_| {
                let g: Vec<f64> = (0..2).map(|_| normal(&mut r)).collect();
                set.chaos_feature(&g)
            })
            .collect::<crate::Result<_>>()?;
        let v = x.evaluate_all_dates(&feats)?;
        for n in 0..steps {
            let inc = v[n + 1] - v[n];
            sums[n].0 += inc;
            sums[n].1 += inc * inc;
        }
    }
    let mut worst_z: f64 = 0.0;
    for (s, s2) in sums {
        let mean = s / m as f64;
        let se = ((s2 / m as f64 - mean * mean) / m as f64).sqrt();
        worst_z = worst_z.max(mean.abs() / se);
    }
    Ok((worst_z <= 3.0, format!("largest increment mean {worst_z:.2} standard errors")))
}

fn chaos_tower() -> crate::Result<(bool, String)> {
    let steps = 3;
    let set = MultiIndexSet::new(1, 2)?;
    let x = random_zero_mean(steps, &set, 2, 14)?;
    let mut r = rng(15);
    let draw = |r: &mut ChaCha8Rng| set.chaos_feature(&[normal(r)]);
    let head: Vec<Vec<f64>> = (0..steps).map(|_| draw(&mut r)).collect::<crate::Result<_>>()?;
    let m = 100_000;
    let mut worst_z: f64 = 0.0;
    for n in 0..steps {
        let target = x.conditional_evaluate(&head, n)?;
        let (mut s, mut s2) = (0.0, 0.0);
        let mut feats = head.clone();
        for _ in 0..m {
            for f in feats.iter_mut().skip(n) {
                *f = draw(&mut r)?;
            }
            let v = x.conditional_evaluate(&feats, steps)?;
            s += v;
            s2 += v * v;
        }
        let mean = s / m as f64;
        let se = ((s2 / m as f64 - mean * mean) / m as f64).sqrt();
        worst_z = worst_z.max((mean - target).abs() / se);
    }
    Ok((worst_z <= 3.0, format!("largest deviation {worst_z:.2} standard errors")))
}

fn smooth_max_sandwich() -> crate::Result<(bool, String)> {
    let mut r = rng(16);
    let eta = 50.0;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..12);
        let scale = 10f64.powf(r.random_range(-3.0..1.0));
        let v: Vec<f64> = (0..n).map(|_| scale * normal(&mut r)).collect();
        let hard = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (soft, w) = smooth_max(&v, eta);
        let gap = hard - soft;
        worst = worst.max(gap);
        ok &= gap >= -1e-12 && gap <= (n as f64).ln() / eta + 1e-12;
        ok &= (w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|&x| x >= 0.0);
        let shifted: Vec<f64> = v.iter().map(|x| x + 3.7).collect();
        ok &= (smooth_max(&shifted, eta).0 - soft - 3.7).abs() <= 1e-12 * (1.0 + soft.abs());
    }
    Ok((ok, format!("largest gap {worst:.2e}")))
}
