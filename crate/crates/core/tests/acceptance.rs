//! Desk-scale acceptance run: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use statrs::distribution::{ContinuousCDF, Normal};

use tt_bermudan::dual::{optimize_dual, resimulate_upper, ChaosSamples, DualOptions};
use tt_bermudan::market::{equidistant_dates, simulate, BlackScholesModel, Payoff};
use tt_bermudan::primal::{longstaff_schwartz, resimulate_lower, resimulate_lower_on, Estimate, LsOptions};
use tt_bermudan::selfcheck;

const TRAIN_SEED: u64 = 1;
const RESIM_SEED: u64 = 2;
const DUAL_TRAIN_SEED: u64 = 3;
const DUAL_RESIM_SEED: u64 = 4;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, passed: bool, detail: String) {
        if !passed {
            self.failures += 1;
        }
        println!("{} criterion {id}: {detail}", if passed { "PASS" } else { "FAIL" });
    }
}

fn fmt(e: &Estimate) -> String {
    format!("{:.4} ± {:.4}", e.mean, e.stderr)
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

struct PrimalRun {
    price: Estimate,
    max_rank: usize,
    elapsed: Duration,
}

#[allow(clippy::too_many_arguments)]
fn primal(model: &BlackScholesModel, payoff: &Payoff, steps: usize, degree: usize, paths: usize, sorted: bool, max_rank: usize) -> PrimalRun {
    let start = Instant::now();
    let dates = equidistant_dates(model.maturity, steps).unwrap();
    let mut ensemble = simulate(model, payoff, &dates, paths, TRAIN_SEED, false).unwrap();
    if sorted {
        ensemble = ensemble.sort_paths();
    }
    let mut opts = LsOptions {
        degree,
        sorted,
        ..LsOptions::default()
    };
    opts.als.max_rank = max_rank;
    let fit = longstaff_schwartz(&ensemble, payoff, &opts).unwrap();
    drop(ensemble);
    let price = resimulate_lower(model, payoff, &dates, &fit, paths, RESIM_SEED).unwrap();
    PrimalRun {
        price,
        max_rank: fit.max_rank(),
        elapsed: start.elapsed(),
    }
}

fn dual(model: &BlackScholesModel, payoff: &Payoff, steps: usize, degree: usize, paths: usize, resim: usize) -> (Estimate, Duration) {
    let start = Instant::now();
    let dates = equidistant_dates(model.maturity, steps).unwrap();
    let ensemble = simulate(model, payoff, &dates, paths, DUAL_TRAIN_SEED, true).unwrap();
    let samples = ChaosSamples::from_ensemble(&ensemble, degree).unwrap();
    drop(ensemble);
    let opts = DualOptions {
        degree,
        rank: 4,
        eta: 50.0,
        ..DualOptions::default()
    };
    let result = optimize_dual(&samples, DUAL_TRAIN_SEED, &opts).unwrap();
    let price = resimulate_upper(model, payoff, &dates, &result.coefficients, resim, DUAL_RESIM_SEED, DUAL_TRAIN_SEED).unwrap();
    (price, start.elapsed())
}

fn black_scholes_put(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt());
    let d2 = d1 - sigma * t.sqrt();
    k * (-r * t).exp() * n.cdf(-d2) - s * n.cdf(-d1)
}

fn main() -> ExitCode {
    let mut report = Report { failures: 0 };

    // 1: European limit
    {
        let start = Instant::now();
        let model = BlackScholesModel::symmetric(1, 100.0, 0.05, 0.0, 0.2, 0.0, 1.0).unwrap();
        let payoff = Payoff::basket_put(100.0, 1).unwrap();
        let dates = equidistant_dates(1.0, 1).unwrap();
        let ensemble = simulate(&model, &payoff, &dates, 1_000_000, TRAIN_SEED, false).unwrap();
        let fit = longstaff_schwartz(&ensemble, &payoff, &LsOptions::default()).unwrap();
        let price = resimulate_lower_on(&ensemble, &fit.rules, false).unwrap();
        let exact = black_scholes_put(100.0, 100.0, 0.05, 0.2, 1.0);
        let elapsed = start.elapsed();
        let ok = (price.mean - exact).abs() <= 3.0 * price.stderr && elapsed < Duration::from_secs(30);
        report.line("1", ok, format!("European put {} vs Black-Scholes {exact:.4} in {}", fmt(&price), secs(elapsed)));
    }

    // 2, 3: basket put
    let basket_model = BlackScholesModel::symmetric(5, 100.0, 0.05, 0.0, 0.2, 0.0, 3.0).unwrap();
    let basket = Payoff::basket_put(100.0, 5).unwrap();
    let c2 = primal(&basket_model, &basket, 3, 2, 100_000, false, 6);
    {
        let p = &c2.price;
        let ok = (2.05..=2.23).contains(&p.mean) && c2.elapsed < Duration::from_secs(180);
        report.line("2", ok, format!("basket put lower bound {} in [2.05, 2.23], {}", fmt(p), secs(c2.elapsed)));
    }
    {
        let (upper, elapsed) = dual(&basket_model, &basket, 3, 2, 20_000, 100_000);
        let floor = c2.price.mean - 3.0 * upper.combined_stderr(&c2.price);
        let ok = (2.25..=2.50).contains(&upper.mean) && upper.mean >= floor && elapsed < Duration::from_secs(600);
        report.line(
            "3",
            ok,
            format!("basket put upper bound {} in [2.25, 2.50], above {floor:.4}, {}", fmt(&upper), secs(elapsed)),
        );
    }

    // 4: max-call, two assets
    let max_model = |d: usize, s0: f64| BlackScholesModel::symmetric(d, s0, 0.05, 0.1, 0.2, 0.0, 3.0).unwrap();
    let c4 = primal(&max_model(2, 100.0), &Payoff::max_call(100.0, 2).unwrap(), 9, 3, 200_000, false, 6);
    {
        let p = &c4.price;
        let ok = (13.60..=13.95).contains(&p.mean) && p.mean <= 13.902 + 3.0 * p.stderr && c4.elapsed < Duration::from_secs(300);
        report.line("4", ok, format!("max-call d=2 {} in [13.60, 13.95], {}", fmt(p), secs(c4.elapsed)));
    }

    // 5: sorting
    let call5 = Payoff::max_call(100.0, 5).unwrap();
    let c5 = primal(&max_model(5, 100.0), &call5, 9, 3, 200_000, true, 6);
    let c5_unsorted = primal(&max_model(5, 100.0), &call5, 9, 3, 200_000, false, 6);
    {
        let (s, u) = (&c5.price, &c5_unsorted.price);
        let elapsed = c5.elapsed + c5_unsorted.elapsed;
        let ok = (25.80..=26.20).contains(&s.mean)
            && s.mean >= u.mean - 2.0 * s.combined_stderr(u)
            && elapsed < Duration::from_secs(600);
        report.line(
            "5",
            ok,
            format!("max-call d=5 sorted {} in [25.80, 26.20], unsorted {}, {}", fmt(s), fmt(u), secs(elapsed)),
        );
    }

    // 6: dual max-call out of the money
    {
        let model = max_model(2, 90.0);
        let payoff = Payoff::max_call(100.0, 2).unwrap();
        let (upper, elapsed) = dual(&model, &payoff, 9, 2, 20_000, 100_000);
        let lower = primal(&model, &payoff, 9, 3, 200_000, false, 6);
        let ok = (8.6..=9.1).contains(&upper.mean) && upper.mean >= lower.price.mean && elapsed < Duration::from_secs(600);
        report.line(
            "6",
            ok,
            format!("max-call S0=90 upper bound {} in [8.6, 9.1], primal {}, {}", fmt(&upper), fmt(&lower.price), secs(elapsed)),
        );
    }

    // 7: ranks
    {
        let ranks = [c2.max_rank, c4.max_rank, c5.max_rank];
        let ok = ranks.iter().all(|&r| r <= 6);
        report.line("7", ok, format!("maximal adapted ranks {ranks:?} ≤ 6"));
    }

    // 8: hundred assets
    {
        let c8 = primal(&max_model(100, 100.0), &Payoff::max_call(100.0, 100).unwrap(), 9, 2, 100_000, false, 1);
        let ok = (82.0..=84.5).contains(&c8.price.mean) && c8.elapsed < Duration::from_secs(1200);
        report.line("8", ok, format!("max-call d=100 {} in [82.0, 84.5], {}", fmt(&c8.price), secs(c8.elapsed)));
    }

    // 9: property checks
    {
        let start = Instant::now();
        let outcomes = selfcheck::run_all();
        let elapsed = start.elapsed();
        let failed: Vec<String> = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| format!("{} ({})", o.name, o.detail))
            .collect();
        let ok = failed.is_empty() && elapsed < Duration::from_secs(300);
        let detail = if failed.is_empty() {
            format!("{} property checks passed in {}", outcomes.len(), secs(elapsed))
        } else {
            format!("failed: {}", failed.join("; "))
        };
        report.line("9", ok, detail);
    }

    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
