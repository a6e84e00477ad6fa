use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tt_bermudan::bases::{binomial, MultiIndexSet};
use tt_bermudan::dual::{smooth_max, smooth_max_gradient};
use tt_bermudan::manifold::{feasible_ranks, project_tt, retract, ManifoldPoint};
use tt_bermudan::market::{equidistant_dates, simulate, BlackScholesModel, Payoff};
use tt_bermudan::{DenseTensor, Side, TensorTrain};

fn dims_strategy(max_order: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 2..=max_order)
}

fn ranks_for(dims: &[usize], r: usize) -> Vec<usize> {
    let mut ranks = vec![r; dims.len() + 1];
    ranks[0] = 1;
    ranks[dims.len()] = 1;
    feasible_ranks(dims, &ranks)
}

fn random_tt(dims: &[usize], r: usize, seed: u64) -> TensorTrain {
    TensorTrain::random(dims, &ranks_for(dims, r), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn rel_distance(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.distance(b) / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_round_trip(dims in dims_strategy(5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = DenseTensor::from_fn(dims, |_| rand::Rng::random_range(&mut rng, -1.0..1.0)).unwrap();
        let back = TensorTrain::from_full(&t, 0.0, usize::MAX).unwrap().to_full().unwrap();
        prop_assert!(rel_distance(&back, &t) <= 1e-10);
    }

    #[test]
    fn entries_match_dense(dims in dims_strategy(4), r in 1usize..4, seed in any::<u64>()) {
        let x = random_tt(&dims, r, seed);
        let dense = x.to_full().unwrap();
        let mut index = vec![0; dims.len()];
        for flat in 0..dense.len() {
            let mut rem = flat;
            for k in (0..dims.len()).rev() {
                index[k] = rem % dims[k];
                rem /= dims[k];
            }
            let units: Vec<Vec<f64>> = index
                .iter()
                .zip(&dims)
                .map(|(&i, &n)| (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect())
                .collect();
            let v = x.evaluate(&units).unwrap();
            prop_assert!((v - dense.get(&index)).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn orthogonalization_preserves_tensor(dims in dims_strategy(5), r in 1usize..4, seed in any::<u64>(), pivot_frac in 0.0f64..1.0) {
        let x = random_tt(&dims, r, seed);
        let pivot = ((dims.len() - 1) as f64 * pivot_frac).round() as usize;
        let dense = x.to_full().unwrap();
        for side in [Side::Left, Side::Right] {
            let y = x.orthogonalize(pivot, side).unwrap();
            prop_assert!(rel_distance(&y.to_full().unwrap(), &dense) <= 1e-12);
        }
    }

    #[test]
    fn rounding_never_raises_ranks(dims in dims_strategy(5), r in 1usize..5, cap in 1usize..4, seed in any::<u64>()) {
        let x = random_tt(&dims, r, seed);
        let y = x.round(1e-8, cap).unwrap();
        for (a, b) in y.ranks().iter().zip(x.ranks()) {
            prop_assert!(*a <= b.min(cap));
        }
    }

    #[test]
    fn rounding_error_is_bounded(dims in dims_strategy(4), seed in any::<u64>(), tol in 1e-6f64..1e-1) {
        let a = random_tt(&dims, 2, seed);
        let b = random_tt(&dims, 3, seed.wrapping_add(1));
        let x = a.add(&b.scale(0.01)).unwrap();
        let dense = x.to_full().unwrap();
        let y = x.round(tol, usize::MAX).unwrap();
        prop_assert!(rel_distance(&y.to_full().unwrap(), &dense) <= tol * (1.0 + 1e-8));
    }

    #[test]
    fn inner_product_is_bilinear(dims in dims_strategy(4), seed in any::<u64>(), s in -3.0f64..3.0) {
        let a = random_tt(&dims, 2, seed);
        let b = random_tt(&dims, 3, seed ^ 0x55);
        let c = random_tt(&dims, 2, seed ^ 0xaa);
        let lhs = a.add(&b.scale(s)).unwrap().inner(&c).unwrap();
        let rhs = a.inner(&c).unwrap() + s * b.inner(&c).unwrap();
        let scale = a.norm() * c.norm() + s.abs() * b.norm() * c.norm();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn projection_is_idempotent_and_symmetric(dims in dims_strategy(4), r in 1usize..3, seed in any::<u64>()) {
        let x = ManifoldPoint::new(&random_tt(&dims, r, seed)).unwrap();
        let a = random_tt(&dims, 3, seed ^ 1);
        let b = random_tt(&dims, 2, seed ^ 2);
        let pa = project_tt(&x, &a).unwrap().embed();
        let ppa = project_tt(&x, &pa).unwrap().embed();
        prop_assert!(ppa.to_full().unwrap().distance(&pa.to_full().unwrap()) <= 1e-9 * a.norm());
        let pb = project_tt(&x, &b).unwrap().embed();
        let lhs = pa.inner(&b).unwrap();
        let rhs = a.inner(&pb).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * a.norm() * b.norm());
    }

    #[test]
    fn retraction_keeps_ranks(dims in dims_strategy(4), r in 1usize..3, seed in any::<u64>(), t in -2.0f64..2.0) {
        let x = ManifoldPoint::new(&random_tt(&dims, r, seed)).unwrap();
        let z = random_tt(&dims, 2, seed ^ 3);
        let xi = project_tt(&x, &z).unwrap();
        let y = retract(&xi, t).unwrap();
        for (a, b) in y.ranks().iter().zip(x.ranks()) {
            prop_assert!(*a <= b);
        }
    }

    #[test]
    fn multi_index_prefix(dim in 1usize..5, degree in 1usize..6) {
        let lo = MultiIndexSet::new(dim, degree - 1).unwrap();
        let hi = MultiIndexSet::new(dim, degree).unwrap();
        prop_assert_eq!(hi.len(), binomial(dim + degree, degree));
        prop_assert_eq!(lo.len(), binomial(dim + degree - 1, degree - 1));
        prop_assert_eq!(&hi.indices()[..lo.len()], lo.indices());
    }

    #[test]
    fn smooth_max_is_shift_equivariant(v in prop::collection::vec(-100.0f64..100.0, 1..12), c in -50.0f64..50.0, eta in 0.1f64..200.0) {
        let (a, w) = smooth_max(&v, eta);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (b, _) = smooth_max(&shifted, eta);
        prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + a.abs() + c.abs()) * 10.0);
        let hard = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a <= hard + 1e-12);
        prop_assert!(hard - a <= (v.len() as f64).ln() / eta + 1e-9);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let (_, grad) = smooth_max_gradient(&v, eta);
        prop_assert!((grad.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn payoffs_are_stored_discounted(d in 1usize..4, seed in any::<u64>(), put in any::<bool>()) {
        let model = BlackScholesModel::symmetric(d, 100.0, 0.05, 0.0, 0.2, 0.0, 1.0).unwrap();
        let payoff = if put { Payoff::basket_put(100.0, d).unwrap() } else { Payoff::max_call(100.0, d).unwrap() };
        let dates = equidistant_dates(1.0, 3).unwrap();
        let e = simulate(&model, &payoff, &dates, 20, seed, false).unwrap();
        for i in 0..20 {
            for (n, t) in dates.iter().enumerate() {
                prop_assert_eq!(e.discounted_payoff(i, n), (-0.05 * t).exp() * payoff.eval(e.state(i, n)));
            }
        }
        let again = simulate(&model, &payoff, &dates, 20, seed, false).unwrap();
        for i in 0..20 {
            prop_assert_eq!(e.discounted_payoffs(i), again.discounted_payoffs(i));
        }
        if !put {
            let sorted = e.clone().sort_paths();
            for i in 0..20 {
                prop_assert_eq!(sorted.discounted_payoffs(i), e.discounted_payoffs(i));
                for n in 0..dates.len() {
                    prop_assert_eq!(payoff.eval(sorted.state(i, n)), payoff.eval(e.state(i, n)));
                }
            }
        }
    }
}
