use bosonbound_core::channel::{compose_channel, deph_count, loss_count, ChannelOptions, NoisePoint};
use bosonbound_core::codes::{CodeFamily, CodePair};
use bosonbound_core::fock::{FockState, C64};
use bosonbound_core::optimizer::{cma_init, Scale, SearchSpace};
use bosonbound_core::qec::{evaluate, fast_fidelity, transpose_channel_oracle};
use bosonbound_core::sweep::{strict_region, Region};
use proptest::prelude::*;

fn state(amps: &[(f64, f64)], decay: f64) -> FockState {
    let v: Vec<C64> = amps
        .iter()
        .enumerate()
        .map(|(n, (re, im))| C64::new(*re, *im) * (-decay * n as f64).exp())
        .collect();
    FockState::from_slice(&v).unwrap()
}

fn random_pair(dim: usize) -> impl Strategy<Value = CodePair> {
    let amps = proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim);
    (amps.clone(), amps).prop_filter_map("dependent or zero states", |(a, b)| {
        CodePair::from_states(CodeFamily::TrivialFock, state(&a, 0.2), state(&b, 0.2)).ok()
    })
}

/// Binomial tail `P(K > k)` by the multiplicative recurrence.
fn binomial_tail(n: usize, gamma_t: f64, k: usize) -> f64 {
    let p = 1.0 - (-gamma_t).exp();
    let q = 1.0 - p;
    let mut pmf = vec![q.powi(n as i32)];
    for j in 0..n {
        pmf.push(pmf[j] * (n - j) as f64 / (j + 1) as f64 * p / q);
    }
    pmf.iter().skip(k + 1).sum()
}

fn poisson_tail(lambda: f64, l: usize) -> f64 {
    let mut term = (-lambda).exp();
    let mut tail = 0.0;
    for j in 1..(lambda + 40.0 * lambda.sqrt() + 80.0) as usize {
        term *= lambda / j as f64;
        if j > l {
            tail += term;
        }
    }
    tail
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_channel_is_perfect(code in (4usize..24).prop_flat_map(random_pair)) {
        let f = evaluate(&code, NoisePoint::new(0.0, 0.0).unwrap(), &ChannelOptions::default()).unwrap();
        prop_assert!((f.f_tilde - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduced_route_matches_transpose_oracle(
        code in (6usize..16).prop_flat_map(random_pair),
        gamma in 0.0f64..0.2,
        kappa in 0.0f64..0.01,
    ) {
        let ch = compose_channel(NoisePoint::new(gamma, kappa).unwrap(), code.dim, 3, 1e-6, (1, 1)).unwrap();
        prop_assume!(ch.len() <= 25);
        let f = fast_fidelity(&code, &ch).unwrap();
        let oracle = transpose_channel_oracle(&code, &ch).unwrap();
        prop_assert!((f.f_tilde - oracle).abs() < 1e-7, "{} vs {}", f.f_tilde, oracle);
        prop_assert!(oracle >= f.f_lower - 1e-7 && oracle <= f.f_upper + 1e-7);
    }

    #[test]
    fn loss_count_brackets_binomial_tail(
        n in 1usize..200,
        gamma in 1e-4f64..0.5,
        log_eps in -12.0f64..-3.0,
    ) {
        let eps = 10f64.powf(log_eps);
        let k_max = loss_count(gamma, n, eps, 0) - 1;
        prop_assert!(binomial_tail(n, gamma, k_max) < eps * (1.0 + 1e-9));
        if k_max > 0 {
            prop_assert!(binomial_tail(n, gamma, k_max - 1) >= eps * (1.0 - 1e-9));
        }
    }

    #[test]
    fn deph_count_brackets_poisson_tail(
        n in 1usize..200,
        kappa in 1e-5f64..0.0072,
        log_eps in -12.0f64..-3.0,
    ) {
        let eps = 10f64.powf(log_eps);
        let lambda = kappa * (n * n) as f64;
        let l_max = deph_count(kappa, n, eps, 0) - 1;
        prop_assert!(poisson_tail(lambda, l_max) < eps * (1.0 + 1e-9));
        if l_max > 0 {
            prop_assert!(poisson_tail(lambda, l_max - 1) >= eps * (1.0 - 1e-9));
        }
    }

    #[test]
    fn regions_are_exclusive(g in 0.0f64..=1.0, n in 0.0f64..=1.0) {
        let r = strict_region(g, n);
        let gkp = g > 0.5 * (1.0 + n);
        let np = n > 0.5 * (1.0 + g);
        prop_assert!(!(gkp && np));
        prop_assert_eq!(r == Region::GkpStrict, gkp);
        prop_assert_eq!(r == Region::NpStrict, np);
    }

    #[test]
    fn population_is_reproducible_and_boxed(seed in any::<u64>(), sigma in 0.01f64..3.0) {
        let mut a = cma_init(4, sigma, 12, seed).unwrap();
        let mut b = cma_init(4, sigma, 12, seed).unwrap();
        let pa = a.ask();
        prop_assert_eq!(&pa, &b.ask());
        for x in pa {
            prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn normalization_round_trips(u in proptest::collection::vec(0.0f64..=1.0, 3)) {
        for space in [SearchSpace::gkp(Scale::Paper), SearchSpace::np(Scale::Desk)] {
            let p = space.denormalize(&u);
            for ((v, lo), hi) in p.iter().zip(&space.lower).zip(&space.upper) {
                prop_assert!(*v >= *lo - 1e-12 && *v <= *hi + 1e-12);
            }
            let back = space.normalize(&p);
            for (a, b) in back.iter().zip(&u) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
