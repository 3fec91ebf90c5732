use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use sspr_core::par::Parallelism;
use sspr_core::reward::*;
use statrs::distribution::{Binomial as StatBinomial, Discrete};

fn inject(alpha: f64) -> impl Fn(SolveRate) -> f64 + Sync {
    let params = InjectRewardParams::new(alpha).unwrap();
    move |s| inject_reward(true, s, &params)
}

fn rate(k: u32, g: u32) -> SolveRate {
    SolveRate::new(k, g).unwrap()
}

/// Power-basis coefficients of `sum_k C(G,k) p^k (1-p)^(G-k) r_k`, expanded
/// with exact integer binomials.
fn power_coefficients(g: u32, r: &[f64]) -> Vec<f64> {
    let c = |n: u32, k: u32| -> f64 {
        (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128) as f64
    };
    let mut a = vec![0.0; g as usize + 1];
    for k in 0..=g {
        for j in 0..=(g - k) {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            a[(k + j) as usize] += c(g, k) * c(g - k, j) * sign * r[k as usize];
        }
    }
    a
}

fn horner(a: &[f64], p: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * p + c)
}

#[test]
fn closed_form_on_the_eighths() {
    for alpha in [0.2, 0.5, 0.8] {
        let params = InjectRewardParams::new(alpha).unwrap();
        for k in 0..=8u32 {
            let want = if k == 0 || k == 8 { -alpha } else { 1.0 - (1.0 + alpha) * k as f64 / 8.0 };
            assert!((inject_reward(true, rate(k, 8), &params) - want).abs() <= 1e-12);
            assert_eq!(inject_reward(false, rate(k, 8), &params), -1.0);
        }
    }
}

#[test]
fn endpoints_are_exactly_minus_alpha() {
    for alpha in [0.2, 0.5, 0.8] {
        assert_eq!(expected_reward(0.0, 8, inject(alpha)).unwrap(), -alpha);
        assert_eq!(expected_reward(1.0, 8, inject(alpha)).unwrap(), -alpha);
    }
}

#[test]
fn binomial_sum_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let r = inject(0.8);
    for i in 1..=9 {
        let p = i as f64 / 10.0;
        let dist = Binomial::new(8, p).unwrap();
        let n = 100_000;
        let mc = (0..n).map(|_| r(rate(dist.sample(&mut rng) as u32, 8))).sum::<f64>() / n as f64;
        let exact = expected_reward(p, 8, &r).unwrap();
        assert!((mc - exact).abs() < 0.01, "p={p}: mc={mc} exact={exact}");
    }
}

#[test]
fn binomial_sum_matches_reference_pmf() {
    let r = inject(0.8);
    for g in [1u32, 2, 8, 64] {
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let pmf = StatBinomial::new(p, g as u64).unwrap();
            let want: f64 = (0..=g).map(|k| pmf.pmf(k as u64) * r(rate(k, g))).sum();
            assert!((expected_reward(p, g, &r).unwrap() - want).abs() < 1e-12, "G={g} p={p}");
        }
    }
}

#[test]
fn optimal_targets() {
    let (p, v) = optimal_target(8, inject(0.8), DEFAULT_GRID).unwrap();
    assert!((0.10..=0.30).contains(&p), "p*={p}");
    // No grid point beats it.
    for q in grid_points(0.01).unwrap() {
        assert!(expected_reward(q, 8, inject(0.8)).unwrap() <= v + 1e-12);
    }
    let beta = |s| beta_reward(s, 1.0, 3.0).unwrap();
    let (p, _) = optimal_target(64, beta, DEFAULT_GRID).unwrap();
    assert!((p - 0.25).abs() <= 0.02, "p*={p}");
}

#[test]
fn parallel_grid_search_agrees() {
    let serial = optimal_target_with(Parallelism::Serial, 8, inject(0.8), DEFAULT_GRID).unwrap();
    let threaded = optimal_target_with(Parallelism::Threads(4), 8, inject(0.8), DEFAULT_GRID).unwrap();
    assert_eq!(serial, threaded);
    let params = InjectRewardParams::default();
    let a = reward_curve(Parallelism::Serial, 8, &params, 1.0, 3.0, 0.01).unwrap();
    let b = reward_curve(Parallelism::Threads(3), 8, &params, 1.0, 3.0, 0.01).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 101);
}

#[test]
fn opposing_incentives_on_the_grid() {
    let params = InjectRewardParams::default();
    for g in [2u32, 8, 16] {
        let mut last: Option<(f64, f64)> = None;
        for k in 1..g {
            let inject = inject_reward(true, rate(k, g), &params);
            let rewards: Vec<i32> = (0..g).map(|i| if i < k { 1 } else { -1 }).collect();
            let solver = mean(&rewards).unwrap();
            assert_eq!(solver, 2.0 * rate(k, g).value() - 1.0);
            if let Some((pi, ps)) = last {
                assert!(inject < pi && solver > ps);
            }
            last = Some((inject, solver));
        }
    }
}

proptest! {
    #[test]
    fn rewards_stay_in_range(alpha in 0.001f64..0.999, g in 1u32..64, k in 0u32..64, valid: bool) {
        let k = k.min(g);
        let params = InjectRewardParams::new(alpha).unwrap();
        let r = inject_reward(valid, rate(k, g), &params);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn expected_reward_is_the_expanded_polynomial(alpha in 0.01f64..0.99, g in 1u32..=10, p in 0.0f64..=1.0) {
        let r: Vec<f64> = (0..=g).map(|k| inject(alpha)(rate(k, g))).collect();
        let a = power_coefficients(g, &r);
        let direct = expected_reward(p, g, inject(alpha)).unwrap();
        prop_assert!((direct - horner(&a, p)).abs() <= 1e-12, "{} vs {}", direct, horner(&a, p));
    }

    #[test]
    fn expected_reward_is_continuous(alpha in 0.01f64..0.99, g in 1u32..=64, p in 0.0f64..0.999) {
        // |R'| <= 2 G max|r| <= 2 G on [0, 1].
        for eps in [1e-3, 1e-6, 1e-9] {
            let d = (expected_reward(p + eps, g, inject(alpha)).unwrap() - expected_reward(p, g, inject(alpha)).unwrap()).abs();
            prop_assert!(d <= 2.0 * g as f64 * eps + 1e-12);
        }
    }

    #[test]
    fn beta_reward_matches_powers(k in 0u32..=16, a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let s = rate(k, 16);
        let x = k as f64 / 16.0;
        let want = x.powf(a) * (1.0 - x).powf(b);
        prop_assert!((beta_reward(s, a, b).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn expected_reward_stays_within_reward_range(alpha in 0.01f64..0.99, g in 1u32..=64, p in 0.0f64..=1.0) {
        let v = expected_reward(p, g, inject(alpha)).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
    }
}
