use lpcoreset::sampling::{
    bernoulli_sample, distortion_oracle, exact_distortion_l2, online_coreset, online_coreset_with_mode,
    randomized_distortion, sample_probabilities, Coreset, OnlineCoreset, OracleOptions, SamplingConfig, WeightMode,
};
use lpcoreset::{synth, DenseMatrix, Error, WeightVector};
use proptest::prelude::*;

#[test]
fn p1_probability_spot_check() {
    let cfg = SamplingConfig::new(1.0, 0.25, 0.1).unwrap();
    let (d, n) = (8usize, 5000usize);
    let beta = 0.25f64 * 0.25 / (8.0 * (5000.0f64 / 0.1).ln());
    let expected = 0.001 / (d as f64 * beta);
    let got = cfg.probability(0.001, n, d, 8.0, 1.0);
    assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");
    assert!((got - 0.173_12).abs() < 1e-4);
    assert_eq!(cfg.probability(0.5, n, d, 8.0, 1.0), 1.0);
}

#[test]
fn halving_epsilon_quadruples_probabilities() {
    for p in [0.5, 1.0, 1.5, 2.0, 3.0] {
        let a = SamplingConfig::new(p, 0.4, 0.1).unwrap();
        let b = SamplingConfig::new(p, 0.2, 0.1).unwrap();
        let w = 1e-6;
        let (pa, pb) = (a.probability(w, 1000, 5, 7.0, 1.0), b.probability(w, 1000, 5, 7.0, 1.0));
        assert!(pb < 1.0);
        assert!((pb / pa - 4.0).abs() < 1e-9, "p={p}: {}", pb / pa);
    }
}

#[test]
fn config_domain_errors() {
    assert!(matches!(SamplingConfig::new(1.0, 0.0, 0.1), Err(Error::Config(_))));
    assert!(matches!(SamplingConfig::new(1.0, 0.3, 1.0), Err(Error::Config(_))));
    assert!(matches!(SamplingConfig::new(-1.0, 0.3, 0.1), Err(Error::Config(_))));
    assert!(matches!(SamplingConfig::with_constant(1.0, 0.3, 0.1, 0.0), Err(Error::Config(_))));
}

#[test]
fn identity_stream_is_kept_whole() {
    let a = DenseMatrix::identity(6).unwrap();
    for p in [0.5, 1.0, 2.0, 4.0] {
        let c = online_coreset(&a, &SamplingConfig::new(p, 0.3, 0.1).unwrap(), 1).unwrap();
        assert_eq!(c.len(), 6);
        assert!(c.entries.iter().all(|e| e.scale == 1.0 && e.prob == 1.0));
    }
}

#[test]
fn oracle_examples() {
    let a = synth::gaussian(50, 3, 1);
    assert!(exact_distortion_l2(&a, &Coreset::full(&a, 2.0)) < 1e-12);
    assert!(distortion_oracle(&a, &Coreset::full(&a, 1.0), 1.0, OracleOptions::default()) < 1e-12);
    let mut c = Coreset::full(&a, 2.0);
    for e in &mut c.entries {
        e.scale = 2f64.sqrt();
    }
    assert!((exact_distortion_l2(&a, &c) - 1.0).abs() < 1e-12);

    let b = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
    let mut cb = Coreset::full(&b, 1.0);
    cb.entries.pop();
    let e = distortion_oracle(&b, &cb, 1.0, OracleOptions { trials: 2000, ..Default::default() });
    assert!((e - 0.5).abs() < 1e-9, "{e}");

    let mut lost = Coreset::full(&a, 2.0);
    lost.entries.truncate(2);
    assert_eq!(exact_distortion_l2(&a, &lost), f64::INFINITY);
    assert_eq!(distortion_oracle(&a, &lost, 1.0, OracleOptions::default()), f64::INFINITY);
}

#[test]
fn kept_count_concentrates() {
    let a = synth::gaussian(3000, 4, 2);
    let probs: Vec<f64> = (0..3000).map(|i| 0.02 + 0.3 * ((i * 37 % 101) as f64 / 100.0)).collect();
    let mean: f64 = probs.iter().sum();
    let good = (0..100)
        .filter(|&s| {
            let c = bernoulli_sample(&a, &probs, 1.0, s).unwrap();
            (c.len() as f64 - mean).abs() <= 4.0 * mean.sqrt()
        })
        .count();
    assert!(good >= 95, "{good}/100");
}

#[test]
fn all_ones_bernoulli_is_identity() {
    let a = synth::gaussian(20, 3, 3);
    let c = bernoulli_sample(&a, &[1.0; 20], 1.5, 9).unwrap();
    assert_eq!(c.entries, Coreset::full(&a, 1.5).entries);
    assert!(bernoulli_sample(&a, &[0.0; 20], 1.0, 9).unwrap().is_empty());
    assert!(bernoulli_sample(&a, &[1.5; 20], 1.0, 9).is_err());
    assert!(bernoulli_sample(&a, &[0.5; 19], 1.0, 9).is_err());
}

#[test]
fn estimator_mode_builds_valid_coresets() {
    let a = synth::gaussian(400, 4, 5);
    let cfg = SamplingConfig::with_constant(1.0, 0.3, 0.1, 0.1).unwrap();
    let c = online_coreset_with_mode(&a, &cfg, 3, WeightMode::Estimator).unwrap();
    c.validate().unwrap();
    assert!(c.len() < 400);
    let cfg3 = SamplingConfig::new(3.0, 0.3, 0.1).unwrap();
    assert!(online_coreset_with_mode(&a, &cfg3, 3, WeightMode::Estimator).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prefix_validity(seed in 0u64..10_000, p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let a = synth::gaussian(600, 4, seed);
        let cfg = SamplingConfig::with_constant(p, 0.3, 0.1, 0.05).unwrap();
        let full = online_coreset(&a, &cfg, seed).unwrap();
        full.validate().unwrap();
        for k in 0..10u64 {
            let cut = 1 + ((seed.wrapping_mul(31).wrapping_add(k * 97)) % 600) as usize;
            let part = online_coreset(&a.slice_rows(0, cut), &cfg, seed).unwrap();
            prop_assert_eq!(&part.entries, &full.prefix(cut).entries);
        }
    }

    #[test]
    fn deterministic_for_a_seed(seed in 0u64..10_000) {
        let a = synth::gaussian(300, 3, seed);
        let cfg = SamplingConfig::with_constant(1.5, 0.3, 0.1, 0.05).unwrap();
        let x = online_coreset(&a, &cfg, seed).unwrap();
        let y = online_coreset(&a, &cfg, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
    }

    #[test]
    fn probabilities_are_monotone(seed in 0u64..10_000, p in prop::sample::select(vec![0.5, 1.0, 1.5, 2.0, 3.0]), c in 0.01f64..2.0) {
        let a = synth::gaussian(100, 3, seed);
        let w = lpcoreset::online::online_lewis_weights(&a, p).unwrap();
        let cfg = SamplingConfig::with_constant(p, 0.3, 0.1, c).unwrap();
        let bigger = SamplingConfig::with_constant(p, 0.3, 0.1, 2.0 * c).unwrap();
        let t = w.sum();
        let base = sample_probabilities(&w, &cfg, 100, 3, t);
        let doubled = sample_probabilities(&w.scaled(2.0), &cfg, 100, 3, t);
        let more_c = sample_probabilities(&w, &bigger, 100, 3, t);
        for i in 0..100 {
            prop_assert!(base[i] > 0.0 && base[i] <= 1.0);
            prop_assert!(doubled[i] >= base[i]);
            prop_assert!(more_c[i] >= base[i]);
        }
        prop_assert!(doubled.iter().sum::<f64>() >= base.iter().sum::<f64>());
    }

    #[test]
    fn randomized_oracle_never_exceeds_exact(seed in 0u64..10_000) {
        let a = synth::gaussian(300, 3, seed);
        let cfg = SamplingConfig::with_constant(2.0, 0.3, 0.1, 0.02).unwrap();
        let c = online_coreset(&a, &cfg, seed).unwrap();
        let exact = exact_distortion_l2(&a, &c);
        let lower = randomized_distortion(&a, &c, 2.0, OracleOptions { trials: 500, seed, ..Default::default() });
        prop_assert!(lower <= exact + 1e-9, "{lower} > {exact}");
        prop_assert!(lower >= 0.5 * exact, "{lower} far below {exact}");
    }

    #[test]
    fn scales_match_probabilities(seed in 0u64..10_000, p in prop::sample::select(vec![0.5, 1.0, 3.0])) {
        let a = synth::gaussian(200, 3, seed);
        let mut b = OnlineCoreset::new(3, SamplingConfig::with_constant(p, 0.3, 0.1, 0.01).unwrap(), seed).unwrap();
        for r in a.rows_iter() {
            let dec = b.push(r).unwrap();
            prop_assert!(dec.prob > 0.0 && dec.prob <= 1.0);
        }
        for e in b.coreset().entries {
            prop_assert!((e.scale - e.prob.powf(-1.0 / p)).abs() <= 1e-12 * e.scale);
        }
    }
}

#[test]
fn sample_probabilities_cap_at_one() {
    let w = WeightVector::new(2.0, vec![1.0, 0.5, 1e-9], 1.0);
    let cfg = SamplingConfig::new(2.0, 0.3, 0.1).unwrap();
    let p = sample_probabilities(&w, &cfg, 1000, 3, 1.5);
    assert_eq!(p[0], 1.0);
    assert_eq!(p[1], 1.0);
    assert!(p[2] < 1.0 && p[2] > 0.0);
}
