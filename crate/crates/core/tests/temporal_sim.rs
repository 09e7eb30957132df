use detect_lab::rng::stream;
use detect_lab::temporal_sim::*;
use proptest::prelude::*;

#[test]
fn poisson_counts_follow_the_rates() {
    let (n, mu, delta, k, tau, horizon) = (6usize, 0.5, 1.5, 3usize, 100.0, 300.0);
    let s = simulate_poisson_network(n, mu, delta, k, tau, horizon, 11).unwrap();
    s.validate().unwrap();
    assert_eq!(s.planted.len(), k);
    let inside = s.internal_pairs();
    let mut after_in = 0usize;
    let mut before_in = 0usize;
    let mut outside = 0usize;
    for (&(i, j), ts) in &s.events {
        if inside.contains(&(i, j)) {
            after_in += ts.iter().filter(|&&t| t >= tau).count();
            before_in += ts.iter().filter(|&&t| t < tau).count();
        } else {
            outside += ts.len();
        }
    }
    let pairs_in = inside.len() as f64;
    let pairs_out = (n * (n - 1)) as f64 - pairs_in;
    let check = |count: usize, mean: f64| assert!((count as f64 - mean).abs() < 4.0 * mean.sqrt(), "{count} vs {mean}");
    check(after_in, pairs_in * (mu + delta) * (horizon - tau));
    check(before_in, pairs_in * mu * tau);
    check(outside, pairs_out * mu * horizon);
}

#[test]
fn hawkes_rate_matches_stationary_mean() {
    let kernel = HawkesKernel::new(0.5, 2.0).unwrap();
    let mut rng = stream(5, &[1]);
    let horizon = 20_000.0;
    let ts = simulate_hawkes_pair(0.4, kernel, 0.0, None, horizon, &mut rng);
    let rate = ts.len() as f64 / horizon;
    let want = kernel.stationary_rate(0.4, 1.0);
    assert!((rate - want).abs() / want < 0.05, "{rate} vs {want}");
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn hawkes_boost_raises_the_rate() {
    let kernel = HawkesKernel::new(0.4, 1.0).unwrap();
    let mut rng = stream(6, &[1]);
    let ts = simulate_hawkes_pair(0.5, kernel, 1.0, Some(5000.0), 10_000.0, &mut rng);
    let before = ts.iter().filter(|&&t| t < 5000.0).count() as f64 / 5000.0;
    let after = ts.iter().filter(|&&t| t >= 5000.0).count() as f64 / 5000.0;
    assert!((before - kernel.stationary_rate(0.5, 1.0)).abs() < 0.06);
    assert!((after - kernel.stationary_rate(0.5, 2.0)).abs() < 0.2);
}

#[test]
fn hawkes_stability_is_enforced() {
    assert!(matches!(HawkesKernel::new(1.0, 1.0), Err(detect_lab::Error::Stability(_))));
    let k = HawkesKernel::new(0.6, 1.0).unwrap();
    assert!(k.check_inflation(0.5).is_ok());
    assert!(k.check_inflation(0.7).is_err());
}

#[test]
fn hawkes_likelihood_prefers_the_true_kernel() {
    let kernel = HawkesKernel::new(0.6, 1.5).unwrap();
    let mut rng = stream(8, &[2]);
    let ts = simulate_hawkes_pair(0.3, kernel, 0.0, None, 5000.0, &mut rng);
    let at_truth = hawkes_log_likelihood(&ts, 0.3, kernel, 1.0, 5000.0);
    let poisson = hawkes_log_likelihood(&ts, 0.3, HawkesKernel::new(0.0, 1.5).unwrap(), 1.0, 5000.0);
    assert!(at_truth > poisson);
}

#[test]
fn csv_and_metadata_round_trip() {
    let s = simulate_poisson_network(4, 1.0, 2.0, 2, 10.0, 40.0, 3).unwrap();
    let mut buf = Vec::new();
    write_events_csv(&mut buf, &s).unwrap();
    let rows = read_events_csv(buf.as_slice()).unwrap();
    let meta: EventMetadata = serde_json::from_str(&serde_json::to_string(&s.metadata()).unwrap()).unwrap();
    let back = EventStream::from_parts(meta, &rows).unwrap();
    assert_eq!(back, s);
}

#[test]
fn bad_event_rows_are_rejected() {
    assert!(read_events_csv("a,b,c\n".as_bytes()).is_err());
    assert!(read_events_csv("src,dst,t\n0,1,x\n".as_bytes()).is_err());
    let meta = simulate_poisson_network(3, 1.0, 0.0, 0, 0.0, 5.0, 1).unwrap().metadata();
    assert!(EventStream::from_parts(meta.clone(), &[(0, 0, 1.0)]).is_err());
    assert!(EventStream::from_parts(meta, &[(0, 1, 9.0)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn thinning_keeps_a_subset(eps in 0.0f64..0.9, seed in any::<u64>()) {
        let s = simulate_poisson_network(4, 2.0, 0.0, 0, 0.0, 30.0, seed).unwrap();
        let t = s.thinned(eps, seed ^ 7).unwrap();
        prop_assert!(t.validate().is_ok());
        prop_assert!(t.total_events() <= s.total_events());
        for (pair, ts) in &t.events {
            let orig = s.pair_events(pair.0, pair.1);
            prop_assert!(ts.iter().all(|x| orig.contains(x)));
        }
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>()) {
        let a = simulate_poisson_network(5, 0.7, 0.9, 3, 4.0, 20.0, seed).unwrap();
        let b = simulate_poisson_network(5, 0.7, 0.9, 3, 4.0, 20.0, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ordered_pairs_count(k in 0usize..12) {
        let set: Vec<usize> = (0..k).collect();
        prop_assert_eq!(ordered_pairs(&set).len(), k * k.saturating_sub(1));
    }
}
