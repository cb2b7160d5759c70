use mtcp::graphical::{sample_events, EventKind};
use mtcp::stats::ks_one_sample;
use mtcp::topology::Topology;

#[test]
fn event_count_mean_matches_poisson_rate() {
    let topo = Topology::tree_ball(2, 2).unwrap();
    let (n, e) = (topo.site_count() as f64, topo.directed_edge_count() as f64);
    let (l2, horizon) = (1.5, 2.0);
    let expected = n * horizon + e * l2 * horizon;
    let seeds = 1000;
    let total: usize = (0..seeds).map(|s| sample_events(&topo, 0.5, l2, horizon, s).unwrap().len()).sum();
    let mean = total as f64 / seeds as f64;
    let sd_of_mean = (expected / seeds as f64).sqrt();
    assert!((mean - expected).abs() <= 3.0 * sd_of_mean, "mean {mean}, expected {expected}");
}

#[test]
fn two_only_fraction_matches_rate_ratio() {
    let topo = Topology::torus(2, 6).unwrap();
    let (l1, l2) = (0.7, 2.0);
    let (mut labeled, mut arrows) = (0u64, 0u64);
    for seed in 0..40 {
        let log = sample_events(&topo, l1, l2, 5.0, seed).unwrap();
        for ev in log.events() {
            if let EventKind::Arrow { two_only, .. } = ev.kind {
                arrows += 1;
                labeled += u64::from(two_only);
            }
        }
    }
    let p = 1.0 - l1 / l2;
    let se = (p * (1.0 - p) / arrows as f64).sqrt();
    let frac = labeled as f64 / arrows as f64;
    assert!(arrows > 10_000);
    assert!((frac - p).abs() <= 3.0 * se, "fraction {frac}, expected {p}");
}

fn gaps(times: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut last = 0.0;
    times
        .into_iter()
        .map(|t| {
            let g = t - last;
            last = t;
            g
        })
        .collect()
}

#[test]
fn inter_arrival_times_are_exponential() {
    let topo = Topology::torus(1, 50).unwrap();
    let l2 = 2.0;
    let log = sample_events(&topo, 1.0, l2, 60.0, 11).unwrap();
    let mut death_gaps = Vec::new();
    for x in 0..topo.site_count() {
        death_gaps.extend(gaps(log.deaths(x).iter().copied()));
    }
    let mut arrow_gaps = Vec::new();
    for edge in 0..topo.directed_edge_count() {
        arrow_gaps.extend(gaps(log.arrows(edge).iter().map(|a| a.time)));
    }
    // The last gap of each stream runs to the next point beyond the horizon,
    // so the interior gaps are exact exponential samples; the pooled sample
    // is large enough that this censoring is irrelevant at 1e-3.
    assert!(death_gaps.len() >= 2_500 && arrow_gaps.len() >= 10_000);
    let ks = ks_one_sample(&death_gaps, |g| 1.0 - (-g).exp());
    assert!(ks.p_value > 1e-3, "deaths: {ks:?}");
    let ks = ks_one_sample(&arrow_gaps, |g| 1.0 - (-l2 * g).exp());
    assert!(ks.p_value > 1e-3, "arrows: {ks:?}");
}

#[test]
fn timestamps_are_distinct_and_sorted() {
    for seed in 0..50 {
        let topo = Topology::torus(2, 5).unwrap();
        let log = sample_events(&topo, 1.0, 3.0, 4.0, seed).unwrap();
        assert!(log.events().windows(2).all(|w| w[0].time < w[1].time));
        assert!(log.events().iter().all(|e| e.time > 0.0 && e.time <= 4.0));
    }
}
