use pool_core::branching::*;
use pool_core::geomfield::RngStream;
use pool_core::stats::fits::cascade_tail_fit;
use pool_core::stats::Verdict;
use proptest::prelude::*;

/// Total-progeny law by brute force: sum over breadth-first offspring
/// sequences `c_1..c_n` that close the tree exactly at node `n`.
fn enumerate_tree_prob(n: usize) -> f64 {
    let p = |c: usize| (-1.0f64).exp() / (1..=c).map(|k| k as f64).product::<f64>();
    fn walk(n: usize, depth: usize, open: i64, prob: f64, p: &dyn Fn(usize) -> f64) -> f64 {
        if depth == n {
            return if open == 0 { prob } else { 0.0 };
        }
        if open <= 0 {
            return 0.0;
        }
        (0..n).map(|c| walk(n, depth + 1, open - 1 + c as i64, prob * p(c), p)).sum()
    }
    walk(n, 0, 1, 1.0, &p)
}

#[test]
fn borel_matches_tree_enumeration() {
    for n in 1..=6 {
        let e = enumerate_tree_prob(n);
        let b = borel_pmf(n as u64).unwrap();
        assert!((e - b).abs() < 1e-12, "n={n}: {e} vs {b}");
    }
}

#[test]
fn extinction_matches_plain_iteration() {
    let mut q = 0.0f64;
    for _ in 0..200_000 {
        q = (1.5 * (q - 1.0)).exp();
    }
    let got = extinction_prob(1.5).unwrap();
    assert!((got - q).abs() < 1e-10);
    assert!((got - 0.417188).abs() < 1e-6);
    let bound = survival_lower_bound(1.5).unwrap();
    assert!((bound - (1.0 - (-1.0f64).exp()) * (1.0 - q)).abs() < 1e-10);
    // (1 - 1/e) * 0.582812 = 0.368407
    assert!((bound - 0.368407).abs() < 1e-5);
}

#[test]
fn critical_progeny_zero_class_and_tail() {
    let params = GwParams::new(1.0, 1.0).unwrap();
    let mut rng = RngStream::new(11, 0);
    let n = 100_000;
    let samples: Vec<u64> = (0..n).map(|_| sample_total_progeny(&params, 10_000_000, &mut rng).0).collect();
    let zero = samples.iter().filter(|&&x| x == 0).count() as f64 / n as f64;
    assert!((zero - (-1.0f64).exp()).abs() < 0.005, "{zero}");
    // survival slope over [10, 1000], fitted directly
    let surv = |v: u64| samples.iter().filter(|&&x| x >= v).count() as f64 / n as f64;
    let pts: Vec<(f64, f64)> = [10u64, 20, 50, 100, 200, 500, 1000]
        .iter()
        .map(|&v| ((v as f64).ln(), surv(v).ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.1, "{slope}");
    let fit = cascade_tail_fit(&samples).unwrap();
    assert_eq!(fit.verdict, Verdict::Pass, "{fit:?}");
}

#[test]
fn subcritical_progeny_never_hits_cap() {
    let params = GwParams::new(0.5, 0.5).unwrap();
    let mut rng = RngStream::new(12, 0);
    assert!((0..100_000).all(|_| !sample_total_progeny(&params, 10_000_000, &mut rng).1));
}

#[test]
fn tiny_root_mean_gives_empty_progeny() {
    let params = GwParams::new(1.0, 1e-300).unwrap();
    let mut rng = RngStream::new(13, 0);
    assert_eq!(sample_total_progeny(&params, 10, &mut rng), (0, false));
    assert!(GwParams::new(0.0, 1.0).is_err());
}

#[test]
fn dominating_path_invariants() {
    let cfg = DominatingConfig::new(2.5, 2000);
    let t = dominating_trajectory(&cfg).unwrap();
    assert_eq!(t.events.len(), 2001);
    let mut mass = 1;
    for w in t.events.windows(2) {
        assert!(w[1].time > w[0].time);
        assert!(w[1].radius_after >= w[0].radius_after);
    }
    for e in &t.events {
        mass += e.absorbed();
        assert_eq!(mass, e.mass_after);
        assert_eq!(e.radius_after, (e.mass_after as f64 / std::f64::consts::PI).sqrt());
    }
    let zero = dominating_trajectory(&DominatingConfig::new(1.0, 0)).unwrap();
    assert_eq!(zero.events.len(), 1);
    assert!(dominating_trajectory(&DominatingConfig::new(0.0, 5)).is_err());
}

#[test]
fn capped_progeny_ends_the_path() {
    let mut cfg = DominatingConfig::new(1.0, 10_000);
    cfg.progeny_cap = 5;
    let t = dominating_trajectory(&cfg).unwrap();
    assert!(t.exploded_at.is_some());
    assert!(t.events.len() < 10_001);
    assert!(t.events.last().unwrap().exploded);
}

proptest! {
    #[test]
    fn forced_inputs_follow_the_time_formula(xs in prop::collection::vec(1u64..50, 1..20), c in 0.1f64..5.0) {
        let ts: Vec<f64> = (0..xs.len()).map(|k| 0.5 + k as f64).collect();
        let t = dominating_from_inputs(&xs, &ts, c).unwrap();
        let mut tau = 0.0;
        let mut sum = 0u64;
        for (k, &x) in xs.iter().enumerate() {
            if k > 0 {
                tau += ts[k - 1] / (c * (sum as f64 / std::f64::consts::PI).sqrt());
            }
            sum += x;
            prop_assert!((t.events[k].time - tau).abs() <= 1e-9 * tau.max(1.0));
            prop_assert_eq!(t.events[k].mass_after, sum);
        }
    }

    #[test]
    fn extinction_is_a_fixed_point(lambda in 1.01f64..8.0) {
        let q = extinction_prob(lambda).unwrap();
        prop_assert!(((lambda * (q - 1.0)).exp() - q).abs() < 1e-12);
        prop_assert!(q > 0.0 && q < 1.0);
    }
}
