use pool_core::boxsim::{run_box, BoxConfig};
use pool_core::exact::{run_exact, ExactConfig};
use pool_core::traj::*;
use pool_core::trajectory::{Event, EventKind, Trajectory};
use proptest::prelude::*;

/// Grid scan for the first stall of `t^0.6` sampled every 0.1, computed
/// without the step-path lookup.
fn power_path_oracle(t0: f64, beta: f64, end: f64) -> Option<f64> {
    let n = (end / 0.1).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * 0.1).collect();
    let value = |s: f64| -> f64 {
        let mut v = 0.0;
        for &t in &times {
            if t <= s {
                v = t.powf(0.6);
            } else {
                break;
            }
        }
        v
    };
    let mut grid: Vec<f64> = times.iter().copied().filter(|&t| t > t0).collect();
    grid.extend(((t0.floor() as u64 + 1)..=(end.floor() as u64)).map(|k| k as f64));
    grid.sort_by(f64::total_cmp);
    grid.into_iter().find(|&t| value(t - t.powf(beta)) >= value(t) - 2.0)
}

#[test]
fn stall_on_power_path_matches_scan() {
    let beta = 1.0 / 9.6;
    let path = StepPath::sampled(|t| t.powf(0.6), 0.1, 400.0);
    let p = StallParams { alpha: 0.6, beta, t0: 100.0 };
    let got = find_stall_path(&path, &p).unwrap().unwrap();
    assert_eq!(Some(got), power_path_oracle(100.0, beta, 400.0));
    assert!(is_stall(&path, got, beta));
    assert!(got > 100.0);
}

#[test]
fn stall_for_steep_path_self_checks() {
    let path = StepPath::sampled(|t| t, 0.1, 1000.0);
    let p = StallParams { alpha: 0.5, beta: 0.1, t0: 1.0 };
    if let Some(t) = find_stall_path(&path, &p).unwrap() {
        assert!(is_stall(&path, t, 0.1));
        assert!(t.powf(0.1) <= 2.0 + 0.1 + 1e-9);
    }
}

#[test]
fn audit_passes_on_engine_runs() {
    let mut cfg = ExactConfig::new(1.2, 30.0, 40.0, 15.0);
    cfg.cap = 5000;
    for replica in 0..3 {
        cfg.replica = replica;
        let run = run_exact(&cfg).unwrap();
        assert!(mass_audit(&run.trajectory).passed());
        assert_eq!(run.trajectory.final_mass(), run.released + 1);
    }
    let mut b = BoxConfig::new(1.0, 200.0);
    b.box_side = 16.0;
    b.cap = 100_000;
    let run = run_box(&b).unwrap();
    assert_eq!(run.trajectory.events.last().unwrap().kind, EventKind::BoundaryHit);
    assert!(mass_audit(&run.trajectory).passed());
}

#[test]
fn audit_names_corrupted_event() {
    let mut t = Trajectory::new(10.0);
    t.push(Event::new(0.0, EventKind::InitialCascade, 3, vec![2], false));
    t.push(Event::new(1.0, EventKind::Arrival, 5, vec![1, 1], false));
    t.push(Event::new(2.0, EventKind::Arrival, 6, vec![1], false));
    t.events[2].radius_after *= 1.0 + 1e-12;
    let r = mass_audit(&t);
    assert!(!r.passed());
    assert_eq!(r.get("first_bad_event"), Some(2.0));
}

#[test]
fn ensemble_of_engine_runs_has_monotone_median() {
    let mut cfg = ExactConfig::new(0.5, 50.0, 45.0, 10.0);
    let runs: Vec<Trajectory> = (0..5)
        .map(|r| {
            cfg.replica = r;
            run_exact(&cfg).unwrap().trajectory
        })
        .collect();
    let times: Vec<f64> = (0..=50).map(|t| t as f64).collect();
    let q = ensemble_quantiles(&runs, &times).unwrap();
    assert!(q.q50.windows(2).all(|w| w[1] >= w[0]));
}

fn random_traj() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec((0.01f64..3.0, prop::collection::vec(1u64..4, 1..3)), 0..30).prop_map(|steps| {
        let mut t = Trajectory::new(100.0);
        t.push(Event::new(0.0, EventKind::InitialCascade, 1, vec![], false));
        let (mut time, mut mass) = (0.0, 1);
        for (dt, rounds) in steps {
            time += dt;
            mass += rounds.iter().sum::<u64>();
            t.push(Event::new(time, EventKind::Arrival, mass, rounds, false));
        }
        t
    })
}

proptest! {
    #[test]
    fn stall_is_monotone_in_t0(t in random_traj(), a in 0.0f64..50.0, b in 0.0f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = |t0| StallParams { alpha: 0.5, beta: 0.3, t0 };
        let x = find_stall(&t, &p(lo)).unwrap();
        let y = find_stall(&t, &p(hi)).unwrap();
        if let (Some(x), Some(y)) = (x, y) {
            prop_assert!(y >= x);
        }
        if let Some(y) = y {
            prop_assert!(is_stall(&StepPath::from_trajectory(&t), y, 0.3));
        }
    }

    #[test]
    fn extreme_quantiles_are_min_and_max(ts in prop::collection::vec(random_traj(), 1..6)) {
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.7).collect();
        let q = ensemble_quantiles(&ts, &times).unwrap();
        for (i, &s) in times.iter().enumerate() {
            let vals: Vec<f64> = ts.iter().map(|t| t.radius_at(s)).collect();
            prop_assert_eq!(q.min[i], vals.iter().copied().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(q.max[i], vals.iter().copied().fold(0.0, f64::max));
        }
    }

    #[test]
    fn audit_passes_on_consistent_paths(t in random_traj()) {
        prop_assert!(mass_audit(&t).passed());
    }
}
