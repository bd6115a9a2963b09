use std::collections::BinaryHeap;
use std::cmp::Reverse;

use pool_core::engulf::{cascade, radius_from_mass};
use pool_core::exact::{run_exact, run_exact_from, ExactConfig, Scheduler, StopReason};
use pool_core::geomfield::{exp1, gaussian_jump, sample_ppp_annulus, tags, Annulus, Point2, RngStream};
use pool_core::trajectory::{EventKind, Trajectory};

/// Straightforward reference: every jump goes through the queue and every
/// cascade rescans all active walkers.
fn reference(cfg: &ExactConfig) -> Trajectory {
    let mut field_rng = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::FIELD);
    let mut pos =
        sample_ppp_annulus(cfg.lambda, &Annulus::disk(cfg.sim_radius).unwrap(), &mut field_rng).unwrap();
    let mut walk = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::WALKERS);
    let mut rngs: Vec<_> = pos.iter().map(|_| walk.walker_rng()).collect();
    let n = pos.len();
    let mut active = vec![true; n];
    let mut t_next: Vec<f64> = rngs.iter_mut().map(|r| exp1(r)).collect();
    let mut traj = Trajectory::new(cfg.horizon);

    let listing = |active: &[bool], pos: &[Point2]| -> Vec<(u64, Point2)> {
        (0..pos.len()).filter(|&i| active[i]).map(|i| (i as u64, pos[i])).collect()
    };
    let init = cascade(&listing(&active, &pos), 1, 0.0, cfg.cap).unwrap();
    for &a in &init.absorbed_ids {
        active[a as usize] = false;
    }
    let mut mass = init.final_mass;
    traj.push(pool_core::trajectory::Event::new(
        0.0,
        EventKind::InitialCascade,
        mass,
        init.rounds.clone(),
        init.exploded,
    ));
    if init.exploded {
        return traj;
    }
    let mut heap: BinaryHeap<Reverse<(u64, u32)>> = BinaryHeap::new();
    // times are positive, so their bit patterns order like the values
    for i in 0..n {
        if active[i] {
            heap.push(Reverse((t_next[i].to_bits(), i as u32)));
        }
    }
    while let Some(Reverse((bits, i))) = heap.pop() {
        let t = f64::from_bits(bits);
        let i = i as usize;
        if t > cfg.horizon {
            break;
        }
        if !active[i] {
            continue;
        }
        pos[i] = pos[i] + gaussian_jump(&mut rngs[i]);
        let r_old = radius_from_mass(mass).unwrap();
        if pos[i].norm_sq() <= mass as f64 / std::f64::consts::PI {
            active[i] = false;
            if mass + 1 > cfg.cap {
                mass += 1;
                traj.push(pool_core::trajectory::Event::new(t, EventKind::CapHit, mass, vec![1], true));
                break;
            }
            let res = cascade(&listing(&active, &pos), mass + 1, r_old, cfg.cap).unwrap();
            for &a in &res.absorbed_ids {
                active[a as usize] = false;
            }
            mass = res.final_mass;
            let mut rounds = vec![1];
            rounds.extend_from_slice(&res.rounds);
            let kind = if res.exploded { EventKind::CapHit } else { EventKind::Arrival };
            traj.push(pool_core::trajectory::Event::new(t, kind, mass, rounds, res.exploded));
            if res.exploded {
                break;
            }
        } else {
            t_next[i] = t + exp1(&mut rngs[i]);
            heap.push(Reverse((t_next[i].to_bits(), i as u32)));
        }
    }
    traj
}

fn config(lambda: f64, horizon: f64, sim_radius: f64, seed: u64) -> ExactConfig {
    let mut cfg = ExactConfig::new(lambda, horizon, sim_radius, sim_radius * 0.5);
    cfg.master_seed = seed;
    cfg.audit = true;
    cfg
}

#[test]
fn engine_matches_reference_simulation() {
    let cases = [
        (0.5, 40.0, 25.0, 1u64),
        (1.0, 20.0, 25.0, 2),
        (1.0, 30.0, 30.0, 3),
        (1.3, 10.0, 30.0, 4),
        (1.6, 5.0, 30.0, 5),
    ];
    for (lambda, horizon, r, seed) in cases {
        for replica in 0..3 {
            let mut cfg = config(lambda, horizon, r, seed);
            cfg.replica = replica;
            cfg.cap = 1500;
            let fast = run_exact(&cfg).unwrap();
            let slow = reference(&cfg);
            assert_eq!(fast.trajectory, slow, "lambda {lambda} seed {seed} replica {replica}");
            assert_eq!(fast.emptiness_violations, Some(0));
        }
    }
}

#[test]
fn empty_field_gives_single_initial_event() {
    let cfg = config(1e-9, 10.0, 3.0, 0);
    let run = run_exact(&cfg).unwrap();
    assert_eq!(run.initial_count, 0);
    assert_eq!(run.trajectory.events.len(), 1);
    assert_eq!(run.trajectory.events[0].kind, EventKind::InitialCascade);
    assert_eq!(run.trajectory.final_mass(), 1);
    assert_eq!(run.stop, StopReason::Exhausted);
}

#[test]
fn mass_identity_and_monotone_radius() {
    let run = run_exact(&config(0.8, 50.0, 40.0, 9)).unwrap();
    let events = &run.trajectory.events;
    let mut mass = 1;
    for w in events.windows(2) {
        assert!(w[1].time > w[0].time);
        assert!(w[1].radius_after >= w[0].radius_after);
    }
    for e in events {
        mass += e.absorbed();
        assert_eq!(e.mass_after, mass);
        assert_eq!(e.radius_after, radius_from_mass(e.mass_after).unwrap());
    }
    assert_eq!(run.released + 1, run.trajectory.final_mass());
    assert!(events.len() > 5);
}

#[test]
fn deterministic_serialization() {
    let cfg = config(1.0, 15.0, 30.0, 77);
    let a = serde_json::to_string(&run_exact(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_exact(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn raising_the_cap_keeps_earlier_events() {
    for replica in 0..4 {
        let mut small = config(1.5, 10.0, 30.0, 21);
        small.replica = replica;
        small.cap = 200;
        let mut big = small.clone();
        big.cap = 100_000;
        let a = run_exact(&small).unwrap().trajectory;
        let b = run_exact(&big).unwrap().trajectory;
        let cut = a.exploded_at.unwrap_or(f64::INFINITY);
        let before_a: Vec<_> = a.events.iter().filter(|e| e.time < cut).collect();
        let before_b: Vec<_> = b.events.iter().filter(|e| e.time < cut).collect();
        assert_eq!(before_a, before_b);
    }
}

#[test]
fn static_particles_give_rate_n_event_stream() {
    let n = 1000u32;
    let mut rng = RngStream::new(5, 0);
    let mut s = Scheduler::new();
    for id in 0..n {
        s.schedule(id, exp1(&mut rng));
    }
    let mut count = 0u64;
    while let Some((t, id)) = s.next_event() {
        if t > 100.0 {
            break;
        }
        count += 1;
        s.schedule(id, t + exp1(&mut rng));
    }
    let rate = count as f64 / 100.0;
    assert!((rate / n as f64 - 1.0).abs() < 0.02, "rate {rate}");
}

#[test]
fn far_walker_arrives_exactly_when_reference_does() {
    // A lone walker far from the pool: the fast-forward path must reproduce
    // the step-by-step path of the same generator.
    let mut cfg = config(1.0, 400.0, 30.0, 3);
    cfg.target_radius_hint = 5.0;
    let run = run_exact_from(&cfg, vec![Point2::new(12.0, 0.0)]).unwrap();
    let mut walk = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::WALKERS);
    let mut rng = walk.walker_rng();
    let mut t = exp1(&mut rng);
    let mut p = Point2::new(12.0, 0.0);
    let r0_sq = 1.0 / std::f64::consts::PI;
    let mut hit = None;
    while t <= cfg.horizon {
        p = p + gaussian_jump(&mut rng);
        if p.norm_sq() <= r0_sq {
            hit = Some(t);
            break;
        }
        t += exp1(&mut rng);
    }
    assert_eq!(run.trajectory.arrival_times().first().copied(), hit);
}
