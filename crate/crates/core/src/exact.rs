//! Exact event-driven simulation on a truncated initial field.
//!
//! Walkers jump at the times of independent rate-1 clocks by standard
//! Gaussian steps. A jump landing in the pool is an arrival: the walker's unit
//! mass is added and the cascade runs over the remaining active walkers.

use serde::{Deserialize, Serialize};

use crate::engulf::{pool_radius, radius_sq, DEFAULT_CAP};
use crate::error::{invalid, Result};
use crate::geomfield::{exp1, gaussian_jump, sample_ppp_annulus, tags, Annulus, Point2, RngStream, WalkRng};
use crate::quad::integrate_tail;
use crate::swarm::{zone_radius, Motion, Queue, Swarm};
use crate::trajectory::{Event, EventKind, Trajectory};

pub use crate::swarm::Scheduler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactConfig {
    pub lambda: f64,
    pub horizon: f64,
    pub sim_radius: f64,
    pub cap: u64,
    pub master_seed: u64,
    pub replica: u64,
    /// Radius the pool is not expected to exceed; the truncation bound is
    /// certified only while the pool stays inside it.
    pub target_radius_hint: f64,
    /// Check after every event that no near walker sits inside the pool.
    #[serde(default)]
    pub audit: bool,
}

impl ExactConfig {
    pub fn new(lambda: f64, horizon: f64, sim_radius: f64, target_radius_hint: f64) -> Self {
        Self {
            lambda,
            horizon,
            sim_radius,
            cap: DEFAULT_CAP,
            master_seed: 0,
            replica: 0,
            target_radius_hint,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            errs.push("lambda > 0".to_string());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            errs.push("horizon > 0".to_string());
        }
        if !(self.sim_radius.is_finite() && self.sim_radius > 0.0) {
            errs.push("sim_radius > 0".to_string());
        }
        if self.cap == 0 {
            errs.push("cap >= 1".to_string());
        }
        let r0 = pool_radius(1);
        if !(self.target_radius_hint >= r0) {
            errs.push(format!("target_radius_hint >= 1/sqrt(pi) ({r0:.6})"));
        }
        if !(self.sim_radius > self.target_radius_hint) {
            errs.push("sim_radius > target_radius_hint".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!("violated: {}", errs.join(", "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Horizon,
    Cap,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRun {
    pub trajectory: Trajectory,
    pub truncation_bound: f64,
    pub initial_count: u64,
    pub released: u64,
    pub stop: StopReason,
    /// First time the pool radius exceeded `target_radius_hint`.
    pub hint_exceeded_at: Option<f64>,
    /// Number of events after which a walker was found inside the pool
    /// (only counted when `audit` is set).
    pub emptiness_violations: Option<u64>,
}

struct Jumps;

impl Motion for Jumps {
    #[inline]
    fn step(&self, pos: Point2, rng: &mut WalkRng) -> Point2 {
        pos + gaussian_jump(rng)
    }
    #[inline]
    fn gap(&self, rng: &mut WalkRng) -> f64 {
        exp1(rng)
    }
}

pub(crate) fn grid_cell(lambda: f64) -> f64 {
    (2.0 / lambda.max(1e-12)).sqrt().clamp(0.5, 8.0)
}

pub fn run_exact(cfg: &ExactConfig) -> Result<ExactRun> {
    cfg.validate()?;
    let mut field_rng = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::FIELD);
    let disk = Annulus::disk(cfg.sim_radius)?;
    let positions = sample_ppp_annulus(cfg.lambda, &disk, &mut field_rng)?;
    run_exact_from(cfg, positions)
}

/// Run the engine on an explicit initial field (ids follow the given order).
pub fn run_exact_from(cfg: &ExactConfig, positions: Vec<Point2>) -> Result<ExactRun> {
    cfg.validate()?;
    let initial_count = positions.len() as u64;
    let mut walk_rng = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::WALKERS);
    let mut swarm = Swarm::new(
        Jumps,
        cfg.horizon,
        positions,
        Queue::Heap(Scheduler::new()),
        || walk_rng.walker_rng(),
        grid_cell(cfg.lambda),
        f64::INFINITY,
        f64::INFINITY,
    );
    let mut traj = Trajectory::new(cfg.horizon);
    let mut hint_exceeded_at = None;
    let mut violations = cfg.audit.then_some(0u64);
    let hint_sq = cfg.target_radius_hint * cfg.target_radius_hint;

    let init = crate::engulf::cascade_in(&swarm.initial_field(), 1, 0.0, cfg.cap.max(1));
    for &id in &init.absorbed_ids {
        swarm.release(id as u32);
    }
    let mut mass = init.final_mass;
    let mut stop = StopReason::Horizon;
    traj.push(Event::new(0.0, EventKind::InitialCascade, mass, init.rounds, init.exploded));
    if radius_sq(mass) > hint_sq {
        hint_exceeded_at = Some(0.0);
    }
    if init.exploded {
        stop = StopReason::Cap;
    } else {
        swarm.classify(zone_radius(pool_radius(mass)));
        let mut buf = Vec::new();
        loop {
            if swarm.active() == 0 {
                stop = StopReason::Exhausted;
                break;
            }
            let Some((t, id)) = swarm.next_until(cfg.horizon) else {
                break;
            };
            let pos = swarm.apply_move(id);
            if pos.norm_sq() > radius_sq(mass) {
                swarm.settle(id);
                continue;
            }
            swarm.release(id);
            let res = swarm.cascade(t, mass + 1, radius_sq(mass), cfg.cap);
            for &a in &res.absorbed_ids {
                swarm.release(a as u32);
            }
            mass = res.final_mass;
            let mut rounds = Vec::with_capacity(res.rounds.len() + 1);
            rounds.push(1);
            rounds.extend_from_slice(&res.rounds);
            let kind = if res.exploded { EventKind::CapHit } else { EventKind::Arrival };
            traj.push(Event::new(t, kind, mass, rounds, res.exploded));
            if hint_exceeded_at.is_none() && radius_sq(mass) > hint_sq {
                hint_exceeded_at = Some(t);
            }
            if res.exploded {
                stop = StopReason::Cap;
                break;
            }
            swarm.ensure_margin(t, pool_radius(mass));
            if let Some(v) = violations.as_mut() {
                buf.clear();
                crate::engulf::RadialField::collect_shell(swarm.grid(), -1.0, radius_sq(mass), &mut buf);
                if !buf.is_empty() {
                    *v += 1;
                }
            }
        }
    }
    Ok(ExactRun {
        trajectory: traj,
        truncation_bound: truncation_error_bound(cfg),
        initial_count,
        released: mass - 1,
        stop,
        hint_exceeded_at,
        emptiness_violations: violations,
    })
}

/// Jump budget used by the truncation bound: `ceil(2T + 10 sqrt(T) + 10)`.
pub fn jump_budget(horizon: f64) -> f64 {
    (2.0 * horizon + 10.0 * horizon.sqrt() + 10.0).ceil()
}

/// Bound on the chance that a walker starting at distance `d` from the origin
/// enters `B(hint)` within `horizon`: either it jumps more than `k` times, or
/// one of its first `k` partial sums travels at least `d - hint`. The budget
/// `k` grows like `(d - hint) / 4` so the first term stays integrable over the
/// plane while the second still decays like `exp(-2 (d - hint))`.
pub fn entry_bound(d: f64, horizon: f64, hint: f64) -> f64 {
    let a = d - hint;
    if a <= 0.0 {
        return 1.0;
    }
    let k = jump_budget(horizon).max((a / 4.0).ceil());
    let many_jumps = if horizon > 0.0 {
        statrs::function::gamma::gamma_lr(k + 1.0, horizon)
    } else {
        0.0
    };
    (many_jumps + k * (-a * a / (2.0 * k)).exp()).min(1.0)
}

/// Union bound over walkers initially outside `B(sim_radius)`.
pub fn truncation_bound(lambda: f64, horizon: f64, sim_radius: f64, hint: f64) -> f64 {
    let chunk = jump_budget(horizon).sqrt().max(1.0);
    let integrand = |d: f64| 2.0 * std::f64::consts::PI * d * entry_bound(d, horizon, hint);
    (lambda * integrate_tail(integrand, sim_radius, chunk, 1e-9)).min(1.0)
}

pub fn truncation_error_bound(cfg: &ExactConfig) -> f64 {
    truncation_bound(cfg.lambda, cfg.horizon, cfg.sim_radius, cfg.target_radius_hint)
}

/// Smallest field radius (to within 0.25) whose truncation bound is below `tol`.
pub fn certified_radius(lambda: f64, horizon: f64, hint: f64, tol: f64) -> f64 {
    let mut lo = hint;
    let mut hi = hint + 10.0;
    while truncation_bound(lambda, horizon, hi, hint) > tol {
        lo = hi;
        hi = hint + 2.0 * (hi - hint);
    }
    while hi - lo > 0.25 {
        let mid = 0.5 * (lo + hi);
        if truncation_bound(lambda, horizon, mid, hint) > tol {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomfield::Point2;

    #[test]
    fn bound_is_monotone_and_vanishes_far_out() {
        let (t, h) = (20.0, 10.0);
        let k = jump_budget(t);
        let mut prev = f64::INFINITY;
        for r in [15.0, 30.0, 60.0, 90.0, 120.0, 200.0] {
            let b = truncation_bound(1.0, t, r, h);
            assert!(b <= prev, "bound rose at r={r}");
            prev = b;
        }
        assert!(truncation_bound(1.0, t, h + 50.0 * k.sqrt(), h) < 1e-6);
    }

    #[test]
    fn zero_horizon_bound_matches_gaussian_tail_term() {
        // With T = 0 only the displacement term of budget 10 survives.
        let h = 5.0;
        let b = truncation_bound(1.0, 0.0, h + 40.0, h);
        assert!(b > 0.0 && b < 1e-20, "b = {b}");
        let direct = crate::quad::integrate_tail(
            |d| {
                let a: f64 = d - h;
                let k = 10f64.max((a / 4.0).ceil());
                2.0 * std::f64::consts::PI * d * k * (-a * a / (2.0 * k)).exp()
            },
            h + 40.0,
            1.0,
            1e-12,
        );
        assert!((b / direct - 1.0).abs() < 1e-6);
    }

    #[test]
    fn certified_radius_meets_tolerance() {
        let r = certified_radius(0.5, 50.0, 10.0, 1e-3);
        assert!(truncation_bound(0.5, 50.0, r, 10.0) <= 1e-3);
        assert!(truncation_bound(0.5, 50.0, r - 0.5, 10.0) > 1e-3);
    }

    #[test]
    fn config_validation_lists_all_violations() {
        let mut cfg = ExactConfig::new(-1.0, 0.0, 5.0, 6.0);
        cfg.cap = 0;
        let msg = cfg.validate().unwrap_err().to_string();
        for needle in ["lambda > 0", "horizon > 0", "cap >= 1", "sim_radius > target_radius_hint"] {
            assert!(msg.contains(needle), "{msg}");
        }
    }

    #[test]
    fn explicit_field_chain_at_time_zero() {
        let cfg = ExactConfig::new(1.0, 0.5, 30.0, 10.0);
        let pts = vec![Point2::new(0.5, 0.0), Point2::new(0.0, 0.7), Point2::new(-0.9, 0.0)];
        let run = run_exact_from(&cfg, pts).unwrap();
        assert_eq!(run.trajectory.events[0].rounds, vec![1, 1, 1, 0]);
        assert_eq!(run.trajectory.events[0].mass_after, 4);
        assert_eq!(run.stop, StopReason::Exhausted);
    }
}
