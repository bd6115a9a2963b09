//! Fixed-step simulation in a periodic square box.
//!
//! Particles move once per step of length `dt` and the pool engulfs at the end
//! of each step. In random-walk mode a particle's jump count per step is
//! Poisson(dt); only steps with a nonzero count move it, so each particle
//! draws the gap to its next moving step (geometric) and the count at that
//! step (zero-truncated Poisson). Brownian mode moves everyone every step.

use serde::{Deserialize, Serialize};

use crate::engulf::{pool_radius, radius_sq, RadialField, DEFAULT_CAP};
use crate::error::{invalid, Result};
use crate::exact::grid_cell;
use crate::geomfield::{
    exp1, gaussian_jump, poisson_count, tags, wrap_periodic, Point2, RngStream, WalkRng,
};
use crate::swarm::{zone_radius, Motion, Queue, Swarm};
use crate::trajectory::{Event, EventKind, Trajectory};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kinematics {
    RandomWalk,
    Brownian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConfig {
    pub lambda: f64,
    pub box_side: f64,
    pub dt: f64,
    pub horizon: f64,
    pub kinematics: Kinematics,
    pub cap: u64,
    pub master_seed: u64,
    pub replica: u64,
}

pub const DEFAULT_BOX_SIDE: f64 = 800.0;
pub const DEFAULT_DT: f64 = 0.01;

impl BoxConfig {
    pub fn new(lambda: f64, horizon: f64) -> Self {
        Self {
            lambda,
            box_side: DEFAULT_BOX_SIDE,
            dt: DEFAULT_DT,
            horizon,
            kinematics: Kinematics::RandomWalk,
            cap: DEFAULT_CAP,
            master_seed: 0,
            replica: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            errs.push("lambda >= 0");
        }
        if !(self.box_side.is_finite() && self.box_side > 0.0) {
            errs.push("box_side > 0");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errs.push("dt > 0");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            errs.push("horizon > 0");
        }
        if !(self.dt <= self.horizon) {
            errs.push("dt <= horizon");
        }
        if self.cap == 0 {
            errs.push("cap >= 1");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(invalid(format!("violated: {}", errs.join(", "))))
        }
    }

    /// Number of whole steps that fit in the horizon.
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt * (1.0 + 1e-12)).floor() as u64
    }
}

/// Poisson(mean) conditioned on being at least 1, by table inversion.
#[derive(Debug, Clone)]
struct PositivePoisson {
    mean: f64,
    cdf: Vec<f64>,
}

impl PositivePoisson {
    fn new(mean: f64) -> Self {
        let hi = (mean + 14.0 * mean.sqrt() + 30.0).ceil() as usize;
        let norm = -(-mean).exp_m1();
        let mut cdf = Vec::with_capacity(hi);
        let mut term = (-mean).exp();
        let mut acc = 0.0;
        for k in 1..=hi {
            term *= mean / k as f64;
            acc += term / norm;
            cdf.push(acc);
        }
        Self { mean, cdf }
    }

    #[inline]
    fn sample(&self, rng: &mut WalkRng) -> u64 {
        let u: f64 = rng.random();
        if u <= self.cdf[0] {
            return 1;
        }
        let k = self.cdf.partition_point(|&c| c < u);
        if k < self.cdf.len() {
            return k as u64 + 1;
        }
        let last = self.cdf.len() as u64;
        loop {
            let v = poisson_count(self.mean, rng);
            if v > last {
                return v;
            }
        }
    }
}

/// `x.floor()` for `x >= 0`, without the libm call in the common range.
#[inline]
fn floor_nonneg(x: f64) -> f64 {
    if x < 4.0e15 {
        (x as u64) as f64
    } else {
        x.floor()
    }
}

enum BoxMotion {
    Walk { counts: PositivePoisson, dt: f64, side: f64 },
    Brownian { sd: f64, side: f64 },
}

impl Motion for BoxMotion {
    #[inline]
    fn step(&self, pos: Point2, rng: &mut WalkRng) -> Point2 {
        match self {
            BoxMotion::Walk { counts, side, .. } => {
                let j = counts.sample(rng);
                let z = gaussian_jump(rng);
                let d = if j == 1 { z } else { z * (j as f64).sqrt() };
                wrap_periodic(pos + d, *side)
            }
            BoxMotion::Brownian { sd, side } => wrap_periodic(pos + gaussian_jump(rng) * *sd, *side),
        }
    }

    #[inline]
    fn gap(&self, rng: &mut WalkRng) -> f64 {
        match self {
            // steps until the next nonzero count: 1 + floor(E / dt), E ~ Exp(1)
            BoxMotion::Walk { dt, .. } => 1.0 + floor_nonneg(exp1(rng) / dt),
            BoxMotion::Brownian { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Quiet,
    Absorbed(Event),
    CapHit(Event),
    BoundaryHit(Event),
}

/// Live state of a box run. Particle times are step indices.
pub struct BoxState {
    cfg: BoxConfig,
    swarm: Swarm<BoxMotion>,
    mass: u64,
    step: u64,
    dirty: bool,
    buf: Vec<u64>,
}

impl BoxState {
    /// Sample the initial field and apply the time-zero cascade.
    pub fn new(cfg: &BoxConfig) -> Result<(Self, Event)> {
        cfg.validate()?;
        let mut field_rng = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::FIELD);
        let l = cfg.box_side;
        let n = poisson_count(cfg.lambda * l * l, &mut field_rng);
        let positions: Vec<Point2> = (0..n)
            .map(|_| {
                let x = (field_rng.random::<f64>() - 0.5) * l;
                let y = (field_rng.random::<f64>() - 0.5) * l;
                wrap_periodic(Point2::new(x, y), l)
            })
            .collect();
        Self::from_positions(cfg, positions)
    }

    pub fn from_positions(cfg: &BoxConfig, positions: Vec<Point2>) -> Result<(Self, Event)> {
        cfg.validate()?;
        let l = cfg.box_side;
        let motion = match cfg.kinematics {
            Kinematics::RandomWalk => BoxMotion::Walk {
                counts: PositivePoisson::new(cfg.dt),
                dt: cfg.dt,
                side: l,
            },
            Kinematics::Brownian => BoxMotion::Brownian {
                sd: cfg.dt.sqrt(),
                side: l,
            },
        };
        let mut walk_rng = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::WALKERS);
        // half-diagonal: beyond it every particle is near
        let h_max = l * std::f64::consts::FRAC_1_SQRT_2 * (1.0 + 1e-9) + 1.0;
        let mut swarm = Swarm::new(
            motion,
            cfg.steps() as f64,
            positions,
            Queue::calendar(cfg.steps()),
            || walk_rng.walker_rng(),
            grid_cell(cfg.lambda),
            0.5 * l,
            h_max,
        );
        let init = crate::engulf::cascade_in(&swarm.initial_field(), 1, 0.0, cfg.cap.max(1));
        let mass = init.final_mass;
        let boundary = pool_radius(mass) >= 0.5 * l;
        let event = if boundary {
            Event::new(0.0, EventKind::BoundaryHit, 1, Vec::new(), false)
        } else {
            for &id in &init.absorbed_ids {
                swarm.release(id as u32);
            }
            Event::new(0.0, EventKind::InitialCascade, mass, init.rounds, init.exploded)
        };
        let mass = event.mass_after;
        swarm.classify(zone_radius(pool_radius(mass)));
        Ok((
            Self {
                cfg: cfg.clone(),
                swarm,
                mass,
                step: 0,
                dirty: false,
                buf: Vec::new(),
            },
            event,
        ))
    }

    pub fn mass(&self) -> u64 {
        self.mass
    }

    pub fn radius(&self) -> f64 {
        pool_radius(self.mass)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn active_count(&self) -> u64 {
        self.swarm.active() as u64
    }

    pub fn released_count(&self) -> u64 {
        self.mass - 1
    }

    /// Active particles inside the closed pool disk; zero between steps.
    pub fn covered_active(&self) -> u64 {
        let mut out = Vec::new();
        self.swarm.grid().collect_shell(-1.0, radius_sq(self.mass), &mut out);
        out.len() as u64
    }

    /// Add a particle that never moves (fixtures and probes).
    pub fn inject(&mut self, pos: Point2) -> u32 {
        self.dirty = true;
        let rng = RngStream::for_replica(self.cfg.master_seed, self.cfg.replica, tags::ORACLE).walker_rng();
        self.swarm
            .push_static(wrap_periodic(pos, self.cfg.box_side), rng)
    }

    /// Advance one step: move, then sweep the pool until nothing qualifies.
    pub fn box_step(&mut self) -> StepOutcome {
        self.step += 1;
        let k = self.step as f64;
        let r_sq = radius_sq(self.mass);
        self.buf.clear();
        while let Some((_, id)) = self.swarm.next_until(k) {
            let p = self.swarm.apply_move(id);
            if p.norm_sq() <= r_sq {
                self.buf.push(id as u64);
            }
            self.swarm.settle(id);
        }
        // Only movers can be inside, unless a fixture was injected.
        if std::mem::take(&mut self.dirty) {
            self.buf.clear();
            self.swarm.grid().collect_shell(-1.0, r_sq, &mut self.buf);
        }
        if self.buf.is_empty() {
            return StepOutcome::Quiet;
        }
        self.buf.sort_unstable();
        let n = self.buf.len() as u64;
        let time = self.time();
        let res = self.swarm.cascade(k, self.mass + n, r_sq, self.cfg.cap);
        if pool_radius(res.final_mass) >= 0.5 * self.cfg.box_side {
            return StepOutcome::BoundaryHit(Event::new(
                time,
                EventKind::BoundaryHit,
                self.mass,
                Vec::new(),
                false,
            ));
        }
        for i in 0..self.buf.len() {
            self.swarm.release(self.buf[i] as u32);
        }
        for &a in &res.absorbed_ids {
            self.swarm.release(a as u32);
        }
        self.mass = res.final_mass;
        let mut rounds = Vec::with_capacity(res.rounds.len() + 1);
        rounds.push(n);
        rounds.extend_from_slice(&res.rounds);
        if res.exploded {
            return StepOutcome::CapHit(Event::new(time, EventKind::CapHit, self.mass, rounds, true));
        }
        self.swarm.ensure_margin(k, pool_radius(self.mass));
        StepOutcome::Absorbed(Event::new(time, EventKind::Arrival, self.mass, rounds, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxStop {
    Horizon,
    Cap,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRun {
    pub trajectory: Trajectory,
    pub initial_count: u64,
    pub released: u64,
    pub stop: BoxStop,
}

pub fn run_box(cfg: &BoxConfig) -> Result<BoxRun> {
    let (mut state, first) = BoxState::new(cfg)?;
    let initial_count = state.active_count() + state.released_count();
    let mut traj = Trajectory::new(cfg.horizon);
    let mut stop = BoxStop::Horizon;
    let done = match first.kind {
        EventKind::BoundaryHit => Some(BoxStop::Boundary),
        _ if first.exploded => Some(BoxStop::Cap),
        _ => None,
    };
    traj.push(first);
    if let Some(s) = done {
        stop = s;
    } else {
        for _ in 0..cfg.steps() {
            match state.box_step() {
                StepOutcome::Quiet => {}
                StepOutcome::Absorbed(e) => traj.push(e),
                StepOutcome::CapHit(e) => {
                    traj.push(e);
                    stop = BoxStop::Cap;
                    break;
                }
                StepOutcome::BoundaryHit(e) => {
                    traj.push(e);
                    stop = BoxStop::Boundary;
                    break;
                }
            }
        }
    }
    Ok(BoxRun {
        trajectory: traj,
        initial_count,
        released: state.released_count(),
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn positive_poisson_matches_conditioned_law() {
        let d = PositivePoisson::new(0.5);
        let mut rng = WalkRng::seed_from_u64(3);
        let n = 200_000;
        let mut ones = 0u64;
        let mut total = 0u64;
        for _ in 0..n {
            let j = d.sample(&mut rng);
            assert!(j >= 1);
            ones += (j == 1) as u64;
            total += j;
        }
        // P(1 | >= 1) = 0.5 e^-0.5 / (1 - e^-0.5); mean = 0.5 / (1 - e^-0.5)
        let norm = 1.0 - (-0.5f64).exp();
        let p1 = 0.5 * (-0.5f64).exp() / norm;
        assert!((ones as f64 / n as f64 - p1).abs() < 0.004);
        assert!((total as f64 / n as f64 - 0.5 / norm).abs() < 0.01);
    }

    #[test]
    fn step_gaps_and_counts_reproduce_poisson_per_step() {
        // Over many steps, the per-step jump count of one particle is Poisson(dt).
        let dt = 0.3;
        let m = BoxMotion::Walk {
            counts: PositivePoisson::new(dt),
            dt,
            side: 1e9,
        };
        let mut rng = WalkRng::seed_from_u64(9);
        let steps = 400_000u64;
        let mut moves = 0u64;
        let mut k = m.gap(&mut rng) as u64;
        while k <= steps {
            moves += 1;
            let _ = m.step(Point2::ORIGIN, &mut rng);
            k += m.gap(&mut rng) as u64;
        }
        let p_nonzero = 1.0 - (-dt).exp();
        let frac = moves as f64 / steps as f64;
        assert!((frac - p_nonzero).abs() < 0.003, "{frac} vs {p_nonzero}");
    }
}
