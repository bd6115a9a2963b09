//! Trajectory analysis: stall search, mass audit and ensemble quantiles.

use serde::{Deserialize, Serialize};

use crate::engulf::pool_radius;
use crate::error::{invalid, Result};
use crate::stats::report::StatReport;
use crate::stats::summary::quantile_sorted;
use crate::trajectory::Trajectory;

/// A right-continuous step function of time: `initial` before the first
/// jump, `values[i]` on `[times[i], times[i+1])`, defined up to `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    pub initial: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub end: f64,
}

impl StepPath {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            initial: pool_radius(1),
            times: traj.events.iter().map(|e| e.time).collect(),
            values: traj.events.iter().map(|e| e.radius_after).collect(),
            end: traj.end_time(),
        }
    }

    /// Samples `f` at `0, dt, 2 dt, ...` up to `end`.
    pub fn sampled(f: impl Fn(f64) -> f64, dt: f64, end: f64) -> Self {
        let n = (end / dt).floor() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self {
            initial: f(0.0),
            times,
            values,
            end,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallParams {
    pub alpha: f64,
    pub beta: f64,
    pub t0: f64,
}

impl StallParams {
    /// `beta = 1 / (12 (1 - alpha / 2))`.
    pub fn from_alpha(alpha: f64, t0: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta: 1.0 / (12.0 * (1.0 - alpha / 2.0)),
            t0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errs.push("0 < alpha < 1");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            errs.push("0 < beta < 1");
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            errs.push("t0 >= 0");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(invalid(errs.join("; ")))
        }
    }
}

/// Whether `E(t1 - t1^beta) >= E(t1) - 2`.
pub fn is_stall(path: &StepPath, t1: f64, beta: f64) -> bool {
    path.at(t1 - t1.powf(beta)) >= path.at(t1) - 2.0
}

/// Smallest time `t1 > t0` among jump times and integers up to the end of the
/// path at which the path stalls.
pub fn find_stall_path(path: &StepPath, params: &StallParams) -> Result<Option<f64>> {
    params.validate()?;
    if params.t0 > path.end {
        return Err(invalid(format!(
            "t0 = {} is beyond the end of the path {}",
            params.t0, path.end
        )));
    }
    let mut grid: Vec<f64> = path
        .times
        .iter()
        .copied()
        .filter(|&t| t > params.t0 && t <= path.end)
        .collect();
    let first = params.t0.floor() as u64 + 1;
    let last = path.end.floor() as u64;
    grid.extend((first..=last).map(|k| k as f64));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let hit = grid.into_iter().find(|&t| is_stall(path, t, params.beta));
    if let Some(t) = hit {
        debug_assert!(is_stall(path, t, params.beta));
    }
    Ok(hit)
}

pub fn find_stall(traj: &Trajectory, params: &StallParams) -> Result<Option<f64>> {
    find_stall_path(&StepPath::from_trajectory(traj), params)
}

/// Checks at every event that the mass equals one plus everything absorbed so
/// far and that the recorded radius is the disk radius of that mass.
pub fn mass_audit(traj: &Trajectory) -> StatReport {
    let mut mass = 1u64;
    let mut bad = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    for (i, e) in traj.events.iter().enumerate() {
        mass += e.absorbed();
        let area_gap = (e.radius_after * e.radius_after * std::f64::consts::PI - e.mass_after as f64).abs();
        if e.mass_after != mass
            || e.radius_after != pool_radius(e.mass_after)
            || area_gap > 1e-9 * e.mass_after as f64
            || e.time < prev_t
        {
            bad.push(i);
            mass = e.mass_after;
        }
        prev_t = e.time;
    }
    let n = traj.events.len() as u64;
    let mut r = StatReport::new("mass_audit", bad.len() as f64, 0.0, n)
        .detail("events", n)
        .detail("tolerance_discrepancies", 0)
        .decide(bad.is_empty());
    if let Some(&i) = bad.first() {
        r.set("first_bad_event", i as u64);
        r.set("first_bad_time", traj.events[i].time);
    }
    r
}

/// Pointwise radius quantiles of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub times: Vec<f64>,
    pub q10: Vec<f64>,
    pub q50: Vec<f64>,
    pub q90: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Radius quantile `q` of the ensemble at each grid time.
pub fn radius_quantile(trajs: &[Trajectory], times: &[f64], q: f64) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(invalid("at least one trajectory"));
    }
    let mut buf = Vec::with_capacity(trajs.len());
    Ok(times
        .iter()
        .map(|&t| {
            buf.clear();
            buf.extend(trajs.iter().map(|tr| tr.radius_at(t)));
            buf.sort_by(f64::total_cmp);
            quantile_sorted(&buf, q)
        })
        .collect())
}

pub fn ensemble_quantiles(trajs: &[Trajectory], times: &[f64]) -> Result<QuantileTable> {
    let col = |q| radius_quantile(trajs, times, q);
    Ok(QuantileTable {
        times: times.to_vec(),
        q10: col(0.1)?,
        q50: col(0.5)?,
        q90: col(0.9)?,
        min: col(0.0)?,
        max: col(1.0)?,
    })
}
