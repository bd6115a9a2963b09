//! Power-law fits: pool growth exponent and cascade-size tails.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branching::DominatingConfig;
use crate::error::{invalid, Result};
use crate::geomfield::{exp1, RngStream};
use crate::stats::report::{StatReport, Verdict};
use crate::stats::summary::{linear_fit, Moments};
use crate::traj::StepPath;
use crate::trajectory::Trajectory;

/// Diffusive band for the growth exponent.
pub const GROWTH_BAND: (f64, f64) = (0.4, 0.6);
/// Critical tail exponent and its tolerance.
pub const CRITICAL_TAIL: f64 = -0.5;
pub const TAIL_TOL: f64 = 0.1;

/// Least-squares slope of `ln E_t` against `ln t` on a geometric grid.
pub fn growth_exponent_path(path: &StepPath, t_min: f64, t_max: f64, points: usize) -> Result<StatReport> {
    if !(t_min > 0.0 && t_max > t_min) {
        return Err(invalid("0 < t_min < t_max"));
    }
    if path.end < t_max {
        return Err(invalid(format!("path ends at {} before t_max = {t_max}", path.end)));
    }
    let points = points.max(3);
    let ratio = (t_max / t_min).ln() / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| t_min.ln() + ratio * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| path.at(x.exp()).ln()).collect();
    let (slope, _, se) = linear_fit(&xs, &ys);
    Ok(StatReport::new("growth_exponent_fit", slope, 1.96 * se, points as u64)
        .detail("t_min", t_min)
        .detail("t_max", t_max)
        .detail("tolerance_band_low", GROWTH_BAND.0)
        .detail("tolerance_band_high", GROWTH_BAND.1)
        .decide((GROWTH_BAND.0..=GROWTH_BAND.1).contains(&slope)))
}

pub fn growth_exponent_fit(traj: &Trajectory, t_min: f64, t_max: f64) -> Result<StatReport> {
    growth_exponent_path(&StepPath::from_trajectory(traj), t_min, t_max, 64)
}

/// Slope of the log empirical survival function `P(X >= n)` against `ln n`
/// on `n` in `[10, q_0.999]`, using one point per distinct sample value on a
/// geometric grid.
pub fn cascade_tail_fit(samples: &[u64]) -> Result<StatReport> {
    if samples.len() < 10_000 {
        return Err(invalid(format!("need >= 10000 samples, got {}", samples.len())));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let hi = sorted[((n as f64 * 0.999) as usize).min(n - 1)];
    let base = StatReport::new("cascade_tail_fit", f64::NAN, f64::INFINITY, n as u64)
        .detail("tolerance_center", CRITICAL_TAIL)
        .detail("tolerance_halfwidth", TAIL_TOL);
    if hi <= 10 {
        return Ok(base.detail("reason", "upper quantile at or below 10").verdict(Verdict::Inconclusive));
    }
    let survival = |v: u64| (n - sorted.partition_point(|&x| x < v)) as f64 / n as f64;
    let mut grid: Vec<u64> = (0..=40)
        .map(|i| (10.0 * (hi as f64 / 10.0).powf(i as f64 / 40.0)).round() as u64)
        .collect();
    grid.dedup();
    if grid.len() < 3 {
        return Ok(base.detail("reason", "fewer than three grid points").verdict(Verdict::Inconclusive));
    }
    let xs: Vec<f64> = grid.iter().map(|&v| (v as f64).ln()).collect();
    let ys: Vec<f64> = grid.iter().map(|&v| survival(v).ln()).collect();
    let (slope, _, se) = linear_fit(&xs, &ys);
    let mut r = base;
    r.estimate = slope;
    r.ci_low = slope - 1.96 * se;
    r.ci_high = slope + 1.96 * se;
    Ok(r.detail("upper_quantile", hi)
        .decide((slope - CRITICAL_TAIL).abs() <= TAIL_TOL))
}

/// LLN tolerance for the weighted exponential sum.
pub const LLN_TOL: f64 = 0.01;
/// Tolerance for the dominating-process timing identity.
pub const TIMING_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// `c_k = sqrt(pi / k)`.
    InverseSqrt,
}

impl WeightRule {
    pub fn weight(self, k: u64) -> f64 {
        match self {
            WeightRule::InverseSqrt => (std::f64::consts::PI / k as f64).sqrt(),
        }
    }
}

/// `sum T_k / sum c_k` for given draws and means.
pub fn lln_ratio(draws: &[f64], means: &[f64]) -> f64 {
    draws.iter().sum::<f64>() / means.iter().sum::<f64>()
}

/// Draws `T_k ~ Exp(mean c_k)` for `k = 1..=n` and reports `sum T / sum c`.
pub fn exp_lln_check<R: Rng + ?Sized>(rule: WeightRule, n: u64, rng: &mut R) -> Result<StatReport> {
    if n == 0 {
        return Err(invalid("n >= 1"));
    }
    let (mut s_t, mut s_c, mut s_c2) = (0.0, 0.0, 0.0);
    for k in 1..=n {
        let c = rule.weight(k);
        s_t += c * exp1(rng);
        s_c += c;
        s_c2 += c * c;
    }
    let ratio = s_t / s_c;
    let se = s_c2.sqrt() / s_c;
    Ok(StatReport::new("exp_lln_check", ratio, 1.96 * se, n)
        .detail("se", se)
        .detail("tolerance_abs", LLN_TOL)
        .decide((ratio - 1.0).abs() <= LLN_TOL))
}

/// Per-path ratio `tau_n / sum_{k<n} 1 / (C R_k)` of a dominating path.
pub fn timing_ratio(traj: &Trajectory, hazard_constant: f64) -> f64 {
    let ev = &traj.events;
    let predicted: f64 = ev[..ev.len().saturating_sub(1)]
        .iter()
        .map(|e| 1.0 / (hazard_constant * e.radius_after))
        .sum();
    ev.last().map_or(f64::NAN, |e| e.time) / predicted
}

/// Ensemble mean of [`timing_ratio`] over dominating paths.
///
/// Early radii dominate the sum, so a single path fluctuates by about
/// `1 / ln n`; the ratio has mean exactly one given the radii.
pub fn timing_identity_check(cfg: &DominatingConfig, replicas: u64) -> Result<StatReport> {
    cfg.validate()?;
    if replicas < 2 {
        return Err(invalid("replicas >= 2"));
    }
    let ratios = crate::stats::walk::par_replicas(replicas, |i| {
        let c = DominatingConfig { replica: i, ..*cfg };
        crate::branching::dominating_trajectory(&c).map(|t| timing_ratio(&t, cfg.hazard_constant))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let m = Moments::from_slice(&ratios);
    Ok(StatReport::new("timing_identity_check", m.mean(), 1.96 * m.sem(), replicas)
        .detail("se", m.sem())
        .detail("steps", cfg.step_count)
        .detail("tolerance_abs", TIMING_TOL)
        .decide((m.mean() - 1.0).abs() <= TIMING_TOL))
}

/// Default master seed stream for [`exp_lln_check`] when driven by config.
pub fn lln_stream(master_seed: u64) -> RngStream {
    RngStream::for_replica(master_seed, 0, crate::geomfield::tags::WAITING)
}
