//! Free-field estimators: vacuum refill, single-walker hitting, entered
//! counts and low-count scans.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::engulf::radius_sq;
use crate::error::{invalid, Result};
use crate::exact::{certified_radius, truncation_bound};
use crate::geomfield::{
    sample_ppp_annulus, tags, uniform_in_annulus, wrap_periodic, Annulus, Point2, PoissonTable, RngStream,
};
use crate::quad::integrate_tail;
use crate::stats::report::{num, StatReport, Verdict};
use crate::stats::summary::Moments;
use crate::stats::walk::{first_entry, free_position, par_replicas};

/// `P(|S_N| >= a)` for `S_N` a sum of `N ~ Poisson(t)` standard planar
/// Gaussian jumps, which is `E[exp(-a^2 / (2N))]`.
pub fn endpoint_tail(a: f64, t: f64) -> f64 {
    if a <= 0.0 {
        return 1.0;
    }
    if t <= 0.0 {
        return 0.0;
    }
    let hi = (t + 14.0 * t.sqrt() + 30.0).ceil() as u64;
    let mut acc = 0.0;
    let mut mass = 0.0;
    for j in 1..=hi {
        let x = j as f64;
        let lp = -t + x * t.ln() - ln_gamma(x + 1.0);
        let pj = lp.exp();
        mass += pj;
        acc += pj * (-a * a / (2.0 * x)).exp();
    }
    // jump counts beyond the table contribute at most their mass
    let rest = (1.0 - (-t).exp() - mass).max(0.0);
    (acc + rest).min(1.0)
}

/// Expected number of free walkers started beyond `reach` that sit inside
/// `B(r)` at time `t`.
pub fn endpoint_truncation(lambda: f64, t: f64, reach: f64, r: f64) -> f64 {
    let chunk = (t.sqrt() + 1.0).max(1.0);
    let f = |d: f64| 2.0 * std::f64::consts::PI * d * endpoint_tail(d - r, t);
    lambda * integrate_tail(f, reach, chunk, 1e-9)
}

/// Smallest field radius, to within 0.25, with [`endpoint_truncation`] below `tol`.
pub fn endpoint_radius(lambda: f64, t: f64, r: f64, tol: f64) -> f64 {
    let mut lo = r;
    let mut hi = r + 10.0;
    while endpoint_truncation(lambda, t, hi, r) > tol {
        lo = hi;
        hi = r + 2.0 * (hi - r);
    }
    while hi - lo > 0.25 {
        let mid = 0.5 * (lo + hi);
        if endpoint_truncation(lambda, t, mid, r) > tol {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Required density ratio in the refilled probe.
pub const REFILL_RATIO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefillParams {
    pub lambda: f64,
    /// Radius of the initially empty disk.
    pub radius: f64,
    pub t: f64,
    pub probe: Annulus,
    pub replicas: u64,
    pub master_seed: u64,
}

impl RefillParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            errs.push("lambda > 0");
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            errs.push("radius >= 0");
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            errs.push("t >= 0");
        }
        if self.probe.area() <= 0.0 {
            errs.push("probe area > 0");
        }
        if self.replicas < 2 {
            errs.push("replicas >= 2");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(invalid(errs.join("; ")))
        }
    }
}

/// Density in `probe` at time `t` of free walkers started as a Poisson field
/// outside `B(radius)`, relative to `lambda`.
///
/// The probe may sit anywhere; the field is truncated where walkers from
/// farther out reach the probe's outer disk with expected count below
/// `1e-3` of the undisturbed probe count.
pub fn refill_density_estimate(p: &RefillParams) -> Result<StatReport> {
    p.validate()?;
    let expected = p.lambda * p.probe.area();
    let reach = endpoint_radius(p.lambda, p.t, p.probe.r_outer, 1e-3 * expected).max(p.radius);
    let field = Annulus::new(p.radius, reach.max(p.probe.r_outer))?;
    let jumps = PoissonTable::new(p.t)?;
    let counts = par_replicas(p.replicas, |i| {
        let mut rng = RngStream::for_replica(p.master_seed, i, tags::FIELD);
        let n = crate::geomfield::poisson_count(p.lambda * field.area(), &mut rng);
        let mut c = 0u64;
        for _ in 0..n {
            let x = uniform_in_annulus(&field, &mut rng);
            if p.probe.contains(free_position(x, &jumps, &mut rng)) {
                c += 1;
            }
        }
        c as f64
    });
    let m = Moments::from_slice(&counts);
    let ratio = m.mean() / expected;
    let se = m.sem() / expected;
    Ok(StatReport::new("refill_density_estimate", ratio, 1.96 * se, p.replicas)
        .detail("se", se)
        .detail("expected_count", expected)
        .detail("field_radius", reach)
        .detail("truncation_bound", endpoint_truncation(p.lambda, p.t, reach, p.probe.r_outer))
        .detail("tolerance_min_ratio", REFILL_RATIO)
        .decide(ratio >= REFILL_RATIO))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingParams {
    /// Starting distance from the origin.
    pub x_radius: f64,
    pub k: f64,
    pub replicas: u64,
    pub master_seed: u64,
}

/// Probability that one walker from `(x_radius, 0)` enters the unit-area
/// disk before time `k`, reported with `p * ln k`.
pub fn hitting_prob_estimate(p: &HittingParams) -> Result<StatReport> {
    let r0_sq = radius_sq(1);
    if !(p.x_radius.is_finite() && p.x_radius * p.x_radius > r0_sq) {
        return Err(invalid(format!("x_radius > 1/sqrt(pi), got {}", p.x_radius)));
    }
    if !(p.k > 0.0 && p.k.is_finite()) || p.replicas == 0 {
        return Err(invalid("k > 0 and replicas >= 1"));
    }
    let start = Point2::new(p.x_radius, 0.0);
    let hits: u64 = par_replicas(p.replicas, |i| {
        let mut rng = RngStream::for_replica(p.master_seed, i, tags::WALKERS);
        first_entry(start, r0_sq, p.k, &mut rng).0.is_some() as u64
    })
    .into_iter()
    .sum();
    let n = p.replicas as f64;
    let q = hits as f64 / n;
    let se = (q * (1.0 - q) / n).sqrt();
    Ok(StatReport::new("hitting_prob_estimate", q, 1.96 * se, p.replicas)
        .detail("se", se)
        .detail("p_log_k", q * p.k.ln())
        .detail("hits", hits)
        .verdict(Verdict::Inconclusive))
}

/// Dispersion band for entered counts.
pub const ENTERED_FANO: (f64, f64) = (0.85, 1.15);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnteredParams {
    pub lambda: f64,
    pub k: f64,
    pub replicas: u64,
    pub master_seed: u64,
}

/// Number of distinct walkers of a free Poisson field that are inside the
/// unit-area disk at time zero or enter it by time `k`.
pub fn entered_counts(p: &EnteredParams) -> Result<(Vec<u64>, f64, f64)> {
    if !(p.lambda > 0.0 && p.lambda.is_finite()) {
        return Err(invalid("lambda > 0"));
    }
    if !(p.k >= 0.0 && p.k.is_finite()) {
        return Err(invalid("k >= 0"));
    }
    if p.replicas < 100 {
        return Err(invalid("replicas >= 100"));
    }
    let r0_sq = radius_sq(1);
    let r0 = r0_sq.sqrt();
    let tol = 1e-3 * p.lambda;
    let reach = certified_radius(p.lambda, p.k, r0, tol);
    let field = Annulus::disk(reach)?;
    let counts = par_replicas(p.replicas, |i| {
        let mut rng = RngStream::for_replica(p.master_seed, i, tags::FIELD);
        let start = sample_ppp_annulus(p.lambda, &field, &mut rng).expect("valid intensity");
        let mut walk = rng.substream(tags::WALKERS);
        start
            .into_iter()
            .filter(|&x| x.norm_sq() <= r0_sq || first_entry(x, r0_sq, p.k, &mut walk).0.is_some())
            .count() as u64
    });
    Ok((counts, reach, truncation_bound(p.lambda, p.k, reach, r0)))
}

pub fn entered_count_estimate(p: &EnteredParams) -> Result<StatReport> {
    let (counts, reach, trunc) = entered_counts(p)?;
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = Moments::from_slice(&xs);
    let fano = m.variance() / m.mean();
    let floor = if p.k > 1.0 {
        std::f64::consts::PI * p.k / p.k.ln().powf(1.5)
    } else {
        0.0
    };
    let fano_ok = (ENTERED_FANO.0..=ENTERED_FANO.1).contains(&fano);
    Ok(StatReport::new("entered_count_estimate", m.mean(), 1.96 * m.sem(), p.replicas)
        .detail("se", m.sem())
        .detail("fano", num(fano))
        .detail("lower_growth_floor", floor)
        .detail("field_radius", reach)
        .detail("truncation_bound", trunc)
        .detail("tolerance_fano_low", ENTERED_FANO.0)
        .detail("tolerance_fano_high", ENTERED_FANO.1)
        .decide(fano_ok && m.mean() > floor))
}

/// Count of field particles in `B(R)` at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub count: u64,
}

/// Flags snapshots with fewer than `lambda pi R^2 - R^(1 + delta)` particles.
pub fn volume_deviation_scan(snapshots: &[Snapshot], lambda: f64, radius: f64, delta: f64) -> StatReport {
    let level = lambda * std::f64::consts::PI * radius * radius;
    let threshold = level - radius.powf(1.0 + delta);
    let margins: Vec<f64> = snapshots.iter().map(|s| s.count as f64 - threshold).collect();
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let violations: Vec<f64> = snapshots
        .iter()
        .zip(&margins)
        .filter(|(_, &m)| m < 0.0)
        .map(|(s, _)| s.time)
        .collect();
    let mut r = StatReport::new("volume_deviation_scan", violations.len() as f64, 0.0, snapshots.len() as u64)
        .detail("threshold", threshold)
        .detail("worst_margin", num(worst))
        .detail("tolerance_violations", 0)
        .decide(violations.is_empty());
    if let Some(&t) = violations.first() {
        r.set("first_violation_time", t);
    }
    r.set("violation_times", violations);
    r
}

/// Counts in `B(R)` at the given times for a stationary free field on a
/// periodic box of side `box_side`.
pub fn free_field_snapshots(
    lambda: f64,
    radius: f64,
    box_side: f64,
    times: &[f64],
    master_seed: u64,
    replica: u64,
) -> Result<Vec<Snapshot>> {
    if !(box_side > 2.0 * radius) {
        return Err(invalid("box_side > 2 R"));
    }
    let mut rng = RngStream::for_replica(master_seed, replica, tags::FIELD);
    let half = 0.5 * box_side;
    let n = crate::geomfield::poisson_count(lambda * box_side * box_side, &mut rng);
    let mut pos: Vec<Point2> = (0..n)
        .map(|_| {
            use rand::Rng;
            Point2::new(rng.random_range(-half..half), rng.random_range(-half..half))
        })
        .collect();
    let r_sq = radius * radius;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            return Err(invalid("snapshot times must be nondecreasing"));
        }
        if t > now {
            let jumps = PoissonTable::new(t - now)?;
            for p in pos.iter_mut() {
                *p = wrap_periodic(free_position(*p, &jumps, &mut rng), box_side);
            }
            now = t;
        }
        let count = pos.iter().filter(|p| p.norm_sq() <= r_sq).count() as u64;
        out.push(Snapshot { time: t, count });
    }
    Ok(out)
}
