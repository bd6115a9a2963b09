//! Arrival hazard of a fresh field into a fixed disk.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exact::{certified_radius, truncation_bound};
use crate::geomfield::{gaussian_jump, sample_ppp_annulus, tags, uniform_in_annulus, Annulus, RngStream};
use crate::stats::report::{StatReport, Verdict};
use crate::stats::summary::ks_one_sided_upper;
use crate::stats::walk::{first_entry, par_replicas};

/// Minimum p-value of the one-sided domination test.
pub const DOMINATION_P: f64 = 0.01;
/// Allowed spread `max / min - 1` of `r(R) / R` across radii.
pub const LINEARITY_SPREAD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub radius: f64,
    pub lambda: f64,
    pub replicas: u64,
    /// Censoring time for the first entry.
    pub t_max: f64,
    pub master_seed: u64,
    /// Samples for the time-zero hazard integral.
    pub rate_samples: u64,
}

impl HazardParams {
    pub fn new(radius: f64, replicas: u64) -> Self {
        Self {
            radius,
            lambda: 1.0,
            replicas,
            t_max: 4.0,
            master_seed: 0,
            rate_samples: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.radius >= 1.0 / std::f64::consts::PI.sqrt() && self.radius.is_finite()) {
            errs.push("radius >= 1/sqrt(pi)");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errs.push("lambda >= 0");
        }
        if self.replicas < 1000 {
            errs.push("replicas >= 1000");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            errs.push("t_max > 0");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(invalid(errs.join("; ")))
        }
    }
}

/// First-entry times of independent fields into `B(R)`, `None` if censored.
pub fn entry_times(p: &HazardParams) -> Result<(Vec<Option<f64>>, f64)> {
    p.validate()?;
    let reach = certified_radius(p.lambda.max(1e-12), p.t_max, p.radius, 1e-4);
    let field = Annulus::new(p.radius, reach)?;
    let r_sq = p.radius * p.radius;
    let times = par_replicas(p.replicas, |i| {
        let mut rng = RngStream::for_replica(p.master_seed, i, tags::FIELD);
        let start = sample_ppp_annulus(p.lambda, &field, &mut rng).expect("valid intensity");
        let mut walk = rng.substream(tags::WALKERS);
        let mut best = p.t_max;
        let mut hit = false;
        for x in start {
            if let (Some(t), _) = first_entry(x, r_sq, best, &mut walk) {
                best = t;
                hit = true;
            }
        }
        hit.then_some(best)
    });
    Ok((times, truncation_bound(p.lambda, p.t_max, reach, p.radius)))
}

/// Arrival rate at time zero, `lambda * integral over |x| > R of
/// P(|x + xi| <= R)`, which by symmetry of the jump equals
/// `lambda * pi R^2 * P(|y + xi| > R)` for `y` uniform in `B(R)`.
pub fn initial_rate(lambda: f64, radius: f64, samples: u64, seed: u64) -> (f64, f64) {
    let mut rng = RngStream::for_replica(seed, radius.to_bits(), tags::ORACLE);
    let disk = Annulus::disk(radius).expect("radius > 0");
    let r_sq = radius * radius;
    let n = samples.max(1);
    let out = (0..n)
        .filter(|_| {
            let y = uniform_in_annulus(&disk, &mut rng);
            (y + gaussian_jump(&mut rng)).norm_sq() > r_sq
        })
        .count();
    let q = out as f64 / n as f64;
    let scale = lambda * disk.area();
    (scale * q, scale * (q * (1.0 - q) / n as f64).sqrt())
}

/// Censored-exponential rate estimate `events / exposure` of the first
/// entry, plus a one-sided check that the entry time dominates an
/// exponential with the time-zero rate.
pub fn hazard_estimate(p: &HazardParams) -> Result<StatReport> {
    let (times, trunc) = entry_times(p)?;
    let events = times.iter().filter(|t| t.is_some()).count() as u64;
    let exposure: f64 = times.iter().map(|t| t.unwrap_or(p.t_max)).sum();
    let base = StatReport::new("hazard_estimate", 0.0, 0.0, p.replicas)
        .detail("radius", p.radius)
        .detail("t_max", p.t_max)
        .detail("truncation_bound", trunc)
        .detail("events", events)
        .detail("censored", p.replicas - events)
        .detail("tolerance_domination_p", DOMINATION_P);
    if events == 0 {
        return Ok(base.verdict(Verdict::Inconclusive));
    }
    let rate = events as f64 / exposure;
    // Delta method for the censored exponential MLE.
    let se = rate / (events as f64).sqrt();
    let (r0, r0_se) = initial_rate(p.lambda, p.radius, p.rate_samples, p.master_seed);
    let observed: Vec<f64> = times.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
    let (d_plus, p_value) = ks_one_sided_upper(&observed, |s| 1.0 - (-r0 * s).exp());
    let mut r = base;
    r.estimate = rate;
    r.ci_low = rate - 1.96 * se;
    r.ci_high = rate + 1.96 * se;
    Ok(r.detail("se", se)
        .detail("rate_over_radius", rate / p.radius)
        .detail("initial_rate", r0)
        .detail("initial_rate_se", r0_se)
        .detail("c_hat", r0 / p.radius)
        .detail("ks_d_plus", d_plus)
        .detail("ks_p", p_value)
        .decide(p_value > DOMINATION_P && rate <= r0 + 3.0 * (se + r0_se)))
}

/// Whether `r(R) / R` agrees across radii within [`LINEARITY_SPREAD`].
pub fn hazard_linearity(reports: &[StatReport]) -> StatReport {
    let ratios: Vec<f64> = reports.iter().filter_map(|r| r.get("rate_over_radius")).collect();
    if ratios.len() < 2 || ratios.len() != reports.len() {
        return StatReport::new("hazard_linearity", f64::NAN, f64::INFINITY, ratios.len() as u64)
            .verdict(Verdict::Inconclusive);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let spread = hi / lo - 1.0;
    StatReport::new("hazard_linearity", spread, 0.0, ratios.len() as u64)
        .detail("ratios", ratios.clone())
        .detail("tolerance_spread", LINEARITY_SPREAD)
        .decide(spread <= LINEARITY_SPREAD && reports.iter().all(StatReport::passed))
}
