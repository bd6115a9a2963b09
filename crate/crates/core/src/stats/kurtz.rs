//! Conditional Poisson structure of the field around a frozen pool.
//!
//! Replicas in which no walker reaches the pool by time `t` are kept. Given
//! that event the surviving walkers form a Poisson process with intensity
//! `lambda * P_y(walk from y avoids the pool through t)`; the jump law is
//! symmetric, so the avoidance probability of the time-reversed path from
//! the observation point gives the intensity directly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exact::certified_radius;
use crate::geomfield::{sample_ppp_annulus, tags, uniform_in_annulus, Annulus, RngStream};
use crate::stats::report::{num, StatReport, Verdict};
use crate::stats::summary::{correlation, Moments};
use crate::stats::walk::{first_entry, par_replicas};

pub const FANO_LOW: f64 = 0.9;
pub const FANO_HIGH: f64 = 1.1;
pub const MAX_CORRELATION: f64 = 0.05;
pub const MEAN_Z: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtzParams {
    pub lambda: f64,
    pub pool_radius: f64,
    pub t: f64,
    pub annuli: Vec<Annulus>,
    /// Number of retained replicas to collect.
    pub replicas: u64,
    pub master_seed: u64,
    /// Walkers per annulus for the avoidance-probability oracle.
    pub oracle_walkers: u64,
    /// Attempts per retained replica before giving up.
    pub max_attempt_factor: u64,
}

impl KurtzParams {
    pub fn new(lambda: f64, pool_radius: f64, t: f64, annuli: Vec<Annulus>, replicas: u64) -> Self {
        Self {
            lambda,
            pool_radius,
            t,
            annuli,
            replicas,
            master_seed: 0,
            oracle_walkers: 100_000,
            max_attempt_factor: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            errs.push("lambda > 0".to_string());
        }
        if !(self.pool_radius > 0.0 && self.pool_radius.is_finite()) {
            errs.push("pool_radius > 0".to_string());
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            errs.push("t >= 0".to_string());
        }
        if self.replicas < 1000 {
            errs.push("replicas >= 1000".to_string());
        }
        if self.annuli.is_empty() {
            errs.push("at least one annulus".to_string());
        }
        let mut sorted = self.annuli.clone();
        sorted.sort_by(|a, b| a.r_inner.total_cmp(&b.r_inner));
        if sorted.first().is_some_and(|a| a.r_inner < self.pool_radius) {
            errs.push("annuli outside pool_radius".to_string());
        }
        if sorted.windows(2).any(|w| w[1].r_inner < w[0].r_outer) {
            errs.push("annuli disjoint".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(invalid(errs.join("; ")))
        }
    }

    fn outer(&self) -> f64 {
        self.annuli.iter().map(|a| a.r_outer).fold(self.pool_radius, f64::max)
    }
}

/// Annulus counts of the retained replicas (row per replica).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusCounts {
    pub annuli: Vec<Annulus>,
    pub counts_per_replica: Vec<Vec<u64>>,
}

impl AnnulusCounts {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.counts_per_replica.iter().map(|row| row[j] as f64).collect()
    }
}

/// Field radius beyond which walkers reach the outermost annulus by time `t`
/// with expected count below `tol`.
pub fn field_radius(p: &KurtzParams, tol: f64) -> f64 {
    certified_radius(p.lambda, p.t, p.outer(), tol)
}

/// Runs attempts until `replicas` of them have no arrival by time `t`.
/// Returns the retained counts and the number of attempts.
pub fn kurtz_counts(p: &KurtzParams) -> Result<(AnnulusCounts, u64)> {
    p.validate()?;
    let reach = field_radius(p, 1e-4);
    let field = Annulus::new(p.pool_radius, reach)?;
    let r_sq = p.pool_radius * p.pool_radius;
    let attempt = |i: u64| -> Option<Vec<u64>> {
        let mut rng = RngStream::for_replica(p.master_seed, i, tags::FIELD);
        let start = sample_ppp_annulus(p.lambda, &field, &mut rng).expect("valid intensity");
        let mut walk = rng.substream(tags::WALKERS);
        let mut counts = vec![0u64; p.annuli.len()];
        for x in start {
            // a start exactly on the pool boundary counts as already inside
            if x.norm_sq() <= r_sq {
                return None;
            }
            let (hit, end) = first_entry(x, r_sq, p.t, &mut walk);
            if hit.is_some() {
                return None;
            }
            if let Some(j) = p.annuli.iter().position(|a| a.contains(end)) {
                counts[j] += 1;
            }
        }
        Some(counts)
    };
    let mut rows = Vec::with_capacity(p.replicas as usize);
    let mut next = 0u64;
    let limit = p.replicas.saturating_mul(p.max_attempt_factor);
    while (rows.len() as u64) < p.replicas && next < limit {
        let batch = 4096.min(limit - next);
        let got = par_replicas(batch, |k| attempt(next + k));
        for (k, row) in got.into_iter().enumerate() {
            if let Some(row) = row {
                rows.push(row);
                if rows.len() as u64 == p.replicas {
                    next += k as u64 + 1;
                    break;
                }
            }
        }
        if (rows.len() as u64) < p.replicas {
            next += batch;
        }
    }
    Ok((
        AnnulusCounts {
            annuli: p.annuli.clone(),
            counts_per_replica: rows,
        },
        next,
    ))
}

/// Expected retained count per annulus, `(mean, standard error)`, from
/// independent single-walker avoidance runs started uniformly in each annulus.
pub fn avoidance_means(p: &KurtzParams) -> Vec<(f64, f64)> {
    let r_sq = p.pool_radius * p.pool_radius;
    p.annuli
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let mut rng = RngStream::for_replica(p.master_seed, j as u64, tags::ORACLE);
            let n = p.oracle_walkers.max(1);
            let mut avoided = 0u64;
            for _ in 0..n {
                let y = uniform_in_annulus(a, &mut rng);
                if first_entry(y, r_sq, p.t, &mut rng).0.is_none() {
                    avoided += 1;
                }
            }
            let q = avoided as f64 / n as f64;
            let scale = p.lambda * a.area();
            (scale * q, scale * (q * (1.0 - q) / n as f64).sqrt())
        })
        .collect()
}

/// Dispersion, cross-correlation and mean checks of retained counts.
pub fn kurtz_verdict(counts: &AnnulusCounts, expected: &[(f64, f64)]) -> StatReport {
    let n = counts.counts_per_replica.len() as u64;
    let k = counts.annuli.len();
    if n < 2 {
        return StatReport::new("kurtz_test", f64::NAN, f64::INFINITY, n)
            .detail("reason", "fewer than two retained replicas")
            .verdict(Verdict::Inconclusive);
    }
    let cols: Vec<Vec<f64>> = (0..k).map(|j| counts.column(j)).collect();
    let mut fanos = Vec::new();
    let mut means_ok = true;
    let mut z_scores = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let m = Moments::from_slice(col);
        let fano = if m.mean() > 0.0 { m.variance() / m.mean() } else { f64::NAN };
        fanos.push(fano);
        let (mu, se) = expected[j];
        let z = (m.mean() - mu) / (m.sem().powi(2) + se * se).sqrt();
        means_ok &= z.abs() <= MEAN_Z;
        z_scores.push(z);
    }
    let mut corr = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            corr.push(correlation(&cols[a], &cols[b]));
        }
    }
    let fano_ok = fanos.iter().all(|f| (FANO_LOW..=FANO_HIGH).contains(f));
    let corr_ok = corr.iter().all(|c| c.abs() < MAX_CORRELATION);
    let worst = fanos
        .iter()
        .copied()
        .max_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()))
        .unwrap_or(f64::NAN);
    let se_fano = (2.0 / n as f64).sqrt();
    let as_list = |v: &[f64]| v.iter().map(|&x| num(x)).collect::<Vec<_>>();
    StatReport::new("kurtz_test", worst, 1.96 * se_fano, n)
        .detail("fano", as_list(&fanos))
        .detail("correlations", as_list(&corr))
        .detail("mean_z", as_list(&z_scores))
        .detail(
            "observed_means",
            as_list(&cols.iter().map(|c| Moments::from_slice(c).mean()).collect::<Vec<_>>()),
        )
        .detail("expected_means", as_list(&expected.iter().map(|e| e.0).collect::<Vec<_>>()))
        .detail("tolerance_fano_low", FANO_LOW)
        .detail("tolerance_fano_high", FANO_HIGH)
        .detail("tolerance_abs_correlation", MAX_CORRELATION)
        .detail("tolerance_mean_z", MEAN_Z)
        .decide(fano_ok && corr_ok && means_ok)
}

pub fn kurtz_test(p: &KurtzParams) -> Result<StatReport> {
    let (counts, attempts) = kurtz_counts(p)?;
    let expected = avoidance_means(p);
    let mut r = kurtz_verdict(&counts, &expected);
    r.set("attempts", attempts);
    r.set("retained", counts.counts_per_replica.len() as u64);
    r.set("field_radius", field_radius(p, 1e-4));
    if (counts.counts_per_replica.len() as u64) < p.replicas {
        r.verdict = Verdict::Inconclusive;
    }
    Ok(r)
}
