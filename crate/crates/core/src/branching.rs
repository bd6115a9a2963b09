//! Poisson Galton–Watson analytics and the dominating pool process.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::geomfield::{exp1, poisson_count, tags, RngStream};
use crate::trajectory::{Event, EventKind, Trajectory};

/// Offspring law of a Poisson Galton–Watson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwParams {
    /// Mean number of children per individual.
    pub offspring_mean: f64,
    /// Mean size of the first generation.
    pub root_mean: f64,
}

impl GwParams {
    pub fn new(offspring_mean: f64, root_mean: f64) -> Result<Self> {
        for (name, v) in [("offspring_mean", offspring_mean), ("root_mean", root_mean)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} > 0 and finite, got {v}")));
            }
        }
        Ok(Self {
            offspring_mean,
            root_mean,
        })
    }
}

/// Extinction probability `q`: the smallest root of `q = exp(lambda (q - 1))`.
pub fn extinction_prob(lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!("lambda > 0, got {lambda}")));
    }
    if lambda <= 1.0 {
        return Ok(1.0);
    }
    let g = |q: f64| (lambda * (q - 1.0)).exp();
    // The iteration from 0 increases to the smallest root; damping only
    // matters close to criticality where the contraction factor nears 1.
    let mut q = 0.0;
    for _ in 0..100_000 {
        let next = 0.5 * q + 0.5 * g(q);
        if (next - q).abs() < 1e-10 {
            q = next;
            break;
        }
        q = next;
    }
    for _ in 0..50 {
        let f = g(q) - q;
        let df = lambda * g(q) - 1.0;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        q -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    Ok(q)
}

/// Lower bound `(1 - 1/e) (1 - q(lambda))` on the probability that the pool
/// started from a unit seed grows without bound.
pub fn survival_lower_bound(lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 1.0) {
        return Err(invalid(format!("lambda > 1, got {lambda}")));
    }
    Ok((1.0 - (-1.0f64).exp()) * (1.0 - extinction_prob(lambda)?))
}

/// Borel(1) law: total progeny of a critical Poisson tree, root included.
pub fn borel_pmf(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n >= 1"));
    }
    let x = n as f64;
    Ok((-x + (x - 1.0) * x.ln() - ln_gamma(x + 1.0)).exp())
}

/// Total size of all generations after the root, `(total, capped)`.
///
/// Stops with `capped = true` as soon as the running total exceeds `cap`.
pub fn sample_total_progeny<R: Rng + ?Sized>(params: &GwParams, cap: u64, rng: &mut R) -> (u64, bool) {
    let mut gen = poisson_count(params.root_mean, rng);
    let mut total = gen;
    while gen > 0 {
        if total > cap {
            return (total, true);
        }
        gen = poisson_count(gen as f64 * params.offspring_mean, rng);
        total += gen;
    }
    (total, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominatingConfig {
    /// Constant `C` in the arrival hazard bound `r(R) <= C R`.
    pub hazard_constant: f64,
    pub step_count: u64,
    pub master_seed: u64,
    pub replica: u64,
    /// Progeny draws above this size end the path with a cap-hit event.
    pub progeny_cap: u64,
}

impl DominatingConfig {
    pub fn new(hazard_constant: f64, step_count: u64) -> Self {
        Self {
            hazard_constant,
            step_count,
            master_seed: 0,
            replica: 0,
            progeny_cap: 10_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hazard_constant.is_finite() && self.hazard_constant > 0.0) {
            return Err(invalid(format!(
                "hazard_constant > 0, got {}",
                self.hazard_constant
            )));
        }
        if self.progeny_cap == 0 {
            return Err(invalid("progeny_cap >= 1"));
        }
        Ok(())
    }
}

/// Builds the dominating path from given jump sizes `xs` (masses added, each
/// at least 1) and unit waiting times `ts`: the pool radius is
/// `R_n = sqrt((X_0 + ... + X_n) / pi)` and the n-th jump happens at
/// `tau_n = sum_{k<n} T_k / (C R_k)`.
pub fn dominating_from_inputs(xs: &[u64], ts: &[f64], hazard_constant: f64) -> Result<Trajectory> {
    if xs.is_empty() || xs.contains(&0) {
        return Err(invalid("jump sizes must be nonempty and >= 1"));
    }
    if ts.len() + 1 < xs.len() {
        return Err(invalid("need one waiting time per jump after the first"));
    }
    if !(hazard_constant > 0.0) {
        return Err(invalid("hazard_constant > 0"));
    }
    let extra = |x: u64| if x > 1 { vec![x - 1] } else { Vec::new() };
    let mut mass = xs[0];
    let mut traj = Trajectory::new(0.0);
    traj.push(Event::new(0.0, EventKind::InitialCascade, mass, extra(xs[0]), false));
    let mut tau = 0.0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        let r = traj.events.last().unwrap().radius_after;
        tau += ts[k - 1] / (hazard_constant * r);
        mass += x;
        let mut rounds = vec![1];
        rounds.extend(extra(x));
        traj.push(Event::new(tau, EventKind::Arrival, mass, rounds, false));
    }
    traj.horizon = tau;
    Ok(traj)
}

/// Random dominating path with `X_n = 1 + (critical progeny of a unit-mean
/// root)` and `T_n ~ Exp(1)`.
pub fn dominating_trajectory(cfg: &DominatingConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let crit = GwParams::new(1.0, 1.0)?;
    let mut prog = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::PROGENY);
    let mut wait = RngStream::for_replica(cfg.master_seed, cfg.replica, tags::WAITING);
    let mut xs = Vec::with_capacity(cfg.step_count as usize + 1);
    let mut ts = Vec::with_capacity(cfg.step_count as usize);
    let mut capped = false;
    for n in 0..=cfg.step_count {
        let (p, c) = sample_total_progeny(&crit, cfg.progeny_cap, &mut prog);
        xs.push(1 + p);
        if n > 0 {
            ts.push(exp1(&mut wait));
        }
        if c {
            capped = true;
            break;
        }
    }
    let mut traj = dominating_from_inputs(&xs, &ts, cfg.hazard_constant)?;
    if capped {
        let last = traj.events.last_mut().unwrap();
        last.exploded = true;
        if last.kind == EventKind::Arrival {
            last.kind = EventKind::CapHit;
        }
        traj.exploded_at = Some(last.time);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extinction_values() {
        assert_eq!(extinction_prob(1.0).unwrap(), 1.0);
        assert_eq!(extinction_prob(0.5).unwrap(), 1.0);
        assert!(extinction_prob(0.0).is_err());
        let mut prev = 1.0;
        for i in 1..=20 {
            let lambda = 1.0 + 0.1 * i as f64;
            let q = extinction_prob(lambda).unwrap();
            assert!(((lambda * (q - 1.0)).exp() - q).abs() < 1e-12);
            assert!(q < prev);
            prev = q;
        }
    }

    #[test]
    fn survival_bound_domain() {
        assert!(survival_lower_bound(1.0).is_err());
        assert!(survival_lower_bound(1.0 + 1e-6).unwrap() < 1e-5);
        let b = survival_lower_bound(10.0).unwrap();
        assert!((b - 0.632092).abs() < 1e-5, "{b}");
    }

    #[test]
    fn borel_small_values() {
        let e = std::f64::consts::E;
        assert!(borel_pmf(0).is_err());
        assert!((borel_pmf(1).unwrap() - 1.0 / e).abs() < 1e-15);
        assert!((borel_pmf(2).unwrap() - e.powi(-2)).abs() < 1e-15);
        assert!((borel_pmf(3).unwrap() - 1.5 * e.powi(-3)).abs() < 1e-15);
        assert!(borel_pmf(1_000_000).unwrap().is_finite());
    }

    #[test]
    fn borel_partial_sum() {
        let s: f64 = (1..=1_000_000u64).map(|n| borel_pmf(n).unwrap()).sum();
        // tail beyond N is about sqrt(2 / (pi N))
        assert!(s < 1.0 && 1.0 - s < 1e-3, "{s}");
    }

    #[test]
    fn forced_inputs_give_closed_form_times() {
        let t = dominating_from_inputs(&[1, 1, 1], &[1.0, 1.0], 1.0).unwrap();
        let pi = std::f64::consts::PI;
        assert!((t.events[1].time - pi.sqrt()).abs() < 1e-12);
        assert!((t.events[2].time - (pi.sqrt() + (pi / 2.0).sqrt())).abs() < 1e-12);
        let zero = dominating_from_inputs(&[1], &[], 1.0).unwrap();
        assert_eq!(zero.events.len(), 1);
    }
}
