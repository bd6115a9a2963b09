//! The instantaneous engulfing cascade.
//!
//! A pool of integer mass `m` occupies the closed disk of radius `sqrt(m / pi)`.
//! Each round absorbs every active particle in the shell between the previous
//! round's radius and the current one; the round count is added to the mass and
//! the recursion stops at the first empty round, or when the mass passes `cap`.
//! Mass is the source of truth: radii are always recomputed from it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geomfield::Point2;

/// Default explosion-surrogate cap on total mass.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// `sqrt(mass / pi)`, the radius of a pool of the given mass.
pub fn radius_from_mass(mass: u64) -> Result<f64> {
    if mass == 0 {
        return Err(invalid("pool mass must be >= 1"));
    }
    Ok(pool_radius(mass))
}

#[inline]
pub(crate) fn pool_radius(mass: u64) -> f64 {
    radius_sq(mass).sqrt()
}

/// Squared radius of a pool of the given mass; the comparison key everywhere.
#[inline]
pub fn radius_sq(mass: u64) -> f64 {
    mass as f64 / PI
}

/// Pool state: integer absorbed mass (the unit seed included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    mass: u64,
}

impl PoolState {
    pub fn new(mass: u64) -> Result<Self> {
        if mass == 0 {
            return Err(invalid("pool mass must be >= 1"));
        }
        Ok(Self { mass })
    }

    pub fn seed() -> Self {
        Self { mass: 1 }
    }

    pub fn mass(&self) -> u64 {
        self.mass
    }

    pub fn radius(&self) -> f64 {
        pool_radius(self.mass)
    }

    pub fn radius_sq(&self) -> f64 {
        radius_sq(self.mass)
    }

    /// Closed-ball membership test.
    #[inline]
    pub fn covers(&self, p: Point2) -> bool {
        p.norm_sq() <= self.radius_sq()
    }

    pub fn absorb(&mut self, count: u64) {
        self.mass += count;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    /// Per-round absorbed counts.
    pub rounds: Vec<u64>,
    /// `radii[0]` is the starting radius, `radii[j]` the radius after round `j`.
    pub radii: Vec<f64>,
    pub final_mass: u64,
    pub exploded: bool,
    /// Absorbed particle ids, grouped by round, ascending within a round.
    pub absorbed_ids: Vec<u64>,
}

impl CascadeResult {
    pub fn absorbed(&self) -> u64 {
        self.rounds.iter().sum()
    }

    pub fn final_radius(&self) -> f64 {
        pool_radius(self.final_mass)
    }

    /// Mass whose radius bounded the outermost shell that was examined.
    pub fn reach_mass(&self) -> u64 {
        match (self.exploded, self.rounds.last()) {
            (true, Some(&last)) => self.final_mass - last,
            _ => self.final_mass,
        }
    }
}

/// A set of active particles that can report the ids lying in a radial shell.
pub trait RadialField {
    /// Append the ids of particles with `lo_sq < |p|^2 <= hi_sq` to `out`.
    fn collect_shell(&self, lo_sq: f64, hi_sq: f64, out: &mut Vec<u64>);
}

/// Particles sorted once by squared radius; each shell is a binary-searched slice.
#[derive(Debug, Clone)]
pub struct SortedField {
    keys: Vec<(f64, u64)>,
}

impl SortedField {
    pub fn new(active: &[(u64, Point2)]) -> Self {
        let mut keys: Vec<(f64, u64)> = active.iter().map(|&(id, p)| (p.norm_sq(), id)).collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { keys }
    }
}

impl RadialField for SortedField {
    fn collect_shell(&self, lo_sq: f64, hi_sq: f64, out: &mut Vec<u64>) {
        let start = self.keys.partition_point(|k| k.0 <= lo_sq);
        let end = self.keys.partition_point(|k| k.0 <= hi_sq);
        if end > start {
            out.extend(self.keys[start..end].iter().map(|k| k.1));
        }
    }
}

/// Run the cascade against any radial field. `exclusion_sq` is the squared
/// radius inside which nothing is counted (the pre-arrival pool).
///
/// Callers guarantee `1 <= initial_mass <= cap`; the field is not mutated,
/// so absorbed particles must be deactivated by the caller.
pub fn cascade_in<F: RadialField + ?Sized>(
    field: &F,
    initial_mass: u64,
    exclusion_sq: f64,
    cap: u64,
) -> CascadeResult {
    debug_assert!(initial_mass >= 1 && cap >= initial_mass);
    let mut mass = initial_mass;
    let mut lo = exclusion_sq;
    let mut rounds = Vec::new();
    let mut radii = vec![pool_radius(mass)];
    let mut absorbed_ids = Vec::new();
    let mut exploded = false;
    loop {
        let hi = radius_sq(mass);
        let before = absorbed_ids.len();
        field.collect_shell(lo, hi, &mut absorbed_ids);
        absorbed_ids[before..].sort_unstable();
        let xi = (absorbed_ids.len() - before) as u64;
        rounds.push(xi);
        mass += xi;
        radii.push(pool_radius(mass));
        if xi == 0 {
            break;
        }
        if mass > cap {
            exploded = true;
            break;
        }
        lo = hi;
    }
    CascadeResult {
        rounds,
        radii,
        final_mass: mass,
        exploded,
        absorbed_ids,
    }
}

/// Engulfing cascade over an explicit list of active particles.
///
/// `exclusion_radius` is the pool radius before the triggering arrival (0 at
/// time zero); every active particle must lie strictly outside it.
pub fn cascade(
    active: &[(u64, Point2)],
    initial_mass: u64,
    exclusion_radius: f64,
    cap: u64,
) -> Result<CascadeResult> {
    if initial_mass == 0 {
        return Err(invalid("initial_mass must be >= 1"));
    }
    if cap < initial_mass {
        return Err(invalid(format!(
            "cap ({cap}) must be >= initial_mass ({initial_mass})"
        )));
    }
    if !(exclusion_radius.is_finite() && exclusion_radius >= 0.0) {
        return Err(invalid("exclusion_radius must be finite and >= 0"));
    }
    let ex_sq = exclusion_radius * exclusion_radius;
    if let Some(&(id, p)) = active
        .iter()
        .find(|(_, p)| !p.is_finite() || p.norm_sq() <= ex_sq)
    {
        return Err(Error::Precondition(format!(
            "active particle {id} at |p| = {} is not outside the exclusion radius {exclusion_radius}",
            p.norm()
        )));
    }
    Ok(cascade_in(&SortedField::new(active), initial_mass, ex_sq, cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomfield::{sample_ppp_annulus, Annulus, RngStream};
    use crate::stats::summary::chi_square_gof;
    use proptest::prelude::*;

    fn on_axis(rs: &[f64]) -> Vec<(u64, Point2)> {
        rs.iter()
            .enumerate()
            .map(|(i, &r)| (i as u64, Point2::new(r, 0.0)))
            .collect()
    }

    #[test]
    fn hand_executed_chain() {
        let res = cascade(&on_axis(&[0.5, 0.7, 0.9]), 1, 0.0, DEFAULT_CAP).unwrap();
        assert_eq!(res.rounds, vec![1, 1, 1, 0]);
        assert_eq!(res.final_mass, 4);
        assert!(!res.exploded);
        assert!((res.final_radius() - 1.128379).abs() < 1e-6);
        assert_eq!(res.absorbed_ids, vec![0, 1, 2]);
        for j in 1..res.radii.len() {
            let lhs = res.radii[j].powi(2);
            let rhs = res.radii[j - 1].powi(2) + res.rounds[j - 1] as f64 / PI;
            assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * lhs.max(1.0));
        }
    }

    #[test]
    fn nothing_to_absorb() {
        let res = cascade(&[], 7, (6.0 / PI).sqrt(), DEFAULT_CAP).unwrap();
        assert_eq!(res.rounds, vec![0]);
        assert_eq!(res.final_mass, 7);
        assert!(!res.exploded);
        let res = cascade(&on_axis(&[2.0]), 1, 0.0, DEFAULT_CAP).unwrap();
        assert_eq!(res.rounds, vec![0]);
        assert_eq!(res.final_mass, 1);
    }

    #[test]
    fn radius_examples() {
        assert!((radius_from_mass(1).unwrap() - 0.564190).abs() < 1e-6);
        assert!((radius_from_mass(4).unwrap() - 1.128379).abs() < 1e-6);
        assert!((radius_from_mass(100).unwrap() - 5.641896).abs() < 1e-6);
        assert!(radius_from_mass(0).is_err());
    }

    #[test]
    fn boundary_particle_is_absorbed() {
        let r0 = radius_from_mass(1).unwrap();
        let res = cascade(&on_axis(&[r0]), 1, 0.0, DEFAULT_CAP).unwrap();
        assert_eq!(res.rounds[0], 1);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            cascade(&on_axis(&[0.3]), 2, 0.5, DEFAULT_CAP),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            cascade(&[], 5, 0.0, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(cascade(&[], 0, 0.0, 4).is_err());
    }

    #[test]
    fn cap_declares_explosion() {
        let dense: Vec<f64> = (1..200).map(|i| 0.01 * i as f64).collect();
        let res = cascade(&on_axis(&dense), 1, 0.0, 10).unwrap();
        assert!(res.exploded);
        assert!(res.final_mass > 10);
        assert_ne!(*res.rounds.last().unwrap(), 0);
        assert_eq!(res.final_mass, 1 + res.absorbed());
    }

    /// Class probabilities of the added mass for Poisson(lam) root and
    /// offspring, by enumerating every generation-size sequence with total n.
    fn enumerated_class_probs(lam: f64, max_n: u64) -> Vec<f64> {
        fn pois(mean: f64, k: u64) -> f64 {
            let mut p = (-mean).exp();
            for i in 1..=k {
                p *= mean / i as f64;
            }
            p
        }
        fn walk(lam: f64, prev: u64, remaining: u64, acc: f64, out: &mut f64) {
            // next generation ends the tree
            if remaining == 0 {
                *out += acc * pois(lam * prev as f64, 0);
                return;
            }
            for g in 1..=remaining {
                walk(lam, g, remaining - g, acc * pois(lam * prev as f64, g), out);
            }
        }
        let mut probs: Vec<f64> = (0..=max_n)
            .map(|n| {
                let mut p = 0.0;
                walk(lam, 1, n, 1.0, &mut p);
                p
            })
            .collect();
        let tail = 1.0 - probs.iter().sum::<f64>();
        probs.push(tail);
        probs
    }

    fn one_shot_law(lam: f64, seed: u64) -> f64 {
        let reps = 100_000u64;
        let field = Annulus::disk(10.0).unwrap();
        let mut counts = [0u64; 5];
        for rep in 0..reps {
            let mut rng = RngStream::new(seed, rep);
            let pts = sample_ppp_annulus(lam, &field, &mut rng).unwrap();
            let active: Vec<(u64, Point2)> =
                pts.into_iter().enumerate().map(|(i, p)| (i as u64, p)).collect();
            let res = cascade(&active, 1, 0.0, 50).unwrap();
            let added = res.final_mass - 1;
            counts[(added.min(4)) as usize] += 1;
        }
        let probs = enumerated_class_probs(lam, 3);
        chi_square_gof(&counts, &probs).1
    }

    #[test]
    fn one_shot_cascade_matches_branching_law() {
        for (lam, seed) in [(0.5, 11), (1.0, 12)] {
            let p = one_shot_law(lam, seed);
            assert!(p > 0.001, "lambda {lam}: p = {p}");
        }
    }

    #[test]
    fn enumeration_oracle_sanity() {
        let p = enumerated_class_probs(1.0, 3);
        assert!((p[0] - (-1f64).exp()).abs() < 1e-15);
        assert!((p[1] - (-2f64).exp()).abs() < 1e-15);
        assert!((p[2] - 1.5 * (-3f64).exp()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn conservation_emptiness_and_order_invariance(
            pts in prop::collection::vec((0.0f64..6.0, 0.0f64..std::f64::consts::TAU), 0..120),
            initial in 1u64..5,
            seed in any::<u64>(),
        ) {
            let ex = radius_from_mass(initial).unwrap() * 0.999;
            let active: Vec<(u64, Point2)> = pts.iter().enumerate()
                .filter(|(_, (r, _))| *r > ex + 1e-9)
                .map(|(i, (r, t))| (i as u64, Point2::new(r * t.cos(), r * t.sin())))
                .collect();
            let res = cascade(&active, initial, ex, DEFAULT_CAP).unwrap();
            prop_assert_eq!(res.final_mass - initial, res.absorbed());
            prop_assert_eq!(res.absorbed() as usize, res.absorbed_ids.len());
            prop_assert_eq!(*res.rounds.last().unwrap(), 0);
            let r2 = radius_sq(res.final_mass);
            let absorbed: std::collections::BTreeSet<u64> = res.absorbed_ids.iter().copied().collect();
            for (id, p) in &active {
                if !absorbed.contains(id) {
                    prop_assert!(p.norm_sq() > r2);
                }
            }
            let mut shuffled = active.clone();
            let k = (seed as usize) % shuffled.len().max(1);
            shuffled.rotate_left(k);
            shuffled.reverse();
            let again = cascade(&shuffled, initial, ex, DEFAULT_CAP).unwrap();
            prop_assert_eq!(again, res);
        }
    }
}
