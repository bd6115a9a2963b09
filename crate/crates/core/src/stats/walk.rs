//! Single-walker primitives shared by the field estimators.

use rand::Rng;
use rayon::prelude::*;

use crate::geomfield::{exp1, gaussian_jump, Point2, PoissonTable};

/// First jump time at or before `t_max` that lands in the closed disk of
/// squared radius `r_sq`, and the position at that time or at `t_max`.
#[inline]
pub fn first_entry<R: Rng + ?Sized>(start: Point2, r_sq: f64, t_max: f64, rng: &mut R) -> (Option<f64>, Point2) {
    let mut p = start;
    let mut t = exp1(rng);
    while t <= t_max {
        p = p + gaussian_jump(rng);
        if p.norm_sq() <= r_sq {
            return (Some(t), p);
        }
        t += exp1(rng);
    }
    (None, p)
}

/// Position after time `t` of a walker that is never absorbed.
#[inline]
pub fn free_position<R: Rng + ?Sized>(start: Point2, jumps: &PoissonTable, rng: &mut R) -> Point2 {
    let j = jumps.sample(rng);
    if j == 0 {
        return start;
    }
    start + gaussian_jump(rng) * (j as f64).sqrt()
}

/// `f(i)` for every replica index, in index order.
pub fn par_replicas<T: Send>(n: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}
