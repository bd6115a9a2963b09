//! Planar geometry, seeded random streams and the point-process / random-walk
//! primitives every engine is built from.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A position (or displacement) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Squared Euclidean norm. Hot-path comparisons use this, never `norm`.
    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    #[inline]
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Purpose tags used to split one replica's stream into independent sub-streams.
pub mod tags {
    pub const FIELD: u64 = 0x6669_656c_64;
    pub const WALKERS: u64 = 0x7761_6c6b;
    pub const CLOCKS: u64 = 0x636c_6f63_6b;
    pub const ORACLE: u64 = 0x6f72_6163_6c65;
    pub const PROGENY: u64 = 0x7072_6f67;
    pub const WAITING: u64 = 0x7761_6974;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream keyed by `(master_seed, stream_index)`.
///
/// Backed by ChaCha8 with the stream index mapped onto ChaCha's native stream
/// selector, so streams sharing a master seed never overlap.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    /// Stream for replica `replica` and a purpose tag, independent of scheduling.
    pub fn for_replica(master_seed: u64, replica: u64, tag: u64) -> Self {
        Self::new(master_seed, splitmix64(splitmix64(replica) ^ tag))
    }

    /// Child stream derived from this stream's key (not its position).
    pub fn substream(&self, tag: u64) -> Self {
        Self::new(
            self.master_seed,
            splitmix64(splitmix64(self.stream_index) ^ tag),
        )
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// A small fast generator seeded from this stream, for per-walker use.
    pub fn walker_rng(&mut self) -> WalkRng {
        Xoshiro256PlusPlus::seed_from_u64(self.rng.next_u64())
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Per-walker generator. Cloning it checkpoints the walker's future draws.
pub type WalkRng = Xoshiro256PlusPlus;

/// The region `r_inner < |x| <= r_outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Annulus {
    pub fn new(r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(r_inner.is_finite() && r_outer.is_finite()) || r_inner < 0.0 || r_inner > r_outer {
            return Err(invalid(format!(
                "annulus requires 0 <= r_inner <= r_outer, got ({r_inner}, {r_outer})"
            )));
        }
        Ok(Self { r_inner, r_outer })
    }

    pub fn disk(radius: f64) -> Result<Self> {
        Self::new(0.0, radius)
    }

    pub fn area(&self) -> f64 {
        PI * (self.r_outer * self.r_outer - self.r_inner * self.r_inner)
    }

    pub fn contains(&self, p: Point2) -> bool {
        let d2 = p.norm_sq();
        d2 > self.r_inner * self.r_inner && d2 <= self.r_outer * self.r_outer
    }
}

/// Poisson(`mean`) draw as an integer; `mean == 0` short-circuits to 0.
pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    let v: f64 = d.sample(rng);
    v as u64
}

/// Uniform point on an annulus via inverse CDF of the radial coordinate.
#[inline]
pub fn uniform_in_annulus<R: Rng + ?Sized>(ann: &Annulus, rng: &mut R) -> Point2 {
    let (a2, b2) = (ann.r_inner * ann.r_inner, ann.r_outer * ann.r_outer);
    let u: f64 = rng.random();
    let r = (a2 + u * (b2 - a2)).sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    Point2::new(r * theta.cos(), r * theta.sin())
}

/// Poisson point process of the given intensity restricted to `ann`.
pub fn sample_ppp_annulus<R: Rng + ?Sized>(
    intensity: f64,
    ann: &Annulus,
    rng: &mut R,
) -> Result<Vec<Point2>> {
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(invalid(format!(
            "intensity must be finite and >= 0, got {intensity}"
        )));
    }
    let n = poisson_count(intensity * ann.area(), rng);
    Ok((0..n).map(|_| uniform_in_annulus(ann, rng)).collect())
}

/// One jump of the continuous-time walk: a standard 2-D Gaussian.
#[inline]
pub fn gaussian_jump<R: Rng + ?Sized>(rng: &mut R) -> Point2 {
    Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Sum of `j` independent jumps, drawn as one Gaussian of variance `j`.
#[inline]
pub fn displacement_after_jumps<R: Rng + ?Sized>(j: u64, rng: &mut R) -> Point2 {
    if j == 0 {
        return Point2::ORIGIN;
    }
    gaussian_jump(rng) * (j as f64).sqrt()
}

/// Number of jumps of a rate-1 clock during an interval of length `dt`.
pub fn jump_count<R: Rng + ?Sized>(dt: f64, rng: &mut R) -> Result<u64> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(invalid(format!("dt must be finite and >= 0, got {dt}")));
    }
    Ok(poisson_count(dt, rng))
}

#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

#[inline]
fn wrap_coord(v: f64, side: f64) -> f64 {
    let half = 0.5 * side;
    if (-half..half).contains(&v) {
        return v;
    }
    let mut w = v - side * ((v + half) / side).floor();
    if w >= half {
        w -= side;
    }
    if w < -half {
        w += side;
    }
    w
}

/// Map a point into the canonical periodic box `[-L/2, L/2)^2`.
pub fn wrap_periodic(p: Point2, box_side: f64) -> Point2 {
    Point2::new(wrap_coord(p.x, box_side), wrap_coord(p.y, box_side))
}

/// Inverse-CDF sampler for a fixed Poisson mean, for loops that draw the same
/// law millions of times.
#[derive(Debug, Clone)]
pub struct PoissonTable {
    mean: f64,
    cdf: Vec<f64>,
}

impl PoissonTable {
    pub fn new(mean: f64) -> Result<Self> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(invalid(format!("Poisson mean must be >= 0, got {mean}")));
        }
        let hi = (mean + 14.0 * mean.sqrt() + 30.0).ceil() as usize;
        let mut cdf = Vec::with_capacity(hi + 1);
        let mut acc = 0.0;
        for k in 0..=hi {
            let lp = if mean == 0.0 {
                if k == 0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                -mean + k as f64 * mean.ln() - statrs::function::gamma::ln_gamma(k as f64 + 1.0)
            };
            acc += lp.exp();
            cdf.push(acc);
        }
        Ok(Self { mean, cdf })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c < u);
        if k < self.cdf.len() {
            return k as u64;
        }
        // Past the tabulated mass (< 1e-20): exact rejection from the tail.
        let last = (self.cdf.len() - 1) as u64;
        loop {
            let v = poisson_count(self.mean, rng);
            if v > last {
                return v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::summary::{ks_two_sample, Moments};
    use rand::RngCore;
    use proptest::prelude::*;

    #[test]
    fn zero_intensity_and_degenerate_annulus_are_empty() {
        let mut rng = RngStream::new(1, 0);
        let a = Annulus::new(0.0, 10.0).unwrap();
        assert!(sample_ppp_annulus(0.0, &a, &mut rng).unwrap().is_empty());
        let d = Annulus::new(5.0, 5.0).unwrap();
        assert!(sample_ppp_annulus(2.0, &d, &mut rng).unwrap().is_empty());
        assert!(sample_ppp_annulus(-1.0, &a, &mut rng).is_err());
        assert!(Annulus::new(3.0, 2.0).is_err());
    }

    #[test]
    fn ppp_mean_count_matches_area() {
        let mut rng = RngStream::new(2, 0);
        let a = Annulus::new(0.0, 10.0).unwrap();
        let reps = 100_000;
        let total: usize = (0..reps)
            .map(|_| sample_ppp_annulus(1.0, &a, &mut rng).unwrap().len())
            .sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - 100.0 * PI).abs() < 3.0, "mean {mean}");
    }

    #[test]
    fn ppp_points_lie_in_annulus() {
        let mut rng = RngStream::new(3, 0);
        let a = Annulus::new(2.0, 3.0).unwrap();
        for p in sample_ppp_annulus(50.0, &a, &mut rng).unwrap() {
            assert!(a.contains(p) || (p.norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_jump_moments() {
        let mut rng = RngStream::new(4, 0);
        let n = 1_000_000;
        let (mut mx, mut my) = (Moments::default(), Moments::default());
        let mut sxy = 0.0;
        for _ in 0..n {
            let p = gaussian_jump(&mut rng);
            mx.push(p.x);
            my.push(p.y);
            sxy += p.x * p.y;
        }
        for m in [&mx, &my] {
            assert!((0.995..=1.005).contains(&m.variance()), "{}", m.variance());
            assert!(m.mean().abs() <= 0.004, "{}", m.mean());
        }
        let corr = (sxy / n as f64 - mx.mean() * my.mean())
            / (mx.variance() * my.variance()).sqrt();
        assert!(corr.abs() <= 0.01, "{corr}");
    }

    #[test]
    fn multi_jump_displacement_variance_adds() {
        let mut rng = RngStream::new(5, 0);
        assert_eq!(displacement_after_jumps(0, &mut rng), Point2::ORIGIN);
        let n = 1_000_000;
        let mut m = Moments::default();
        let mut radial = 0.0;
        for _ in 0..n {
            let p = displacement_after_jumps(4, &mut rng);
            m.push(p.x);
            radial += p.norm_sq();
        }
        assert!((3.97..=4.03).contains(&m.variance()), "{}", m.variance());
        let second = radial / n as f64;
        assert!((second / 8.0 - 1.0).abs() < 0.01, "{second}");
    }

    #[test]
    fn single_jump_displacement_matches_gaussian_jump() {
        let mut a = RngStream::new(6, 0);
        let mut b = RngStream::new(6, 1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| displacement_after_jumps(1, &mut a).x).collect();
        let ys: Vec<f64> = (0..n).map(|_| gaussian_jump(&mut b).x).collect();
        let (_, p) = ks_two_sample(&xs, &ys);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn jump_count_laws() {
        let mut rng = RngStream::new(7, 0);
        assert_eq!(jump_count(0.0, &mut rng).unwrap(), 0);
        assert!(jump_count(-0.1, &mut rng).is_err());
        let n = 1_000_000;
        let nonzero = (0..n)
            .filter(|_| jump_count(0.01, &mut rng).unwrap() > 0)
            .count();
        let frac = nonzero as f64 / n as f64;
        assert!((frac - (1.0 - (-0.01f64).exp())).abs() < 3e-4, "{frac}");
        let mean = (0..10_000)
            .map(|_| jump_count(100.0, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / 1e4;
        assert!((mean - 100.0).abs() < 0.3, "{mean}");
    }

    #[test]
    fn poisson_table_matches_mean_and_variance() {
        let t = PoissonTable::new(175.0).unwrap();
        let mut rng = RngStream::new(8, 0);
        let mut m = Moments::default();
        for _ in 0..200_000 {
            m.push(t.sample(&mut rng) as f64);
        }
        assert!((m.mean() - 175.0).abs() < 0.15, "{}", m.mean());
        assert!((m.variance() / 175.0 - 1.0).abs() < 0.02);
        let z = PoissonTable::new(0.0).unwrap();
        assert_eq!(z.sample(&mut rng), 0);
    }

    #[test]
    fn wrap_examples() {
        let l = 800.0;
        assert_eq!(wrap_periodic(Point2::new(0.0, 0.0), l), Point2::new(0.0, 0.0));
        assert_eq!(wrap_periodic(Point2::new(401.0, 0.0), l), Point2::new(-399.0, 0.0));
        assert_eq!(
            wrap_periodic(Point2::new(-1203.0, 799.0), l),
            Point2::new(397.0, -1.0)
        );
        assert_eq!(wrap_periodic(Point2::new(400.0, -400.0), l), Point2::new(-400.0, -400.0));
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let mut a = RngStream::new(99, 3);
        let mut b = RngStream::new(99, 3);
        let mut c = RngStream::new(99, 4);
        let va: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        let vc: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
        let s = RngStream::new(99, 3);
        assert_eq!(s.substream(1).stream_index(), s.substream(1).stream_index());
        assert_ne!(s.substream(1).stream_index(), s.substream(2).stream_index());
    }

    #[test]
    fn disjoint_annulus_counts_uncorrelated_across_substreams() {
        let base = RngStream::new(10, 0);
        let inner = Annulus::new(0.0, 2.0).unwrap();
        let outer = Annulus::new(2.0, 3.0).unwrap();
        let n = 100_000;
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for rep in 0..n {
            let mut r1 = base.substream(2 * rep);
            let mut r2 = base.substream(2 * rep + 1);
            let a = sample_ppp_annulus(1.0, &inner, &mut r1).unwrap().len() as f64;
            let b = sample_ppp_annulus(1.0, &outer, &mut r2).unwrap().len() as f64;
            sa += a;
            sb += b;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        let nf = n as f64;
        let cov = sab / nf - sa * sb / (nf * nf);
        let va = saa / nf - (sa / nf).powi(2);
        let vb = sbb / nf - (sb / nf).powi(2);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.02, "{corr}");
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_canonical(x in -1e6f64..1e6, y in -1e6f64..1e6, l in 0.5f64..2000.0) {
            let w = wrap_periodic(Point2::new(x, y), l);
            prop_assert!(w.x >= -l / 2.0 && w.x < l / 2.0);
            prop_assert!(w.y >= -l / 2.0 && w.y < l / 2.0);
            prop_assert_eq!(wrap_periodic(w, l), w);
        }

        #[test]
        fn same_key_same_draws(seed in any::<u64>(), idx in any::<u64>()) {
            let mut a = RngStream::new(seed, idx);
            let mut b = RngStream::new(seed, idx);
            for _ in 0..8 {
                prop_assert_eq!(gaussian_jump(&mut a), gaussian_jump(&mut b));
            }
        }
    }
}
