//! Walker bookkeeping shared by the exact and box engines.
//!
//! Each walker owns its random generator, so its path is a fixed function of
//! its seed no matter when the engine looks at it. Walkers inside the near
//! disk `B(h)` live in a cell grid and are advanced one move at a time through
//! the scheduler. Walkers outside are run ahead privately until their first
//! move that lands inside `B(h)`; that landing becomes their next scheduled
//! event. Since the pool radius stays below `h`, a far walker cannot enter the
//! pool before it lands. A checkpoint taken when the walker left the near disk
//! lets the engine replay it to any intermediate time whenever `h` grows.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::engulf::{cascade_in, radius_sq, CascadeResult, SortedField};
use crate::geomfield::{Point2, WalkRng};
use crate::grid::CellGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    id: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so the max-heap pops the earliest time, then the smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority queue of pending jump times. Ties in time go to the smaller id.
#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    heap: BinaryHeap<Entry>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, id: u32, time: f64) {
        self.heap.push(Entry { time, id });
    }

    /// Earliest pending `(time, id)`, or `None` once nothing is pending.
    pub fn next_event(&mut self) -> Option<(f64, u32)> {
        self.heap.pop().map(|e| (e.time, e.id))
    }

    pub fn peek(&self) -> Option<(f64, u32)> {
        self.heap.peek().map(|e| (e.time, e.id))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Pending-move queue: a heap for continuous times, or one bucket per step
/// when times are whole step indices (order within a step is immaterial).
pub(crate) enum Queue {
    Heap(Scheduler),
    Calendar { buckets: Vec<Vec<u32>>, cursor: usize },
}

impl Queue {
    pub fn calendar(steps: u64) -> Self {
        Queue::Calendar {
            buckets: vec![Vec::new(); steps as usize + 1],
            cursor: 0,
        }
    }

    #[inline]
    fn push(&mut self, id: u32, time: f64) {
        match self {
            Queue::Heap(h) => h.schedule(id, time),
            Queue::Calendar { buckets, .. } => buckets[time as usize].push(id),
        }
    }
}

/// How a walker moves: one move at its current event time, then the gap to
/// the next event time. Both draw only from the walker's own generator.
pub(crate) trait Motion {
    fn step(&self, pos: Point2, rng: &mut WalkRng) -> Point2;
    fn gap(&self, rng: &mut WalkRng) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Zone {
    Near,
    /// Far, with a pending landing inside `B(h)` already applied to `pos`.
    Landed,
    /// Far, with no landing before the end time.
    Idle,
    Released,
}

#[derive(Debug, Clone)]
struct Walker {
    pos: Point2,
    t_next: f64,
    rng: WalkRng,
    ck_pos: Point2,
    ck_t: f64,
    ck_rng: WalkRng,
    /// Smallest squared distance over the far path before its landing.
    min_sq: f64,
    zone: Zone,
}

/// Default near-disk radius for a pool of radius `r`.
pub(crate) fn zone_radius(r: f64) -> f64 {
    r + (0.1 * r).max(6.0)
}

pub(crate) struct Swarm<M: Motion> {
    motion: M,
    end: f64,
    walkers: Vec<Walker>,
    grid: CellGrid,
    cell: f64,
    /// Largest useful grid half-width (the box half-side for periodic runs).
    bound: f64,
    h: f64,
    h_sq: f64,
    h_max: f64,
    sched: Queue,
    active: usize,
}

impl<M: Motion> Swarm<M> {
    /// Walkers start at `positions` with their first event one gap ahead.
    pub fn new(
        motion: M,
        end: f64,
        positions: Vec<Point2>,
        sched: Queue,
        mut rng_for: impl FnMut() -> WalkRng,
        cell: f64,
        bound: f64,
        h_max: f64,
    ) -> Self {
        let walkers: Vec<Walker> = positions
            .into_iter()
            .map(|pos| {
                let mut rng = rng_for();
                let t_next = motion.gap(&mut rng);
                Walker {
                    pos,
                    t_next,
                    ck_pos: pos,
                    ck_t: t_next,
                    ck_rng: rng.clone(),
                    rng,
                    min_sq: f64::INFINITY,
                    zone: Zone::Idle,
                }
            })
            .collect();
        let active = walkers.len();
        let n = walkers.len();
        Self {
            motion,
            end,
            walkers,
            grid: CellGrid::new(1.0, 1.0, n),
            cell,
            bound,
            h: 0.0,
            h_sq: 0.0,
            h_max,
            sched,
            active,
        }
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    /// Field of all walkers at their starting positions; valid before `classify`.
    pub fn initial_field(&self) -> SortedField {
        let pts: Vec<(u64, Point2)> = self
            .walkers
            .iter()
            .enumerate()
            .filter(|(_, w)| w.zone != Zone::Released)
            .map(|(i, w)| (i as u64, w.pos))
            .collect();
        SortedField::new(&pts)
    }

    fn rebuild_grid(&mut self) {
        let extent = self.h.min(self.bound) + self.cell;
        let mut grid = CellGrid::new(extent, self.cell, self.walkers.len());
        for (i, w) in self.walkers.iter().enumerate() {
            if w.zone == Zone::Near {
                grid.insert(i as u32, w.pos);
            }
        }
        self.grid = grid;
    }

    /// Sort walkers into near and far once, at the start of the run.
    pub fn classify(&mut self, h: f64) {
        self.h = h.min(self.h_max);
        self.h_sq = self.h * self.h;
        self.rebuild_grid();
        for id in 0..self.walkers.len() {
            if self.walkers[id].zone != Zone::Released {
                self.place(id as u32);
            }
        }
    }

    /// File a walker in canonical state (`pos` current, `t_next` pending).
    fn place(&mut self, id: u32) {
        let w = &mut self.walkers[id as usize];
        if w.pos.norm_sq() <= self.h_sq {
            w.zone = Zone::Near;
            self.grid.update(id, w.pos);
            if w.t_next <= self.end {
                self.sched.push(id, w.t_next);
            }
        } else {
            self.grid.remove(id);
            self.fast_forward(id);
        }
    }

    fn fast_forward(&mut self, id: u32) {
        let w = &mut self.walkers[id as usize];
        w.ck_pos = w.pos;
        w.ck_t = w.t_next;
        w.ck_rng = w.rng.clone();
        let mut min_sq = w.pos.norm_sq();
        let mut pos = w.pos;
        let mut t = w.t_next;
        loop {
            if t > self.end {
                w.zone = Zone::Idle;
                break;
            }
            pos = self.motion.step(pos, &mut w.rng);
            let d = pos.norm_sq();
            if d <= self.h_sq {
                w.zone = Zone::Landed;
                self.sched.push(id, t);
                break;
            }
            min_sq = min_sq.min(d);
            t += self.motion.gap(&mut w.rng);
        }
        w.pos = pos;
        w.t_next = t;
        w.min_sq = min_sq;
    }

    /// Next pending move with time at most `limit`, skipping stale entries.
    pub fn next_until(&mut self, limit: f64) -> Option<(f64, u32)> {
        match &mut self.sched {
            Queue::Heap(heap) => {
                while let Some((t, id)) = heap.peek() {
                    let w = &self.walkers[id as usize];
                    if !(matches!(w.zone, Zone::Near | Zone::Landed) && w.t_next == t) {
                        heap.next_event();
                        continue;
                    }
                    if t > limit {
                        return None;
                    }
                    heap.next_event();
                    return Some((t, id));
                }
                None
            }
            Queue::Calendar { buckets, cursor } => {
                while *cursor < buckets.len() && *cursor as f64 <= limit {
                    let t = *cursor as f64;
                    match buckets[*cursor].pop() {
                        Some(id) => {
                            let w = &self.walkers[id as usize];
                            if matches!(w.zone, Zone::Near | Zone::Landed) && w.t_next == t {
                                return Some((t, id));
                            }
                        }
                        None => *cursor += 1,
                    }
                }
                None
            }
        }
    }

    /// Perform the walker's pending move and return its new position. The
    /// walker must then be either released or settled.
    pub fn apply_move(&mut self, id: u32) -> Point2 {
        let w = &mut self.walkers[id as usize];
        if w.zone == Zone::Near {
            w.pos = self.motion.step(w.pos, &mut w.rng);
        }
        w.pos
    }

    /// Draw the next gap after a move and refile the walker.
    pub fn settle(&mut self, id: u32) {
        let w = &mut self.walkers[id as usize];
        w.t_next += self.motion.gap(&mut w.rng);
        self.place(id);
    }

    pub fn release(&mut self, id: u32) {
        let w = &mut self.walkers[id as usize];
        debug_assert_ne!(w.zone, Zone::Released);
        w.zone = Zone::Released;
        self.grid.remove(id);
        self.active -= 1;
    }

    /// Add a walker that never moves; returns its id.
    pub fn push_static(&mut self, pos: Point2, rng: WalkRng) -> u32 {
        let id = self.walkers.len() as u32;
        self.walkers.push(Walker {
            pos,
            t_next: f64::INFINITY,
            ck_pos: pos,
            ck_t: f64::INFINITY,
            ck_rng: rng.clone(),
            rng,
            min_sq: pos.norm_sq(),
            zone: Zone::Idle,
        });
        self.active += 1;
        self.place(id);
        id
    }

    /// Grow the near disk to `new_h` at time `s`: far walkers whose path may
    /// have come within `new_h` are replayed to their state at `s` and refiled.
    pub fn expand(&mut self, s: f64, new_h: f64) {
        let new_h = new_h.min(self.h_max);
        if new_h <= self.h {
            return;
        }
        self.h = new_h;
        self.h_sq = new_h * new_h;
        self.rebuild_grid();
        for id in 0..self.walkers.len() {
            let w = &mut self.walkers[id];
            if !matches!(w.zone, Zone::Landed | Zone::Idle) || w.min_sq > self.h_sq {
                continue;
            }
            let mut pos = w.ck_pos;
            let mut t = w.ck_t;
            let mut rng = w.ck_rng.clone();
            while t <= s {
                pos = self.motion.step(pos, &mut rng);
                t += self.motion.gap(&mut rng);
            }
            w.pos = pos;
            w.t_next = t;
            w.rng = rng;
            self.place(id as u32);
        }
    }

    /// Cascade over the near field, growing the near disk until the cascade
    /// never looks past it.
    pub fn cascade(&mut self, s: f64, initial_mass: u64, exclusion_sq: f64, cap: u64) -> CascadeResult {
        if initial_mass > cap {
            // the entering mass alone passes the cap
            return CascadeResult {
                rounds: Vec::new(),
                radii: vec![crate::engulf::pool_radius(initial_mass)],
                final_mass: initial_mass,
                exploded: true,
                absorbed_ids: Vec::new(),
            };
        }
        loop {
            let res = cascade_in(&self.grid, initial_mass, exclusion_sq, cap);
            let reach = radius_sq(res.reach_mass());
            if reach <= self.h_sq || self.h >= self.h_max {
                return res;
            }
            self.expand(s, zone_radius(reach.sqrt()).max(1.15 * self.h));
        }
    }

    /// Keep the near disk comfortably larger than a pool of radius `r`.
    pub fn ensure_margin(&mut self, s: f64, r: f64) {
        if zone_radius(r) > self.h {
            // grow geometrically so rebuilds stay rare
            self.expand(s, zone_radius(r).max(1.15 * self.h));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earliest_time_then_smallest_id() {
        let mut s = Scheduler::new();
        s.schedule(5, 0.37);
        assert_eq!(s.next_event(), Some((0.37, 5)));
        assert_eq!(s.next_event(), None);
        s.schedule(9, 1.0);
        s.schedule(3, 1.0);
        s.schedule(7, 0.5);
        assert_eq!(s.next_event(), Some((0.5, 7)));
        assert_eq!(s.next_event(), Some((1.0, 3)));
        assert_eq!(s.next_event(), Some((1.0, 9)));
    }
}
