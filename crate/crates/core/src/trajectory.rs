//! Pool trajectories: the càdlàg radius path as a list of jump events.

use serde::{Deserialize, Serialize};

use crate::engulf::pool_radius;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "initial-cascade")]
    InitialCascade,
    #[serde(rename = "arrival")]
    Arrival,
    #[serde(rename = "cap-hit")]
    CapHit,
    #[serde(rename = "boundary_hit")]
    BoundaryHit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::InitialCascade => "initial-cascade",
            EventKind::Arrival => "arrival",
            EventKind::CapHit => "cap-hit",
            EventKind::BoundaryHit => "boundary_hit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "initial-cascade" => EventKind::InitialCascade,
            "arrival" => EventKind::Arrival,
            "cap-hit" => EventKind::CapHit,
            "boundary_hit" => EventKind::BoundaryHit,
            other => return Err(invalid(format!("unknown event kind {other:?}"))),
        })
    }
}

/// One jump of the pool.
///
/// `rounds` lists the absorbed counts that produced the jump. For arrivals the
/// first entry is the number of particles that entered the pool, so
/// `mass_after = mass_before + sum(rounds)` for every event (mass before the
/// initial cascade is the unit seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub mass_after: u64,
    pub radius_after: f64,
    pub rounds: Vec<u64>,
    pub exploded: bool,
}

impl Event {
    pub fn new(time: f64, kind: EventKind, mass_after: u64, rounds: Vec<u64>, exploded: bool) -> Self {
        Self {
            time,
            kind,
            mass_after,
            radius_after: pool_radius(mass_after),
            rounds,
            exploded,
        }
    }

    pub fn absorbed(&self) -> u64 {
        self.rounds.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub horizon: f64,
    pub events: Vec<Event>,
    pub exploded_at: Option<f64>,
}

impl Trajectory {
    pub fn new(horizon: f64) -> Self {
        Self {
            horizon,
            events: Vec::new(),
            exploded_at: None,
        }
    }

    pub fn push(&mut self, event: Event) {
        if event.exploded && self.exploded_at.is_none() {
            self.exploded_at = Some(event.time);
        }
        self.events.push(event);
    }

    /// Index of the last event at or before `t`.
    fn index_at(&self, t: f64) -> Option<usize> {
        let k = self.events.partition_point(|e| e.time <= t);
        k.checked_sub(1)
    }

    /// Mass at time `t` (value of the most recent event; 1 before the first).
    pub fn mass_at(&self, t: f64) -> u64 {
        self.index_at(t).map_or(1, |i| self.events[i].mass_after)
    }

    pub fn radius_at(&self, t: f64) -> f64 {
        pool_radius(self.mass_at(t))
    }

    pub fn final_mass(&self) -> u64 {
        self.events.last().map_or(1, |e| e.mass_after)
    }

    pub fn final_radius(&self) -> f64 {
        pool_radius(self.final_mass())
    }

    /// Time up to which the path is defined: the horizon, or the terminating
    /// event for runs that stopped early.
    pub fn end_time(&self) -> f64 {
        match self.events.last() {
            Some(e) if matches!(e.kind, EventKind::CapHit | EventKind::BoundaryHit) => e.time,
            _ => self.horizon,
        }
    }

    /// Arrival times (kind `arrival` or `cap-hit`).
    pub fn arrival_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Arrival | EventKind::CapHit))
            .map(|e| e.time)
            .collect()
    }
}
