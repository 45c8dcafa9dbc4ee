//! Scenario domain types, agent-centric frames and scenario file I/O.

pub mod geometry;
pub mod io;
pub mod synth;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::Point;
pub use io::{read_predictions, read_scenario, read_scenarios, write_predictions, write_scenarios, PredictionRecord};
pub use synth::{generate_synthetic, ScenarioKind, SynthConfig};

/// Sampling period of every track (10 Hz).
pub const DT: f64 = 0.1;

pub type AgentId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: AgentId,
    pub positions: Vec<Point>,
    pub headings: Vec<f64>,
    pub valid: Vec<bool>,
    pub length: f64,
    pub width: f64,
    pub is_predictable: bool,
}

impl AgentTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Speed at timestep `t` from the backward difference (forward at t = 0).
    pub fn speed_at(&self, t: usize) -> f64 {
        let (a, b) = if t == 0 { (0, 1.min(self.len() - 1)) } else { (t - 1, t) };
        if a == b || !self.valid[a] || !self.valid[b] {
            return 0.0;
        }
        geometry::dist(self.positions[a], self.positions[b]) / DT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenterline,
    Boundary,
    Crosswalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub polyline_id: u32,
    pub kind: PolylineKind,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub history_len: usize,
    pub horizon: usize,
    pub tracks: Vec<AgentTrack>,
    pub map: Vec<MapPolyline>,
}

impl Scenario {
    pub fn track(&self, id: AgentId) -> Result<&AgentTrack> {
        self.tracks
            .iter()
            .find(|t| t.agent_id == id)
            .ok_or_else(|| Error::Lookup(format!("agent {id} in scenario {}", self.id)))
    }

    /// Index of the last history step ("current" time).
    pub fn current_step(&self) -> usize {
        self.history_len - 1
    }

    /// Agent-centric frame at the current step.
    pub fn agent_frame(&self, id: AgentId) -> Result<Frame> {
        let t = self.track(id)?;
        let c = self.current_step();
        Ok(Frame::new(t.positions[c], t.headings[c]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("empty scenario id".into()));
        }
        if self.history_len == 0 {
            return Err(Error::Validation(format!("{}: history_len must be positive", self.id)));
        }
        let expected = self.history_len + self.horizon;
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tracks {
            let n = t.positions.len();
            if t.headings.len() != n || t.valid.len() != n {
                return Err(Error::Validation(format!(
                    "{}: agent {} has {} positions, {} headings, {} mask entries",
                    self.id,
                    t.agent_id,
                    n,
                    t.headings.len(),
                    t.valid.len()
                )));
            }
            if n != expected {
                return Err(Error::Validation(format!(
                    "{}: agent {} track length {n}, expected history {} + horizon {}",
                    self.id, t.agent_id, self.history_len, self.horizon
                )));
            }
            if !(t.length > 0.0 && t.width > 0.0) {
                return Err(Error::Validation(format!("{}: agent {} has non-positive shape", self.id, t.agent_id)));
            }
            if !seen.insert(t.agent_id) {
                return Err(Error::Validation(format!("{}: duplicate agent id {}", self.id, t.agent_id)));
            }
            let finite = t.positions.iter().all(|p| p[0].is_finite() && p[1].is_finite())
                && t.headings.iter().all(|h| h.is_finite());
            if !finite {
                return Err(Error::Validation(format!("{}: agent {} has non-finite values", self.id, t.agent_id)));
            }
        }
        for p in &self.map {
            if p.points.len() < 2 {
                return Err(Error::Validation(format!("{}: polyline {} has fewer than 2 points", self.id, p.polyline_id)));
            }
            if p.points.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!(
                    "{}: polyline {} repeats a point",
                    self.id, p.polyline_id
                )));
            }
        }
        Ok(())
    }
}

/// Wraps an angle into [-π, π).
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI { w - 2.0 * PI } else { w }
}

/// Rigid agent-centric frame: `origin` maps to (0, 0) and `heading` to +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Point,
    pub heading: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    pub fn new(origin: Point, heading: f64) -> Self {
        let heading = wrap_angle(heading);
        Self { origin, heading, cos: heading.cos(), sin: heading.sin() }
    }

    pub fn identity() -> Self {
        Self::new([0.0, 0.0], 0.0)
    }

    pub fn to_local(&self, p: Point) -> Point {
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        [self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy]
    }

    pub fn to_world(&self, p: Point) -> Point {
        [
            self.cos * p[0] - self.sin * p[1] + self.origin[0],
            self.sin * p[0] + self.cos * p[1] + self.origin[1],
        ]
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        wrap_angle(h - self.heading)
    }
}

pub fn to_frame(points: &[Point], frame: &Frame) -> Vec<Point> {
    points.iter().map(|&p| frame.to_local(p)).collect()
}

pub fn from_frame(points: &[Point], frame: &Frame) -> Vec<Point> {
    points.iter().map(|&p| frame.to_world(p)).collect()
}

/// One selected joint mode: both agents' trajectories (world frame) and a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub traj_a: Vec<Point>,
    pub traj_b: Vec<Point>,
    pub score: f64,
}
