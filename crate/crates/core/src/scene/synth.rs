//! Synthetic two-agent interactive scenarios.
//!
//! Every generated scene holds two predictable vehicles (ids 1 and 2) whose
//! ground-truth futures come within 5 m of each other, a lane graph built
//! from straights and circular arcs, and a few parked background vehicles.
//! Candidate draws that miss the interaction predicate are rejected and
//! redrawn from the same seeded stream, so a seed always yields one scene.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{dist, Path, PathBuilder, Point};
use super::{AgentTrack, MapPolyline, PolylineKind, Scenario, DT};
use crate::error::{Error, Result};

/// Interaction distance every generated pair must undercut.
pub const INTERACTION_RADIUS: f64 = 5.0;

const LANE: f64 = 3.5;
const HALF: f64 = LANE / 2.0;
const STOP: f64 = 8.0;
const EXTENT: f64 = 50.0;
const LEFT_R: f64 = STOP + HALF;
const RIGHT_R: f64 = STOP - HALF;
const MAX_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    YieldTurn,
    Merge,
    Follow,
    TwoLeftTurns,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::YieldTurn, ScenarioKind::Merge, ScenarioKind::Follow, ScenarioKind::TwoLeftTurns];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::YieldTurn => "yield_turn",
            ScenarioKind::Merge => "merge",
            ScenarioKind::Follow => "follow",
            ScenarioKind::TwoLeftTurns => "two_left_turns",
        }
    }

    fn salt(self) -> u64 {
        match self {
            ScenarioKind::YieldTurn => 0x9e37_79b9,
            ScenarioKind::Merge => 0x7f4a_7c15,
            ScenarioKind::Follow => 0x94d0_49bb,
            ScenarioKind::TwoLeftTurns => 0xbf58_476d,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub history_len: usize,
    pub horizon: usize,
    /// Half-width (m/s) of the uniform jitter added to initial speeds.
    pub speed_noise: f64,
    /// Half-width (m) of the constant lateral offset from the lane centre.
    pub lateral_noise: f64,
    pub background_agents: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { history_len: 10, horizon: 30, speed_noise: 1.0, lateral_noise: 0.3, background_agents: 2 }
    }
}

/// Piecewise-constant acceleration profile, clamped to `[0, VMAX]`.
#[derive(Debug, Clone, Copy)]
struct Profile {
    v0: f64,
    a1: f64,
    t1: f64,
    a2: f64,
}

const VMAX: f64 = 16.0;

impl Profile {
    /// Travelled arclength at every step, starting from zero.
    fn arclengths(&self, n: usize) -> Vec<f64> {
        let mut s = vec![0.0; n];
        let mut v = self.v0.clamp(0.0, VMAX);
        for k in 1..n {
            let t = (k - 1) as f64 * DT;
            let a = if t < self.t1 { self.a1 } else { self.a2 };
            let v_next = (v + a * DT).clamp(0.0, VMAX);
            s[k] = s[k - 1] + 0.5 * (v + v_next) * DT;
            v = v_next;
        }
        s
    }
}

fn rotate(p: Point, quarter_turns: i32) -> Point {
    match quarter_turns.rem_euclid(4) {
        0 => p,
        1 => [-p[1], p[0]],
        2 => [-p[0], -p[1]],
        _ => [p[1], -p[0]],
    }
}

fn rotated(points: &[Point], k: i32) -> Vec<Point> {
    points.iter().map(|&p| rotate(p, k)).collect()
}

fn join(parts: &[&[Point]]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    for part in parts {
        for &p in part.iter() {
            if out.last().is_none_or(|&q| dist(p, q) > 1e-6) {
                out.push(p);
            }
        }
    }
    out
}

struct MapBuilder {
    polylines: Vec<MapPolyline>,
}

impl MapBuilder {
    fn new() -> Self {
        Self { polylines: Vec::new() }
    }

    fn add(&mut self, kind: PolylineKind, points: Vec<Point>) {
        let id = self.polylines.len() as u32;
        self.polylines.push(MapPolyline { polyline_id: id, kind, points });
    }
}

/// Lane pieces of a four-way intersection, in the orientation of the
/// northbound approach (quarter turn 0). Other approaches are rotations.
struct Intersection {
    approach: Vec<Point>,
    straight: Vec<Point>,
    left: Vec<Point>,
    right: Vec<Point>,
    exit_south: Vec<Point>,
}

impl Intersection {
    fn new(step: f64) -> Self {
        let entry = [HALF, -STOP];
        Self {
            approach: PathBuilder::new([HALF, -EXTENT], FRAC_PI_2, step).straight(EXTENT - STOP).build(),
            straight: PathBuilder::new(entry, FRAC_PI_2, step).straight(2.0 * STOP).build(),
            left: PathBuilder::new(entry, FRAC_PI_2, step).arc(LEFT_R, FRAC_PI_2).build(),
            right: PathBuilder::new(entry, FRAC_PI_2, step).arc(RIGHT_R, -FRAC_PI_2).build(),
            exit_south: PathBuilder::new([-HALF, -STOP], -FRAC_PI_2, step).straight(EXTENT - STOP).build(),
        }
    }

    fn map() -> Vec<MapPolyline> {
        let g = Intersection::new(2.5);
        let mut m = MapBuilder::new();
        for k in 0..4 {
            m.add(PolylineKind::LaneCenterline, rotated(&g.approach, k));
            m.add(PolylineKind::LaneCenterline, rotated(&g.exit_south, k));
            m.add(PolylineKind::LaneCenterline, rotated(&g.straight, k));
            m.add(PolylineKind::LaneCenterline, rotated(&g.left, k));
            m.add(PolylineKind::LaneCenterline, rotated(&g.right, k));
        }
        for k in 0..4 {
            let east_edge = PathBuilder::new([LANE, -EXTENT], FRAC_PI_2, 5.0).straight(EXTENT - STOP).build();
            let west_edge = PathBuilder::new([-LANE, -EXTENT], FRAC_PI_2, 5.0).straight(EXTENT - STOP).build();
            m.add(PolylineKind::Boundary, rotated(&east_edge, k));
            m.add(PolylineKind::Boundary, rotated(&west_edge, k));
            m.add(PolylineKind::Crosswalk, rotated(&[[-LANE, -STOP - 2.0], [LANE, -STOP - 2.0]], k));
        }
        m.polylines
    }

    /// Full agent path for an approach `k` and a movement.
    fn route(k: i32, movement: &str) -> Path {
        let g = Intersection::new(0.5);
        let (conn, exit_turns) = match movement {
            "left" => (&g.left, -1),
            "right" => (&g.right, 1),
            _ => (&g.straight, 2),
        };
        let exit = rotated(&g.exit_south, exit_turns);
        let pts = join(&[&g.approach, conn, &exit]);
        Path::new(&rotated(&pts, k)).expect("intersection route has distinct points")
    }
}

fn straight_road(y: f64, x0: f64, x1: f64, step: f64) -> Vec<Point> {
    PathBuilder::new([x0, y], 0.0, step).straight(x1 - x0).build()
}

struct MergeGeometry {
    ramp: Vec<Point>,
    s_curve: Vec<Point>,
}

const MERGE_START: f64 = -10.0;
const MERGE_LEN: f64 = 20.0;

impl MergeGeometry {
    fn new(step: f64) -> Self {
        // Two opposite arcs shifting the lane by one lane width over MERGE_LEN.
        let half = MERGE_LEN / 2.0;
        let theta = 2.0 * (HALF * 2.0 / 2.0 / half).atan();
        let radius = half / theta.sin();
        let ramp = straight_road(-LANE, -EXTENT, MERGE_START, step);
        let s_curve = PathBuilder::new([MERGE_START, -LANE], 0.0, step).arc(radius, theta).arc(radius, -theta).build();
        Self { ramp, s_curve }
    }

    fn map() -> Vec<MapPolyline> {
        let g = MergeGeometry::new(2.5);
        let end = *g.s_curve.last().unwrap();
        let mut m = MapBuilder::new();
        m.add(PolylineKind::LaneCenterline, straight_road(0.0, -EXTENT, end[0], 2.5));
        m.add(PolylineKind::LaneCenterline, straight_road(0.0, end[0], EXTENT, 2.5));
        m.add(PolylineKind::LaneCenterline, straight_road(LANE, -EXTENT, EXTENT, 2.5));
        m.add(PolylineKind::LaneCenterline, g.ramp);
        m.add(PolylineKind::LaneCenterline, g.s_curve);
        m.add(PolylineKind::Boundary, straight_road(LANE + HALF, -EXTENT, EXTENT, 5.0));
        m.add(PolylineKind::Boundary, straight_road(-LANE - HALF, -EXTENT, MERGE_START, 5.0));
        m.add(PolylineKind::Boundary, straight_road(-HALF, end[0], EXTENT, 5.0));
        m.polylines
    }
}

fn follow_map() -> Vec<MapPolyline> {
    let mut m = MapBuilder::new();
    m.add(PolylineKind::LaneCenterline, straight_road(0.0, -EXTENT, 0.0, 2.5));
    m.add(PolylineKind::LaneCenterline, straight_road(0.0, 0.0, EXTENT, 2.5));
    m.add(PolylineKind::LaneCenterline, straight_road(LANE, -EXTENT, EXTENT, 2.5));
    m.add(PolylineKind::LaneCenterline, PathBuilder::new([0.0, 0.0], 0.0, 2.5).arc(RIGHT_R + 4.0, -FRAC_PI_2).straight(30.0).build());
    m.add(PolylineKind::Boundary, straight_road(-HALF, -EXTENT, EXTENT, 5.0));
    m.add(PolylineKind::Boundary, straight_road(LANE + HALF, -EXTENT, EXTENT, 5.0));
    m.polylines
}

struct Motion {
    path: Path,
    profile: Profile,
    /// Absolute arclength at step 0.
    start: f64,
    lateral: f64,
}

impl Motion {
    fn placed(path: Path, profile: Profile, n: usize, step: usize, s_at_step: f64, lateral: f64) -> Self {
        let rel = profile.arclengths(n);
        Self { path, profile, start: s_at_step - rel[step], lateral }
    }

    fn states(&self, n: usize) -> (Vec<Point>, Vec<f64>) {
        let rel = self.profile.arclengths(n);
        let mut pos = Vec::with_capacity(n);
        let mut head = Vec::with_capacity(n);
        for s in rel {
            let s = self.start + s;
            let (p, h) = self.path.pose_at(s);
            let nrm = self.path.left_normal(s);
            pos.push([p[0] + self.lateral * nrm[0], p[1] + self.lateral * nrm[1]]);
            head.push(super::wrap_angle(h));
        }
        (pos, head)
    }
}

fn min_future_distance(a: &[Point], b: &[Point], from: usize) -> f64 {
    a[from..].iter().zip(&b[from..]).map(|(p, q)| dist(*p, *q)).fold(f64::INFINITY, f64::min)
}

fn min_distance(a: &[Point], b: &[Point]) -> f64 {
    min_future_distance(a, b, 0)
}

struct Draw<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a SynthConfig,
}

impl Draw<'_> {
    fn u(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    fn v0(&mut self, lo: f64, hi: f64) -> f64 {
        let noise = self.cfg.speed_noise;
        let base = self.u(lo, hi);
        if noise > 0.0 { (base + self.u(-noise, noise)).max(0.5) } else { base }
    }

    fn lateral(&mut self) -> f64 {
        let l = self.cfg.lateral_noise;
        if l > 0.0 { self.u(-l, l) } else { 0.0 }
    }

    /// A step between 30 % and 70 % of the horizon.
    fn event_step(&mut self) -> usize {
        let h = self.cfg.horizon as f64;
        self.cfg.history_len + (self.u(0.3, 0.7) * h).round() as usize
    }
}

fn draw_pair(kind: ScenarioKind, d: &mut Draw<'_>, n: usize) -> (Motion, Motion) {
    match kind {
        ScenarioKind::YieldTurn => {
            let a_path = Intersection::route(0, "left");
            let b_path = Intersection::route(2, "straight");
            let dy = (LEFT_R * LEFT_R - (LEFT_R - LANE) * (LEFT_R - LANE)).sqrt();
            let conflict = [-HALF, -STOP + dy];
            let (sa, sb) = (a_path.project(conflict), b_path.project(conflict));
            let kc = d.event_step();
            let b = Profile { v0: d.v0(8.0, 12.0), a1: d.u(-0.5, 0.5), t1: 1e9, a2: 0.0 };
            let a = Profile { v0: d.v0(5.0, 9.0), a1: d.u(-4.0, -2.0), t1: d.u(1.0, 2.5), a2: d.u(1.5, 3.0) };
            let gap = d.u(2.5, 6.0);
            let (la, lb) = (d.lateral(), d.lateral());
            (
                Motion::placed(a_path, a, n, kc, sa - gap, la),
                Motion::placed(b_path, b, n, kc, sb, lb),
            )
        }
        ScenarioKind::TwoLeftTurns => {
            let a_path = Intersection::route(0, "left");
            let b_path = Intersection::route(2, "left");
            let arc_len = LEFT_R * FRAC_PI_2;
            let mid = EXTENT - STOP + arc_len / 2.0;
            let kc = d.event_step();
            let prof = |d: &mut Draw<'_>| Profile { v0: d.v0(5.0, 9.0), a1: d.u(-1.5, 0.5), t1: d.u(1.0, 3.0), a2: d.u(0.0, 1.5) };
            let a = prof(d);
            let b = prof(d);
            let (oa, ob) = (d.u(-3.0, 3.0), d.u(-3.0, 3.0));
            let (la, lb) = (d.lateral(), d.lateral());
            (Motion::placed(a_path, a, n, kc, mid + oa, la), Motion::placed(b_path, b, n, kc, mid + ob, lb))
        }
        ScenarioKind::Merge => {
            let g = MergeGeometry::new(0.5);
            let end = *g.s_curve.last().unwrap();
            let main_pts = straight_road(0.0, -EXTENT, EXTENT, 0.5);
            let b_pts = join(&[&g.ramp, &g.s_curve, &straight_road(0.0, end[0], EXTENT, 0.5)]);
            let a_path = Path::new(&main_pts).unwrap();
            let b_path = Path::new(&b_pts).unwrap();
            let sb = b_path.project(end);
            let sa = a_path.project(end);
            let kc = d.event_step();
            let a = Profile { v0: d.v0(8.0, 12.0), a1: d.u(-2.0, 0.0), t1: d.u(1.0, 3.0), a2: d.u(-0.5, 0.5) };
            let b = Profile { v0: d.v0(8.0, 12.0), a1: d.u(-0.5, 1.0), t1: 1e9, a2: 0.0 };
            let lead = d.u(-2.0, 4.0);
            let gap = d.u(4.0, 8.0);
            let (la, lb) = (d.lateral(), d.lateral());
            (Motion::placed(a_path, a, n, kc, sa - gap, la), Motion::placed(b_path, b, n, kc, sb + lead, lb))
        }
        ScenarioKind::Follow => {
            let lane = straight_road(0.0, -EXTENT, EXTENT + 60.0, 0.5);
            let lead_v = d.v0(6.0, 10.0);
            let t_brake = d.u(1.2, 2.5);
            let b = Profile { v0: lead_v, a1: d.u(-0.5, 0.5), t1: t_brake, a2: -d.u(3.0, 5.0) };
            let a = Profile {
                v0: lead_v + d.u(0.0, 2.0),
                a1: d.u(-0.5, 0.5),
                t1: t_brake + d.u(0.2, 0.6),
                a2: -d.u(4.0, 6.0),
            };
            let sb0 = d.u(15.0, 35.0);
            let final_gap = d.u(4.6, 4.95);
            let lb = d.lateral();
            let la = d.lateral() * 0.3;
            let b_mot = Motion::placed(Path::new(&lane).unwrap(), b, n, 0, sb0, lb);
            let b_end = sb0 + b.arclengths(n)[n - 1];
            (Motion::placed(Path::new(&lane).unwrap(), a, n, n - 1, b_end - final_gap, la), b_mot)
        }
    }
}

fn parked_spots(kind: ScenarioKind, d: &mut Draw<'_>) -> (Point, f64) {
    match kind {
        ScenarioKind::YieldTurn | ScenarioKind::TwoLeftTurns => {
            let k = d.rng.gen_range(0..4);
            let p = [d.u(14.0, 40.0), -(LANE + 2.5)];
            (rotate(p, k), k as f64 * FRAC_PI_2)
        }
        ScenarioKind::Merge => ([d.u(-40.0, 40.0), LANE + HALF + 2.0], 0.0),
        ScenarioKind::Follow => ([d.u(-40.0, 40.0), -HALF - 2.5], if d.rng.gen_bool(0.5) { 0.0 } else { PI }),
    }
}

/// Generates one interactive scenario of the given kind.
pub fn generate_synthetic(kind: ScenarioKind, seed: u64, cfg: &SynthConfig) -> Result<Scenario> {
    if cfg.history_len == 0 || cfg.horizon < 2 {
        return Err(Error::config("synthetic scenes need history_len >= 1 and horizon >= 2"));
    }
    let n = cfg.history_len + cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt().wrapping_mul(0x2545_f491_4f6c_dd1d));
    let mut d = Draw { rng: &mut rng, cfg };
    for _ in 0..MAX_ATTEMPTS {
        let (ma, mb) = draw_pair(kind, &mut d, n);
        let (pa, ha) = ma.states(n);
        let (pb, hb) = mb.states(n);
        let fut = min_future_distance(&pa, &pb, cfg.history_len);
        let all = min_distance(&pa, &pb);
        let floor = if kind == ScenarioKind::Follow { 4.5 } else { 2.5 };
        if !(fut < INTERACTION_RADIUS - 1e-6 && all >= floor) {
            continue;
        }
        let shape = |d: &mut Draw<'_>| (d.u(4.0, 4.5), d.u(1.8, 2.0));
        let (la, wa) = shape(&mut d);
        let (lb, wb) = shape(&mut d);
        let mut tracks = vec![
            AgentTrack { agent_id: 1, positions: pa, headings: ha, valid: vec![true; n], length: la, width: wa, is_predictable: true },
            AgentTrack { agent_id: 2, positions: pb, headings: hb, valid: vec![true; n], length: lb, width: wb, is_predictable: true },
        ];
        let mut next_id = 3;
        let mut tries = 0;
        while tracks.len() < 2 + cfg.background_agents && tries < 100 {
            tries += 1;
            let (p, h) = parked_spots(kind, &mut d);
            let clear = tracks.iter().all(|t| t.positions.iter().all(|&q| dist(p, q) > 6.0));
            if !clear {
                continue;
            }
            let (l, w) = shape(&mut d);
            tracks.push(AgentTrack {
                agent_id: next_id,
                positions: vec![p; n],
                headings: vec![super::wrap_angle(h); n],
                valid: vec![true; n],
                length: l,
                width: w,
                is_predictable: false,
            });
            next_id += 1;
        }
        let map = match kind {
            ScenarioKind::YieldTurn | ScenarioKind::TwoLeftTurns => Intersection::map(),
            ScenarioKind::Merge => MergeGeometry::map(),
            ScenarioKind::Follow => follow_map(),
        };
        let scenario = Scenario { id: format!("{kind}-{seed}"), history_len: cfg.history_len, horizon: cfg.horizon, tracks, map };
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(Error::config(format!("could not draw an interactive {kind} scene for seed {seed}")))
}
