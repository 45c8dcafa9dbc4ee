//! Interaction-pair mining, goal-target sampling along lane centerlines and
//! best-mode-displacement (BMD) statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::geometry::{dist, Path};
use crate::scene::{AgentId, Frame, MapPolyline, Point, PolylineKind, Scenario};

/// Default interaction threshold in meters.
pub const DEFAULT_THRESHOLD: f64 = 5.0;

/// Minimum distance between two tracks over future steps where both are
/// valid, or `None` when they never overlap in time.
pub fn future_min_distance(scenario: &Scenario, a: AgentId, b: AgentId) -> Result<Option<f64>> {
    let ta = scenario.track(a)?;
    let tb = scenario.track(b)?;
    let n = ta.len().min(tb.len());
    let d = (scenario.history_len..n)
        .filter(|&t| ta.valid[t] && tb.valid[t])
        .map(|t| dist(ta.positions[t], tb.positions[t]))
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
    Ok(d)
}

/// Pairs of predictable agents whose ground-truth futures come strictly
/// closer than `threshold`, in lexicographic id order.
pub fn mine_interactive_pairs(scenario: &Scenario, threshold: f64) -> Vec<(AgentId, AgentId)> {
    let mut ids: Vec<AgentId> = scenario.tracks.iter().filter(|t| t.is_predictable).map(|t| t.agent_id).collect();
    ids.sort_unstable();
    let mut out = Vec::new();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            if let Ok(Some(d)) = future_min_distance(scenario, a, b) {
                if d < threshold {
                    out.push((a, b));
                }
            }
        }
    }
    out
}

/// Target-sampling parameters. The first four fields are the tabulated
/// preset values; `spacing` and `lateral_offsets` describe the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetParams {
    pub n_targets: usize,
    /// `[x_min, x_max, y_min, y_max]` in the agent frame.
    pub target_range: [f64; 4],
    pub lane_radius: f64,
    pub object_radius: f64,
    /// Arclength step between samples along a centerline (m).
    pub spacing: f64,
    /// Offsets along the lane's left normal applied at every sample (m).
    pub lateral_offsets: Vec<f64>,
}

/// `(n_targets, range, lane_radius, object_radius)` for presets #1 to #14.
pub const PRESETS: [(usize, [f64; 4], f64, f64); 14] = [
    (8000, [-100.0, 50.0, -80.0, 80.0], 80.0, 60.0),
    (8000, [-150.0, 100.0, -100.0, 100.0], 160.0, 120.0),
    (8000, [-200.0, 100.0, -150.0, 150.0], 160.0, 120.0),
    (10000, [-200.0, 100.0, -150.0, 150.0], 160.0, 120.0),
    (6000, [-150.0, 100.0, -100.0, 100.0], 120.0, 100.0),
    (8000, [-300.0, 200.0, -200.0, 200.0], 200.0, 200.0),
    (6000, [-200.0, 100.0, -150.0, 150.0], 100.0, 100.0),
    (6000, [-200.0, 100.0, -150.0, 150.0], 160.0, 120.0),
    (10000, [-200.0, 100.0, -100.0, 100.0], 160.0, 120.0),
    (12000, [-200.0, 100.0, -150.0, 150.0], 140.0, 100.0),
    (12000, [-200.0, 100.0, -100.0, 100.0], 160.0, 120.0),
    (12000, [-200.0, 100.0, -100.0, 100.0], 200.0, 200.0),
    (16000, [-200.0, 100.0, -100.0, 100.0], 200.0, 200.0),
    (20000, [-200.0, 100.0, -100.0, 100.0], 200.0, 200.0),
];

pub const DEFAULT_PRESET: usize = 4;

impl TargetParams {
    pub fn new(n_targets: usize, target_range: [f64; 4], lane_radius: f64, object_radius: f64) -> Result<Self> {
        let p = Self {
            n_targets,
            target_range,
            lane_radius,
            object_radius,
            spacing: 1.0,
            lateral_offsets: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        };
        p.validate()?;
        Ok(p)
    }

    /// Preset by its 1-based number.
    pub fn preset(id: usize) -> Result<Self> {
        let &(n, r, lane, obj) = id
            .checked_sub(1)
            .and_then(|i| PRESETS.get(i))
            .ok_or_else(|| Error::config(format!("unknown target preset #{id}; valid presets are #1 to #14")))?;
        Self::new(n, r, lane, obj)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, x1, y0, y1] = self.target_range;
        let ok = self.n_targets > 0
            && x0 < x1
            && y0 < y1
            && self.lane_radius > 0.0
            && self.object_radius > 0.0
            && self.spacing > 0.0
            && !self.lateral_offsets.is_empty();
        if ok { Ok(()) } else { Err(Error::config(format!("invalid target parameters {self:?}"))) }
    }

    fn in_range(&self, p: Point) -> bool {
        let [x0, x1, y0, y1] = self.target_range;
        (x0..=x1).contains(&p[0]) && (y0..=y1).contains(&p[1])
    }
}

impl Default for TargetParams {
    fn default() -> Self {
        Self::preset(DEFAULT_PRESET).expect("default preset exists")
    }
}

/// Sampled goal targets in the agent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub points: Vec<Point>,
    pub params: TargetParams,
    /// Set when no target survived sampling.
    pub warning: Option<String>,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Clearance kept between a target and another agent's current centre.
const OBJECT_CLEARANCE: f64 = 1.0;

/// Samples goal targets on centerlines near the frame origin.
///
/// `obstacles` are current world positions of other agents; a target within
/// 1 m of an obstacle that lies inside `object_radius` of the origin is
/// dropped. The result is sorted, so it does not depend on polyline order.
pub fn sample_targets(map: &[MapPolyline], frame: &Frame, params: &TargetParams, obstacles: &[Point]) -> TargetSet {
    let lanes: Vec<Path> = map
        .iter()
        .filter(|p| p.kind == PolylineKind::LaneCenterline)
        .filter(|p| p.points.iter().any(|&q| dist(q, frame.origin) <= params.lane_radius))
        .filter_map(|p| Path::new(&p.points))
        .collect();
    if lanes.is_empty() {
        return TargetSet {
            points: Vec::new(),
            params: params.clone(),
            warning: Some(format!("no lane centerline within {} m of the agent", params.lane_radius)),
        };
    }
    let near: Vec<Point> =
        obstacles.iter().copied().filter(|&o| dist(o, frame.origin) <= params.object_radius).collect();
    let mut pts = Vec::new();
    for lane in &lanes {
        let n = (lane.length() / params.spacing).floor() as usize;
        for k in 0..=n {
            let s = k as f64 * params.spacing;
            let (p, _) = lane.pose_at(s);
            let nrm = lane.left_normal(s);
            for &off in &params.lateral_offsets {
                let w = [p[0] + off * nrm[0], p[1] + off * nrm[1]];
                if near.iter().any(|&o| dist(o, w) < OBJECT_CLEARANCE) {
                    continue;
                }
                let local = frame.to_local(w);
                if params.in_range(local) {
                    pts.push(local);
                }
            }
        }
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let points = thin(pts, params.n_targets);
    let warning = points.is_empty().then(|| "every sampled target fell outside the target range".to_string());
    TargetSet { points, params: params.clone(), warning }
}

/// Keeps `n` evenly spaced entries when there are more than `n`.
fn thin(pts: Vec<Point>, n: usize) -> Vec<Point> {
    if pts.len() <= n {
        return pts;
    }
    let m = pts.len();
    (0..n).map(|i| pts[i * m / n]).collect()
}

/// Targets for one agent of a scenario, using the other agents' current
/// positions as obstacles.
pub fn targets_for_agent(scenario: &Scenario, agent: AgentId, params: &TargetParams) -> Result<TargetSet> {
    let frame = scenario.agent_frame(agent)?;
    let c = scenario.current_step();
    let obstacles: Vec<Point> = scenario
        .tracks
        .iter()
        .filter(|t| t.agent_id != agent && t.valid[c])
        .map(|t| t.positions[c])
        .collect();
    Ok(sample_targets(&scenario.map, &frame, params, &obstacles))
}

/// Distance from the ground-truth endpoint to the closest target.
pub fn best_mode_displacement(targets: &TargetSet, gt_endpoint: Point) -> Result<f64> {
    targets.points.iter().map(|&p| dist(p, gt_endpoint)).min_by(f64::total_cmp).ok_or(Error::UndefinedBmd)
}

/// Last valid ground-truth position of an agent, in its own frame.
pub fn gt_endpoint(scenario: &Scenario, agent: AgentId) -> Result<Option<Point>> {
    let t = scenario.track(agent)?;
    let frame = scenario.agent_frame(agent)?;
    Ok((scenario.history_len..t.len()).rev().find(|&k| t.valid[k]).map(|k| frame.to_local(t.positions[k])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmdStats {
    pub mean: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub count: usize,
}

/// Percentile of sorted values with linear interpolation between ranks.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BmdStats {
    /// `None` for an empty list.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: percentile(&v, 0.5),
            p75: percentile(&v, 0.75),
            p90: percentile(&v, 0.9),
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmdRow {
    pub params: TargetParams,
    pub agent_a: Option<BmdStats>,
    pub agent_b: Option<BmdStats>,
    /// Agents skipped because no target was sampled.
    pub undefined: usize,
}

/// BMD statistics of the first mined pair of every scenario, per parameter set.
pub fn bmd_report(scenarios: &[Scenario], params: &[TargetParams], threshold: f64) -> Result<Vec<BmdRow>> {
    let mut rows = Vec::with_capacity(params.len());
    for p in params {
        let (mut va, mut vb, mut undefined) = (Vec::new(), Vec::new(), 0);
        for s in scenarios {
            let Some(&(a, b)) = mine_interactive_pairs(s, threshold).first() else { continue };
            for (agent, out) in [(a, &mut va), (b, &mut vb)] {
                let Some(end) = gt_endpoint(s, agent)? else { continue };
                match best_mode_displacement(&targets_for_agent(s, agent, p)?, end) {
                    Ok(d) => out.push(d),
                    Err(Error::UndefinedBmd) => undefined += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        rows.push(BmdRow {
            params: p.clone(),
            agent_a: BmdStats::from_values(&va),
            agent_b: BmdStats::from_values(&vb),
            undefined,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic, AgentTrack, ScenarioKind, SynthConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(id: AgentId, positions: Vec<Point>) -> AgentTrack {
        let n = positions.len();
        AgentTrack {
            agent_id: id,
            positions,
            headings: vec![0.0; n],
            valid: vec![true; n],
            length: 4.5,
            width: 1.9,
            is_predictable: true,
        }
    }

    fn scene(tracks: Vec<AgentTrack>, history_len: usize) -> Scenario {
        let horizon = tracks[0].len() - history_len;
        Scenario { id: "t".into(), history_len, horizon, tracks, map: Vec::new() }
    }

    #[test]
    fn identical_tracks_are_mined() {
        let p: Vec<Point> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let s = scene(vec![track(1, p.clone()), track(2, p)], 2);
        assert_eq!(mine_interactive_pairs(&s, 5.0), vec![(1, 2)]);
    }

    #[test]
    fn gap_exactly_at_threshold_is_excluded() {
        let a: Vec<Point> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let b: Vec<Point> = (0..6).map(|i| [i as f64, 5.0]).collect();
        let s = scene(vec![track(1, a), track(2, b)], 2);
        assert!(mine_interactive_pairs(&s, 5.0).is_empty());
    }

    #[test]
    fn history_closeness_does_not_count() {
        let a: Vec<Point> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let b: Vec<Point> = (0..6).map(|i| [i as f64, if i < 2 { 0.0 } else { 9.0 }]).collect();
        let s = scene(vec![track(1, a), track(2, b)], 2);
        assert!(mine_interactive_pairs(&s, 5.0).is_empty());
    }

    fn random_scene(rng: &mut ChaCha8Rng, agents: usize) -> Scenario {
        let n = 8;
        let tracks = (0..agents)
            .map(|i| {
                let mut t = track(
                    10 - i as AgentId,
                    (0..n).map(|_| [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)]).collect(),
                );
                t.valid = (0..n).map(|_| rng.gen_bool(0.8)).collect();
                t.is_predictable = rng.gen_bool(0.9);
                t
            })
            .collect();
        scene(tracks, 3)
    }

    fn brute_force(s: &Scenario, threshold: f64) -> Vec<(AgentId, AgentId)> {
        let mut out = Vec::new();
        for a in &s.tracks {
            for b in &s.tracks {
                if a.agent_id >= b.agent_id || !a.is_predictable || !b.is_predictable {
                    continue;
                }
                let mut best = f64::INFINITY;
                for t in s.history_len..a.len() {
                    if a.valid[t] && b.valid[t] {
                        let d = ((a.positions[t][0] - b.positions[t][0]).powi(2)
                            + (a.positions[t][1] - b.positions[t][1]).powi(2))
                        .sqrt();
                        best = best.min(d);
                    }
                }
                if best < threshold {
                    out.push((a.agent_id, b.agent_id));
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn mining_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let s = random_scene(&mut rng, 8);
            assert_eq!(mine_interactive_pairs(&s, 5.0), brute_force(&s, 5.0));
        }
    }

    proptest! {
        #[test]
        fn mining_monotone_and_symmetric(seed in 0u64..1000, t1 in 0.0..10.0f64, dt in 0.0..5.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_scene(&mut rng, 5);
            let lo = mine_interactive_pairs(&s, t1);
            let hi = mine_interactive_pairs(&s, t1 + dt);
            prop_assert!(lo.iter().all(|p| hi.contains(p)));
            for &(a, b) in &lo {
                prop_assert_eq!(future_min_distance(&s, a, b).unwrap(), future_min_distance(&s, b, a).unwrap());
            }
        }
    }

    #[test]
    fn generated_scenes_are_always_mined() {
        let cfg = SynthConfig::default();
        for seed in 0..250u64 {
            for k in ScenarioKind::ALL {
                let s = generate_synthetic(k, seed, &cfg).unwrap();
                assert_eq!(mine_interactive_pairs(&s, 5.0), vec![(1, 2)], "{}", s.id);
            }
        }
    }

    fn line_map() -> Vec<MapPolyline> {
        vec![MapPolyline {
            polyline_id: 0,
            kind: PolylineKind::LaneCenterline,
            points: vec![[-20.0, 0.0], [20.0, 0.0]],
        }]
    }

    #[test]
    fn straight_lane_targets_lie_on_the_line() {
        let mut p = TargetParams::new(1000, [-10.0, 10.0, -5.0, 5.0], 50.0, 10.0).unwrap();
        p.lateral_offsets = vec![0.0];
        let t = sample_targets(&line_map(), &Frame::identity(), &p, &[]);
        assert_eq!(t.len(), 21);
        assert!(t.points.iter().all(|q| q[1] == 0.0 && q[0].abs() <= 10.0));
        assert!(t.warning.is_none());
    }

    #[test]
    fn range_excluding_lane_gives_warning() {
        let p = TargetParams::new(1000, [-10.0, 10.0, 30.0, 40.0], 50.0, 10.0).unwrap();
        let t = sample_targets(&line_map(), &Frame::identity(), &p, &[]);
        assert!(t.is_empty() && t.warning.is_some());
        let far = TargetParams::new(1000, [-10.0, 10.0, -5.0, 5.0], 1.0, 10.0).unwrap();
        let t = sample_targets(&line_map(), &Frame::new([0.0, 30.0], 0.0), &far, &[]);
        assert!(t.is_empty() && t.warning.is_some());
    }

    #[test]
    fn obstacles_clear_nearby_targets() {
        let mut p = TargetParams::new(1000, [-10.0, 10.0, -5.0, 5.0], 50.0, 10.0).unwrap();
        p.lateral_offsets = vec![0.0];
        let t = sample_targets(&line_map(), &Frame::identity(), &p, &[[5.0, 0.0], [40.0, 0.0]]);
        assert_eq!(t.len(), 20);
        assert!(!t.points.contains(&[5.0, 0.0]));
    }

    #[test]
    fn thinning_respects_budget() {
        let p = TargetParams::new(7, [-10.0, 10.0, -5.0, 5.0], 50.0, 10.0).unwrap();
        let t = sample_targets(&line_map(), &Frame::identity(), &p, &[]);
        assert_eq!(t.len(), 7);
    }

    #[test]
    fn targets_ignore_polyline_order() {
        let s = generate_synthetic(ScenarioKind::YieldTurn, 4, &SynthConfig::default()).unwrap();
        let p = TargetParams::default();
        let f = s.agent_frame(1).unwrap();
        let a = sample_targets(&s.map, &f, &p, &[[3.0, -20.0]]);
        let mut rev = s.map.clone();
        rev.reverse();
        let b = sample_targets(&rev, &f, &p, &[[3.0, -20.0]]);
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn presets_match_table() {
        let p4 = TargetParams::preset(4).unwrap();
        assert_eq!(p4.n_targets, 10000);
        assert_eq!(p4.target_range, [-200.0, 100.0, -150.0, 150.0]);
        assert_eq!((p4.lane_radius, p4.object_radius), (160.0, 120.0));
        assert_eq!(TargetParams::default(), p4);
        assert!(TargetParams::preset(0).is_err() && TargetParams::preset(15).is_err());
        for id in 1..=14 {
            TargetParams::preset(id).unwrap();
        }
    }

    fn set(points: Vec<Point>) -> TargetSet {
        TargetSet { points, params: TargetParams::default(), warning: None }
    }

    #[test]
    fn bmd_examples() {
        assert_eq!(best_mode_displacement(&set(vec![[0.0, 0.0], [3.0, 4.0]]), [3.0, 0.0]).unwrap(), 3.0);
        assert_eq!(best_mode_displacement(&set(vec![[1.0, 2.0]]), [1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(best_mode_displacement(&set(vec![]), [0.0, 0.0]), Err(Error::UndefinedBmd)));
    }

    proptest! {
        #[test]
        fn bmd_superset_monotone(
            pts in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..20),
            extra in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 0..20),
            gx in -50.0..50.0f64, gy in -50.0..50.0f64,
        ) {
            let sub: Vec<Point> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let mut sup = sub.clone();
            sup.extend(extra.iter().map(|&(x, y)| [x, y]));
            let a = best_mode_displacement(&set(sub), [gx, gy]).unwrap();
            let b = best_mode_displacement(&set(sup), [gx, gy]).unwrap();
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn stats_examples() {
        let s = BmdStats::from_values(&[2.0]).unwrap();
        assert_eq!((s.mean, s.median, s.p75, s.p90), (2.0, 2.0, 2.0, 2.0));
        assert_eq!(BmdStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap().median, 2.5);
        assert!(BmdStats::from_values(&[]).is_none());
    }

    /// Sort-and-index percentile: rank r = q·(n−1) split into its integer
    /// neighbours and blended by the fractional part.
    fn oracle_percentile(values: &[f64], q: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = q * (v.len() as f64 - 1.0);
        let below = r.floor();
        let above = r.ceil();
        let w = r - below;
        v[below as usize] * (1.0 - w) + v[above as usize] * w
    }

    #[test]
    fn stats_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..40);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..30.0)).collect();
            let s = BmdStats::from_values(&v).unwrap();
            let mean = v.iter().sum::<f64>() / n as f64;
            assert!((s.mean - mean).abs() < 1e-12);
            assert!((s.median - oracle_percentile(&v, 0.5)).abs() < 1e-12);
            assert!((s.p75 - oracle_percentile(&v, 0.75)).abs() < 1e-12);
            assert!((s.p90 - oracle_percentile(&v, 0.9)).abs() < 1e-12);
        }
    }

    #[test]
    fn report_on_generated_scenes() {
        let cfg = SynthConfig::default();
        let scenes: Vec<Scenario> =
            (0..4).map(|i| generate_synthetic(ScenarioKind::ALL[i], i as u64, &cfg).unwrap()).collect();
        let rows = bmd_report(&scenes, &[TargetParams::preset(1).unwrap(), TargetParams::preset(4).unwrap()], 5.0)
            .unwrap();
        assert_eq!(rows.len(), 2);
        let a = rows[1].agent_a.unwrap();
        assert_eq!(a.count, 4);
        assert!(a.mean < 3.0, "{a:?}");
    }
}
