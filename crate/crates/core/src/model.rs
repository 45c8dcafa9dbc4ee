//! Model hyperparameters, parameter layout and per-agent input preparation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{gt_endpoint, targets_for_agent, TargetParams, TargetSet};
use crate::numeric::{Gru, Linear, Mlp2, ParameterStore};
use crate::scene::geometry::dist;
use crate::scene::{AgentId, Frame, Point, PolylineKind, Scenario, DT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Token width E shared by map, history and candidate embeddings.
    pub embed_dim: usize,
    /// Hidden width of every two-layer MLP.
    pub hidden: usize,
    pub gru_hidden: usize,
    /// Candidates per agent (N).
    pub n_candidates: usize,
    /// Output pairs (K).
    pub top_k: usize,
    pub q_stack: usize,
    /// Temperature of the ground-truth pair distribution (m).
    pub alpha: f64,
    pub nms_eps0: f64,
    pub nms_gamma: f64,
    /// Meters per unit of every coordinate fed to the networks.
    pub coord_scale: f64,
    /// Polylines with a point within this distance of the agent are encoded.
    pub map_radius: f64,
    pub huber_delta: f64,
    /// Whether agent-history tokens join the map tokens as joint-block keys.
    pub history_tokens: bool,
    pub history_len: usize,
    pub horizon: usize,
    pub target_preset: usize,
    pub target_spacing: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 64,
            gru_hidden: 32,
            n_candidates: 16,
            top_k: 6,
            q_stack: 1,
            alpha: 1.0,
            nms_eps0: 2.0,
            nms_gamma: 0.5,
            coord_scale: 10.0,
            map_radius: 60.0,
            huber_delta: 1.0,
            history_tokens: true,
            history_len: 10,
            horizon: 30,
            target_preset: crate::features::DEFAULT_PRESET,
            target_spacing: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 12] = [
            (self.embed_dim > 0, "embed_dim must be positive"),
            (self.hidden > 0, "hidden must be positive"),
            (self.gru_hidden > 0, "gru_hidden must be positive"),
            (self.n_candidates > 0, "n_candidates must be positive"),
            (self.top_k > 0, "top_k must be positive"),
            (self.q_stack >= 1, "stack_q must be at least 1"),
            (self.alpha > 0.0, "alpha must be positive"),
            (self.nms_eps0 > 0.0, "nms_eps0 must be positive"),
            (self.nms_gamma > 0.0 && self.nms_gamma < 1.0, "nms_gamma must lie in (0, 1)"),
            (self.coord_scale > 0.0 && self.map_radius > 0.0, "coord_scale and map_radius must be positive"),
            (self.history_len > 0 && self.horizon > 0, "history_len and horizon must be positive"),
            (self.target_spacing > 0.0, "target_spacing must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(msg));
            }
        }
        if self.top_k > self.n_candidates * self.n_candidates {
            return Err(Error::config("top_k exceeds the number of candidate pairs"));
        }
        TargetParams::preset(self.target_preset)?;
        Ok(())
    }

    pub fn target_params(&self) -> Result<TargetParams> {
        let mut p = TargetParams::preset(self.target_preset)?;
        p.spacing = self.target_spacing;
        Ok(p)
    }
}

/// Width of the per-segment map feature.
pub const SEGMENT_FEATURES: usize = 7;
/// Width of the per-step history feature.
pub const HISTORY_FEATURES: usize = 8;

/// Parameters of one stacked joint-attention round.
#[derive(Debug, Clone)]
pub struct JointRound {
    pub gru: Gru,
    pub cand: Linear,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParameterStore,
    pub seg: Mlp2,
    pub hist: Mlp2,
    pub att_q: Linear,
    pub att_k: Linear,
    pub att_v: Linear,
    pub att_o: Linear,
    pub goal: Mlp2,
    pub traj: Mlp2,
    pub joint: Vec<JointRound>,
    pub scorer: Mlp2,
}

pub const MARGINAL_PREFIX: &str = "marginal.";

impl Model {
    /// Fresh parameters from a seeded generator. Joint output projections
    /// start at zero so the untrained joint block leaves latents unchanged.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let (e, hd, t) = (cfg.embed_dim, cfg.hidden, cfg.horizon);
        let seg = Mlp2::init(&mut s, &mut rng, "marginal.seg", SEGMENT_FEATURES, hd, e)?;
        let hist = Mlp2::init(&mut s, &mut rng, "marginal.hist", HISTORY_FEATURES, hd, e)?;
        let att_q = Linear::init(&mut s, &mut rng, "marginal.att_q", e, e, false)?;
        let att_k = Linear::init(&mut s, &mut rng, "marginal.att_k", e, e, false)?;
        let att_v = Linear::init(&mut s, &mut rng, "marginal.att_v", e, e, false)?;
        let att_o = Linear::init(&mut s, &mut rng, "marginal.att_o", e, e, false)?;
        let goal = Mlp2::init(&mut s, &mut rng, "marginal.goal", 2 + e, hd, 1)?;
        let traj = Mlp2::init(&mut s, &mut rng, "marginal.traj", 2 + e, hd, 2 * t)?;
        let mut joint = Vec::with_capacity(cfg.q_stack);
        for r in 0..cfg.q_stack {
            let p = format!("joint.r{r}");
            joint.push(JointRound {
                gru: Gru::init(&mut s, &mut rng, &format!("{p}.gru"), 2, cfg.gru_hidden)?,
                cand: Linear::init(&mut s, &mut rng, &format!("{p}.cand"), cfg.gru_hidden, e, true)?,
                q: Linear::init(&mut s, &mut rng, &format!("{p}.q"), e, e, false)?,
                k: Linear::init(&mut s, &mut rng, &format!("{p}.k"), e, e, false)?,
                v: Linear::init(&mut s, &mut rng, &format!("{p}.v"), e, e, false)?,
                o: Linear::init_zero(&mut s, &format!("{p}.o"), e, e)?,
            });
        }
        let scorer = Mlp2::init(&mut s, &mut rng, "scorer.mlp", 2 * (2 * t + e), hd, 1)?;
        Ok(Self { cfg, store: s, seg, hist, att_q, att_k, att_v, att_o, goal, traj, joint, scorer })
    }

    /// Copies every parameter present in `other` with a matching shape.
    pub fn load(&mut self, other: &ParameterStore) -> usize {
        self.store.load_matching(other)
    }

    pub fn is_marginal_param(name: &str) -> bool {
        name.starts_with(MARGINAL_PREFIX)
    }
}

/// Everything one agent contributes to a forward pass, precomputed from a
/// scenario. All coordinates are in the agent frame.
#[derive(Debug, Clone)]
pub struct AgentInputs {
    pub agent: AgentId,
    pub frame: Frame,
    /// Row-major S×SEGMENT_FEATURES segment features.
    pub segments: Vec<f64>,
    /// Segment row range of every encoded polyline, in canonical order.
    pub polylines: Vec<(usize, usize)>,
    /// Row-major history_len×HISTORY_FEATURES.
    pub history: Vec<f64>,
    pub targets: TargetSet,
    /// Ground-truth future (horizon points) when every future step is valid.
    pub gt_future: Option<Vec<Point>>,
    /// Index of the target closest to the ground-truth endpoint.
    pub positive: Option<usize>,
    /// Set when no polyline fell within the map radius.
    pub map_warning: bool,
}

fn kind_index(k: PolylineKind) -> usize {
    match k {
        PolylineKind::LaneCenterline => 0,
        PolylineKind::Boundary => 1,
        PolylineKind::Crosswalk => 2,
    }
}

impl AgentInputs {
    pub fn prepare(scenario: &Scenario, agent: AgentId, cfg: &ModelConfig) -> Result<Self> {
        let track = scenario.track(agent)?;
        if scenario.history_len != cfg.history_len {
            return Err(Error::config(format!(
                "scenario {} has history_len {}, model expects {}",
                scenario.id, scenario.history_len, cfg.history_len
            )));
        }
        let frame = scenario.agent_frame(agent)?;
        let s = cfg.coord_scale;

        let mut polys: Vec<(usize, Vec<Point>)> = scenario
            .map
            .iter()
            .filter(|p| p.points.iter().any(|&q| dist(q, frame.origin) <= cfg.map_radius))
            .map(|p| (kind_index(p.kind), p.points.iter().map(|&q| frame.to_local(q)).collect()))
            .collect();
        // Canonical order makes the encoding independent of file order.
        polys.sort_by(|a, b| {
            a.0.cmp(&b.0).then_with(|| {
                let fa = a.1.iter().flat_map(|p| p.iter());
                let fb = b.1.iter().flat_map(|p| p.iter());
                fa.zip(fb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.1.len().cmp(&b.1.len()))
            })
        });
        let mut segments = Vec::new();
        let mut polylines = Vec::with_capacity(polys.len());
        let mut row = 0;
        for (kind, pts) in &polys {
            let start = row;
            for w in pts.windows(2) {
                let mut f = [w[0][0] / s, w[0][1] / s, w[1][0] / s, w[1][1] / s, 0.0, 0.0, 0.0];
                f[4 + kind] = 1.0;
                segments.extend_from_slice(&f);
                row += 1;
            }
            polylines.push((start, row));
        }

        let th = cfg.history_len;
        let mut history = Vec::with_capacity(th * HISTORY_FEATURES);
        for t in 0..th {
            if !track.valid[t] {
                history.extend_from_slice(&[0.0; HISTORY_FEATURES]);
                continue;
            }
            let p = frame.to_local(track.positions[t]);
            let h = frame.heading_to_local(track.headings[t]);
            let v = if t > 0 && track.valid[t - 1] {
                let q = frame.to_local(track.positions[t - 1]);
                [(p[0] - q[0]) / DT / s, (p[1] - q[1]) / DT / s]
            } else {
                [0.0, 0.0]
            };
            let time = (t as f64 + 1.0 - th as f64) / th as f64;
            history.extend_from_slice(&[p[0] / s, p[1] / s, h.cos(), h.sin(), v[0], v[1], time, 1.0]);
        }

        let targets = targets_for_agent(scenario, agent, &cfg.target_params()?)?;
        let gt_future = if track.len() == th + cfg.horizon && track.valid[th..].iter().all(|&v| v) {
            Some(track.positions[th..].iter().map(|&p| frame.to_local(p)).collect())
        } else {
            None
        };
        let positive = match gt_endpoint(scenario, agent)? {
            Some(end) if gt_future.is_some() => targets
                .points
                .iter()
                .enumerate()
                .min_by(|a, b| dist(*a.1, end).total_cmp(&dist(*b.1, end)))
                .map(|(i, _)| i),
            _ => None,
        };
        Ok(Self {
            agent,
            frame,
            map_warning: polylines.is_empty(),
            segments,
            polylines,
            history,
            targets,
            gt_future,
            positive,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len() / SEGMENT_FEATURES
    }
}

/// Precomputed inputs of both agents of an interactive pair.
#[derive(Debug, Clone)]
pub struct PairInputs {
    pub scenario_id: String,
    pub a: AgentInputs,
    pub b: AgentInputs,
}

impl PairInputs {
    pub fn prepare(scenario: &Scenario, pair: (AgentId, AgentId), cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            scenario_id: scenario.id.clone(),
            a: AgentInputs::prepare(scenario, pair.0, cfg)?,
            b: AgentInputs::prepare(scenario, pair.1, cfg)?,
        })
    }

    pub fn has_ground_truth(&self) -> bool {
        self.a.positive.is_some() && self.b.positive.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic, ScenarioKind, SynthConfig};

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig { q_stack: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn joint_output_projection_starts_at_zero() {
        let m = Model::new(ModelConfig::default(), 3).unwrap();
        assert!(m.store.get("joint.r0.o.w").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(Model::is_marginal_param("marginal.goal.w1"));
        assert!(!Model::is_marginal_param("scorer.mlp.w1"));
    }

    #[test]
    fn inputs_are_prepared_in_agent_frame() {
        let s = generate_synthetic(ScenarioKind::Merge, 2, &SynthConfig::default()).unwrap();
        let inp = AgentInputs::prepare(&s, 1, &ModelConfig::default()).unwrap();
        let c = (ModelConfig::default().history_len - 1) * HISTORY_FEATURES;
        assert!(inp.history[c].abs() < 1e-12 && inp.history[c + 1].abs() < 1e-12);
        assert_eq!(inp.history[c + 2], 1.0);
        assert!(inp.positive.is_some() && inp.gt_future.as_ref().unwrap().len() == 30);
        assert!(!inp.polylines.is_empty() && !inp.map_warning);
    }
}
