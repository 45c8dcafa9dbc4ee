//! Target-driven marginal predictor: polyline/history encoding, goal
//! probabilities over sampled targets and per-goal trajectory regression.

use crate::error::{Error, Result};
use crate::features::TargetSet;
use crate::model::{AgentInputs, Model, HISTORY_FEATURES, SEGMENT_FEATURES};
use crate::numeric::tape::{Tape, Var};
use crate::numeric::{scaled_attention, Tensor};
use crate::scene::{from_frame, Frame, PairPrediction, Point};

/// Encoder outputs on a tape: map rows `m`, history rows `c` and latent `h`.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub m: Var,
    pub c: Var,
    pub latent: LatentVar,
}

/// Latent tokens together with their mean-pooled row.
#[derive(Debug, Clone, Copy)]
pub struct LatentVar {
    pub h: Var,
    pub pooled: Var,
}

impl LatentVar {
    pub fn new(tape: &mut Tape, h: Var) -> Result<Self> {
        Ok(Self { h, pooled: tape.mean_rows(h)? })
    }
}

/// Encodes map polylines and agent history, then runs one self-attention
/// round whose history-token outputs become the latent.
pub fn encode_vars(tape: &mut Tape, model: &Model, inputs: &AgentInputs) -> Result<EncodedVars> {
    let e = model.cfg.embed_dim;
    let store = &model.store;
    let m = if inputs.polylines.is_empty() {
        tape.constant_raw(1, e, vec![0.0; e])?
    } else {
        let segs = tape.constant_raw(inputs.segment_count(), SEGMENT_FEATURES, inputs.segments.clone())?;
        let z = model.seg.forward(tape, store, segs)?;
        let mut rows = Vec::with_capacity(inputs.polylines.len());
        for &(a, b) in &inputs.polylines {
            let s = tape.slice_rows(z, a, b - a)?;
            rows.push(tape.max_rows(s)?);
        }
        tape.concat_rows(&rows)?
    };
    let hist = tape.constant_raw(model.cfg.history_len, HISTORY_FEATURES, inputs.history.clone())?;
    let c = model.hist.forward(tape, store, hist)?;
    let x = tape.concat_rows(&[m, c])?;
    let q = model.att_q.forward(tape, store, c)?;
    let k = model.att_k.forward(tape, store, x)?;
    let v = model.att_v.forward(tape, store, x)?;
    let (att, _) = scaled_attention(tape, q, k, v, None)?;
    let out = model.att_o.forward(tape, store, att)?;
    let h = tape.add(c, out)?;
    Ok(EncodedVars { m, c, latent: LatentVar::new(tape, h)? })
}

fn scaled_points(points: &[Point], scale: f64) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0] / scale, p[1] / scale]).collect()
}

/// Goal logits for every target, as a 1×M row.
pub fn goal_logits_var(tape: &mut Tape, model: &Model, latent: LatentVar, targets: &[Point]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::contract("goal prediction needs at least one target"));
    }
    let t = tape.constant_raw(targets.len(), 2, scaled_points(targets, model.cfg.coord_scale))?;
    let s = model.goal.forward_split(tape, &model.store, t, latent.pooled)?;
    Ok(tape.transpose(s))
}

/// One G×(2T) row of trajectory coordinates (meters, agent frame) per goal.
pub fn regress_var(tape: &mut Tape, model: &Model, latent: LatentVar, goals: &[Point]) -> Result<Var> {
    let g = tape.constant_raw(goals.len(), 2, scaled_points(goals, model.cfg.coord_scale))?;
    let out = model.traj.forward_split(tape, &model.store, g, latent.pooled)?;
    Ok(tape.scale(out, model.cfg.coord_scale))
}

/// Indices of the `n` largest values, ties broken by lower index.
pub fn top_n(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Top-N candidates on a tape.
#[derive(Debug, Clone)]
pub struct CandidateVars {
    pub goal_index: Vec<usize>,
    /// Logits over every target (1×M).
    pub logits: Var,
    /// Renormalised probabilities of the selected goals (1×N).
    pub p: Var,
    /// N×(2T) trajectories in the agent frame.
    pub traj: Var,
}

pub fn candidates_var(tape: &mut Tape, model: &Model, inputs: &AgentInputs, latent: LatentVar) -> Result<CandidateVars> {
    let targets = &inputs.targets.points;
    let logits = goal_logits_var(tape, model, latent, targets)?;
    let goal_index = top_n(tape.value(logits), model.cfg.n_candidates);
    let sel = tape.gather_cols(logits, &goal_index)?;
    let p = tape.softmax_rows(sel)?;
    let goals: Vec<Point> = goal_index.iter().map(|&i| targets[i]).collect();
    let traj = regress_var(tape, model, latent, &goals)?;
    Ok(CandidateVars { goal_index, logits, p, traj })
}

/// Goal cross-entropy against the closest target plus Huber regression of
/// the trajectory regressed from that target.
pub fn marginal_loss_var(tape: &mut Tape, model: &Model, inputs: &AgentInputs, latent: LatentVar, logits: Var) -> Result<Var> {
    let (pos, gt) = match (inputs.positive, &inputs.gt_future) {
        (Some(p), Some(gt)) => (p, gt),
        _ => return Err(Error::contract(format!("agent {} has no complete ground-truth future", inputs.agent))),
    };
    let lsm = tape.log_softmax_rows(logits)?;
    let pick = tape.gather_cols(lsm, &[pos])?;
    let ce = tape.scale(pick, -1.0);
    let traj = regress_var(tape, model, latent, &[inputs.targets.points[pos]])?;
    let gt_flat: Vec<f64> = gt.iter().flat_map(|p| *p).collect();
    let reg = tape.huber(traj, &gt_flat, model.cfg.huber_delta)?;
    tape.add(ce, reg)
}

/// Value-level form of the marginal loss.
pub fn marginal_loss(goal_probs: &[f64], positive: usize, traj: &[Point], gt: &[Point], delta: f64) -> Result<f64> {
    if traj.len() != gt.len() || positive >= goal_probs.len() {
        return Err(Error::dim("marginal loss inputs disagree in length"));
    }
    let ce = -goal_probs[positive].ln();
    let n = 2 * traj.len();
    let reg: f64 = traj
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| [p[0] - g[0], p[1] - g[1]])
        .map(|r| crate::numeric::tape::huber(r, delta))
        .sum::<f64>()
        / n as f64;
    Ok(ce + reg)
}

pub fn rows_to_trajectories(flat: &[f64], rows: usize) -> Vec<Vec<Point>> {
    let w = flat.len() / rows.max(1);
    (0..rows).map(|r| flat[r * w..(r + 1) * w].chunks(2).map(|c| [c[0], c[1]]).collect()).collect()
}

/// N predicted trajectories (agent frame) with mode probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub trajectories: Vec<Vec<Point>>,
    pub probs: Vec<f64>,
    pub goals: Vec<Point>,
    pub frame: Frame,
    /// Set when fewer targets than requested candidates were available.
    pub warning: Option<String>,
}

impl CandidateSet {
    pub fn from_vars(tape: &Tape, cv: &CandidateVars, inputs: &AgentInputs, requested: usize) -> Self {
        let n = cv.goal_index.len();
        let warning = (n < requested).then(|| format!("only {n} targets available for {requested} candidates"));
        Self {
            trajectories: rows_to_trajectories(tape.value(cv.traj), n),
            probs: tape.value(cv.p).to_vec(),
            goals: cv.goal_index.iter().map(|&i| inputs.targets.points[i]).collect(),
            frame: inputs.frame,
            warning,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn world_trajectory(&self, i: usize) -> Vec<Point> {
        from_frame(&self.trajectories[i], &self.frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoding {
    pub m: Tensor,
    pub c: Tensor,
    pub map_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentLatent {
    pub h: Tensor,
}

pub fn encode_context(model: &Model, inputs: &AgentInputs) -> Result<(ContextEncoding, AgentLatent)> {
    let mut tape = Tape::new();
    let enc = encode_vars(&mut tape, model, inputs)?;
    Ok((
        ContextEncoding { m: tape.tensor(enc.m), c: tape.tensor(enc.c), map_warning: inputs.map_warning },
        AgentLatent { h: tape.tensor(enc.latent.h) },
    ))
}

/// Per-target goal probabilities for a latent.
pub fn predict_goals(model: &Model, latent: &AgentLatent, targets: &TargetSet) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let h = tape.constant(&latent.h);
    let lat = LatentVar::new(&mut tape, h)?;
    let l = goal_logits_var(&mut tape, model, lat, &targets.points)?;
    let p = tape.softmax_rows(l)?;
    Ok(tape.value(p).to_vec())
}

pub fn regress_trajectory(model: &Model, latent: &AgentLatent, goal: Point) -> Result<Vec<Point>> {
    let mut tape = Tape::new();
    let h = tape.constant(&latent.h);
    let lat = LatentVar::new(&mut tape, h)?;
    let t = regress_var(&mut tape, model, lat, &[goal])?;
    Ok(rows_to_trajectories(tape.value(t), 1).swap_remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalOutput {
    pub candidates: CandidateSet,
    pub context: ContextEncoding,
    pub latent: AgentLatent,
}

pub fn marginal_predict(model: &Model, inputs: &AgentInputs) -> Result<MarginalOutput> {
    let mut tape = Tape::new();
    let enc = encode_vars(&mut tape, model, inputs)?;
    let cv = candidates_var(&mut tape, model, inputs, enc.latent)?;
    Ok(MarginalOutput {
        candidates: CandidateSet::from_vars(&tape, &cv, inputs, model.cfg.n_candidates),
        context: ContextEncoding { m: tape.tensor(enc.m), c: tape.tensor(enc.c), map_warning: inputs.map_warning },
        latent: AgentLatent { h: tape.tensor(enc.latent.h) },
    })
}

/// Top-`k` products `p_a[i]·p_b[j]`, ties broken by `(i, j)` order.
pub fn cartesian_scores(p_a: &[f64], p_b: &[f64], k: usize) -> Vec<(usize, usize, f64)> {
    let mut all: Vec<(usize, usize, f64)> =
        p_a.iter().enumerate().flat_map(|(i, &a)| p_b.iter().enumerate().map(move |(j, &b)| (i, j, a * b))).collect();
    all.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    all.truncate(k);
    all
}

/// Cartesian-product baseline in world coordinates.
pub fn cartesian_baseline(a: &CandidateSet, b: &CandidateSet, k: usize) -> Vec<PairPrediction> {
    cartesian_scores(&a.probs, &b.probs, k)
        .into_iter()
        .map(|(i, j, s)| PairPrediction { traj_a: a.world_trajectory(i), traj_b: b.world_trajectory(j), score: s })
        .collect()
}
