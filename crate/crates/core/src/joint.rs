//! Joint learning block: the other agent's candidates are embedded in the
//! self frame and attended to, with their mode probabilities biasing the
//! attention logits, to update each agent's latent.

use crate::error::{Error, Result};
use crate::marginal::{
    candidates_var, encode_vars, rows_to_trajectories, CandidateSet, CandidateVars, ContextEncoding, EncodedVars, LatentVar,
};
use crate::model::{JointRound, Model, PairInputs};
use crate::numeric::tape::{Tape, Var};
use crate::numeric::{scaled_attention, Gru, ParameterStore, Tensor};
use crate::scene::{Frame, Point};

/// Value-level weighted attention `softmax((q·kᵀ + q·kbᵀ)/√d)·v`.
pub fn weighted_attention(q: &Tensor, k: &Tensor, v: &Tensor, kb: &Tensor) -> Result<Tensor> {
    let (nk, _) = k.dims2();
    let (nv, _) = v.dims2();
    let (nb, _) = kb.dims2();
    if nk != nv || nk != nb {
        return Err(Error::dim(format!("keys {nk}, values {nv} and bias {nb} rows disagree")));
    }
    let mut tape = Tape::new();
    let (q, k, v, kb) = (tape.constant(q), tape.constant(k), tape.constant(v), tape.constant(kb));
    let (out, _) = scaled_attention(&mut tape, q, k, v, Some(kb))?;
    Ok(tape.tensor(out))
}

/// Per-token bias values, each repeated across the embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasKey {
    pub values: Vec<f64>,
    pub width: usize,
}

impl BiasKey {
    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().flat_map(|&v| std::iter::repeat_n(v, self.width)).collect();
        Tensor::matrix(self.values.len(), self.width, data).expect("bias shape is consistent")
    }
}

/// Context tokens used as keys: map rows, then history rows when enabled.
fn context_rows(ctx: &ContextEncoding, history_tokens: bool) -> Result<Tensor> {
    let (hm, e) = ctx.m.dims2();
    let (hc, ec) = ctx.c.dims2();
    if e != ec {
        return Err(Error::dim(format!("map width {e} vs history width {ec}")));
    }
    let mut data = ctx.m.data().to_vec();
    let mut rows = hm;
    if history_tokens {
        data.extend_from_slice(ctx.c.data());
        rows += hc;
    }
    Tensor::matrix(rows, e, data)
}

/// Stacks candidate embeddings over the context tokens; keys and values are
/// the same matrix. Candidate bias rows carry `p_other`, context rows the
/// uniform value `1 / context_rows`.
pub fn build_keys_values(
    candidates: &Tensor,
    ctx: &ContextEncoding,
    p_other: &[f64],
    history_tokens: bool,
) -> Result<(Tensor, Tensor, BiasKey)> {
    let context = context_rows(ctx, history_tokens)?;
    let (h, e) = context.dims2();
    let (n, ce) = if candidates.is_empty() { (0, e) } else { candidates.dims2() };
    if ce != e {
        return Err(Error::dim(format!("candidate width {ce} vs context width {e}")));
    }
    if n != p_other.len() {
        return Err(Error::dim(format!("{n} candidates with {} probabilities", p_other.len())));
    }
    let mut data = if n == 0 { Vec::new() } else { candidates.data().to_vec() };
    data.extend_from_slice(context.data());
    let kv = Tensor::matrix(n + h, e, data)?;
    let mut values = p_other.to_vec();
    values.extend(std::iter::repeat_n(1.0 / h as f64, h));
    Ok((kv.clone(), kv, BiasKey { values, width: e }))
}

/// Maps trajectories from the other agent's frame into the self frame.
pub fn align(trajectories: &[Vec<Point>], frame_other: &Frame, frame_self: &Frame) -> Vec<Vec<Point>> {
    trajectories.iter().map(|t| t.iter().map(|&p| frame_self.to_local(frame_other.to_world(p))).collect()).collect()
}

/// Runs the GRU over every aligned trajectory (scaled) as one batch and
/// returns the final hidden states (N×hidden).
pub fn embed_aligned_var(tape: &mut Tape, gru: &Gru, store: &ParameterStore, aligned: &[Vec<Point>], scale: f64) -> Result<Var> {
    let n = aligned.len();
    let steps = aligned.first().map_or(0, Vec::len);
    let mut h = tape.constant_raw(n, gru.hidden, vec![0.0; n * gru.hidden])?;
    for t in 0..steps {
        let x: Vec<f64> = aligned.iter().flat_map(|tr| [tr[t][0] / scale, tr[t][1] / scale]).collect();
        let x = tape.constant_raw(n, 2, x)?;
        h = gru.step(tape, store, x, h)?;
    }
    Ok(h)
}

/// Embeds the other agent's candidates after aligning them to the self frame.
pub fn embed_candidates(
    gru: &Gru,
    store: &ParameterStore,
    s_other: &[Vec<Point>],
    frame_other: &Frame,
    frame_self: &Frame,
    scale: f64,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let aligned = align(s_other, frame_other, frame_self);
    let h = embed_aligned_var(&mut tape, gru, store, &aligned, scale)?;
    Ok(tape.tensor(h))
}

/// One latent update of the self agent from the other agent's candidates:
/// `ĥ = h + WeightedAttention(h·Wq, kv·Wk, kv·Wv, K_b)·Wo`.
#[allow(clippy::too_many_arguments)]
pub fn joint_update_var(
    tape: &mut Tape,
    model: &Model,
    round: &JointRound,
    enc_self: &EncodedVars,
    h_cur: Var,
    other_traj: &[Vec<Point>],
    frame_other: &Frame,
    frame_self: &Frame,
    p_other: Var,
) -> Result<Var> {
    let store = &model.store;
    let e = model.cfg.embed_dim;
    let aligned = align(other_traj, frame_other, frame_self);
    let g = embed_aligned_var(tape, &round.gru, store, &aligned, model.cfg.coord_scale)?;
    let emb = round.cand.forward(tape, store, g)?;
    let ctx = if model.cfg.history_tokens { tape.concat_rows(&[enc_self.m, enc_self.c])? } else { enc_self.m };
    let n_ctx = tape.dims(ctx).0;
    let kv = tape.concat_rows(&[emb, ctx])?;
    let q = round.q.forward(tape, store, h_cur)?;
    let k = round.k.forward(tape, store, kv)?;
    let v = round.v.forward(tape, store, kv)?;
    let p_col = tape.transpose(p_other);
    let uniform = tape.constant_raw(n_ctx, 1, vec![1.0 / n_ctx as f64; n_ctx])?;
    let col = tape.concat_rows(&[p_col, uniform])?;
    let kb = tape.repeat_cols(col, e)?;
    let (att, _) = scaled_attention(tape, q, k, v, Some(kb))?;
    let out = round.o.forward(tape, store, att)?;
    tape.add(h_cur, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    UpdateA { round: usize },
    UpdateB { round: usize },
    Repredict { round: usize },
}

/// Everything a joint forward pass leaves on the tape.
#[derive(Debug, Clone)]
pub struct PairForward {
    pub enc_a: EncodedVars,
    pub enc_b: EncodedVars,
    pub marginal_a: CandidateVars,
    pub marginal_b: CandidateVars,
    pub latent_a: LatentVar,
    pub latent_b: LatentVar,
    pub final_a: CandidateVars,
    pub final_b: CandidateVars,
    pub trace: Vec<TraceEvent>,
}

fn traj_values(tape: &Tape, cv: &CandidateVars) -> Vec<Vec<Point>> {
    rows_to_trajectories(tape.value(cv.traj), cv.goal_index.len())
}

/// Stacked joint learning. Within a round both updates read the candidates
/// the round started with; candidates are re-derived from the updated
/// latents only between rounds.
pub fn joint_learning_var(
    tape: &mut Tape,
    model: &Model,
    pair: &PairInputs,
    enc_a: &EncodedVars,
    enc_b: &EncodedVars,
    mut cand_a: CandidateVars,
    mut cand_b: CandidateVars,
) -> Result<(LatentVar, LatentVar, Vec<TraceEvent>)> {
    if model.joint.is_empty() {
        return Err(Error::config("stack_q must be at least 1"));
    }
    let (mut lat_a, mut lat_b) = (enc_a.latent, enc_b.latent);
    let mut trace = Vec::new();
    let q = model.joint.len();
    for (r, round) in model.joint.iter().enumerate() {
        let sa = traj_values(tape, &cand_a);
        let sb = traj_values(tape, &cand_b);
        let fa = pair.a.frame;
        let fb = pair.b.frame;
        let ha = joint_update_var(tape, model, round, enc_a, lat_a.h, &sb, &fb, &fa, cand_b.p)?;
        trace.push(TraceEvent::UpdateA { round: r });
        let hb = joint_update_var(tape, model, round, enc_b, lat_b.h, &sa, &fa, &fb, cand_a.p)?;
        trace.push(TraceEvent::UpdateB { round: r });
        lat_a = LatentVar::new(tape, ha)?;
        lat_b = LatentVar::new(tape, hb)?;
        if r + 1 < q {
            cand_a = candidates_var(tape, model, &pair.a, lat_a)?;
            cand_b = candidates_var(tape, model, &pair.b, lat_b)?;
            trace.push(TraceEvent::Repredict { round: r });
        }
    }
    Ok((lat_a, lat_b, trace))
}

/// Marginal prediction for both agents, joint learning, then candidates
/// re-sampled from the updated latents.
pub fn pair_forward(tape: &mut Tape, model: &Model, pair: &PairInputs) -> Result<PairForward> {
    let enc_a = encode_vars(tape, model, &pair.a)?;
    let enc_b = encode_vars(tape, model, &pair.b)?;
    let marginal_a = candidates_var(tape, model, &pair.a, enc_a.latent)?;
    let marginal_b = candidates_var(tape, model, &pair.b, enc_b.latent)?;
    let (latent_a, latent_b, trace) =
        joint_learning_var(tape, model, pair, &enc_a, &enc_b, marginal_a.clone(), marginal_b.clone())?;
    let final_a = candidates_var(tape, model, &pair.a, latent_a)?;
    let final_b = candidates_var(tape, model, &pair.b, latent_b)?;
    Ok(PairForward { enc_a, enc_b, marginal_a, marginal_b, latent_a, latent_b, final_a, final_b, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub candidates_a: CandidateSet,
    pub candidates_b: CandidateSet,
    pub h_hat_a: Tensor,
    pub h_hat_b: Tensor,
    pub trace: Vec<TraceEvent>,
}

pub fn joint_predict(model: &Model, pair: &PairInputs) -> Result<JointOutput> {
    let mut tape = Tape::new();
    let f = pair_forward(&mut tape, model, pair)?;
    let n = model.cfg.n_candidates;
    Ok(JointOutput {
        candidates_a: CandidateSet::from_vars(&tape, &f.final_a, &pair.a, n),
        candidates_b: CandidateSet::from_vars(&tape, &f.final_b, &pair.b, n),
        h_hat_a: tape.tensor(f.latent_a.h),
        h_hat_b: tape.tensor(f.latent_b.h),
        trace: f.trace,
    })
}
