//! Losses of the full pipeline, training loops and pair prediction.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::mine_interactive_pairs;
use crate::joint::{align, pair_forward, PairForward};
use crate::marginal::{encode_vars, goal_logits_var, marginal_loss_var, marginal_predict, rows_to_trajectories, cartesian_baseline};
use crate::model::{Model, ModelConfig, PairInputs};
use crate::numeric::optim::Adam;
use crate::numeric::tape::{Tape, Var};
use crate::scene::{from_frame, PairPrediction, Point, Scenario};
use crate::scorer::{avg_pair_linf, gt_pair_distribution, pair_logits_var, scoring_loss_var, select_topk_pairs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Pairs per optimisation step.
    pub batch: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 1e-3, batch: 4, seed: 0, log_every: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Marginal,
    Joint,
}

/// Prepares the first mined pair of every scenario. Scenarios without an
/// interactive pair are skipped.
pub fn prepare_pairs(scenarios: &[Scenario], cfg: &ModelConfig, threshold: f64) -> Result<Vec<PairInputs>> {
    let mut out = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        match mine_interactive_pairs(s, threshold).first() {
            Some(&pair) => out.push(PairInputs::prepare(s, pair, cfg)?),
            None => log::warn!("scenario {} has no interactive pair", s.id),
        }
    }
    Ok(out)
}

/// Marginal loss of both agents.
pub fn marginal_pair_loss(tape: &mut Tape, model: &Model, pair: &PairInputs) -> Result<Var> {
    let mut total = None;
    for inp in [&pair.a, &pair.b] {
        let enc = encode_vars(tape, model, inp)?;
        let logits = goal_logits_var(tape, model, enc.latent, &inp.targets.points)?;
        let l = marginal_loss_var(tape, model, inp, enc.latent, logits)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("two agents"))
}

/// Final candidates of a forward pass: A's trajectories, B's trajectories in
/// its own frame and B's trajectories in A's frame.
pub struct FinalTrajectories {
    pub a: Vec<Vec<Point>>,
    pub b: Vec<Vec<Point>>,
    pub b_in_a: Vec<Vec<Point>>,
}

pub fn final_trajectories(tape: &Tape, pair: &PairInputs, f: &PairForward) -> FinalTrajectories {
    let a = rows_to_trajectories(tape.value(f.final_a.traj), f.final_a.goal_index.len());
    let b = rows_to_trajectories(tape.value(f.final_b.traj), f.final_b.goal_index.len());
    let b_in_a = align(&b, &pair.b.frame, &pair.a.frame);
    FinalTrajectories { a, b, b_in_a }
}

/// Pair probabilities (1×N_A·N_B) on the tape.
pub fn pair_scores_var(tape: &mut Tape, model: &Model, f: &PairForward, t: &FinalTrajectories) -> Result<Var> {
    let logits = pair_logits_var(tape, model, &t.a, &t.b_in_a, f.latent_a.pooled, f.latent_b.pooled)?;
    tape.softmax_rows(logits)
}

/// Target pair distribution from each agent's l∞ error in its own frame.
pub fn target_distribution(model: &Model, pair: &PairInputs, t: &FinalTrajectories) -> Result<Vec<f64>> {
    let (ga, gb) = match (&pair.a.gt_future, &pair.b.gt_future) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::contract(format!("pair in {} lacks a complete ground truth", pair.scenario_id))),
    };
    let mut d = Vec::with_capacity(t.a.len() * t.b.len());
    for sa in &t.a {
        for sb in &t.b {
            d.push(avg_pair_linf(sa, sb, ga, gb)?);
        }
    }
    gt_pair_distribution(&d, model.cfg.alpha)
}

/// Marginal losses before and after the joint block plus the pair-scoring
/// cross-entropy.
pub fn joint_loss(tape: &mut Tape, model: &Model, pair: &PairInputs) -> Result<(Var, PairForward)> {
    let f = pair_forward(tape, model, pair)?;
    let mut terms = vec![
        marginal_loss_var(tape, model, &pair.a, f.enc_a.latent, f.marginal_a.logits)?,
        marginal_loss_var(tape, model, &pair.b, f.enc_b.latent, f.marginal_b.logits)?,
        marginal_loss_var(tape, model, &pair.a, f.latent_a, f.final_a.logits)?,
        marginal_loss_var(tape, model, &pair.b, f.latent_b, f.final_b.logits)?,
    ];
    let t = final_trajectories(tape, pair, &f);
    let scores = pair_scores_var(tape, model, &f, &t)?;
    let d = target_distribution(model, pair, &t)?;
    terms.push(scoring_loss_var(tape, scores, &d)?);
    let mut total = terms[0];
    for &x in &terms[1..] {
        total = tape.add(total, x)?;
    }
    Ok((total, f))
}

pub fn stage_loss(tape: &mut Tape, model: &Model, pair: &PairInputs, stage: Stage) -> Result<Var> {
    match stage {
        Stage::Marginal => marginal_pair_loss(tape, model, pair),
        Stage::Joint => Ok(joint_loss(tape, model, pair)?.0),
    }
}

/// Mean per-pair loss of every step.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

/// Adam training over shuffled minibatches. The marginal stage only
/// updates marginal parameters; the joint stage updates everything.
pub fn train(model: &mut Model, pairs: &[PairInputs], tc: &TrainConfig, stage: Stage) -> Result<TrainLog> {
    let usable: Vec<&PairInputs> = pairs.iter().filter(|p| p.has_ground_truth()).collect();
    if usable.is_empty() {
        return Err(Error::contract("no training pair has a complete ground truth"));
    }
    if tc.batch == 0 || !(tc.lr > 0.0) {
        return Err(Error::config("batch and lr must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut cursor = order.len();
    let mut opt = Adam::new(tc.lr);
    let mut log = TrainLog::default();
    for step in 0..tc.steps {
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        let b = tc.batch.min(usable.len());
        for _ in 0..b {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let l = stage_loss(&mut tape, model, usable[order[cursor]], stage)?;
            cursor += 1;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let loss = tape.scale(total.expect("non-empty batch"), 1.0 / b as f64);
        tape.backward(loss, &mut model.store)?;
        let value = tape.scalar(loss);
        match stage {
            Stage::Marginal => opt.step(&mut model.store, Model::is_marginal_param),
            Stage::Joint => opt.step(&mut model.store, |_| true),
        }
        log.losses.push(value);
        if tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps) {
            info!("{stage:?} step {step}: loss {value:.4}");
        }
    }
    Ok(log)
}

/// Joint prediction: scored pairs reduced to `top_k` by NMS, in world
/// coordinates and sorted by score.
pub fn predict_joint(model: &Model, pair: &PairInputs) -> Result<Vec<PairPrediction>> {
    let mut tape = Tape::new();
    let f = pair_forward(&mut tape, model, pair)?;
    let t = final_trajectories(&tape, pair, &f);
    let scores_var = pair_scores_var(&mut tape, model, &f, &t)?;
    let scores = tape.value(scores_var).to_vec();
    let wa: Vec<Vec<Point>> = t.a.iter().map(|s| from_frame(s, &pair.a.frame)).collect();
    let wb: Vec<Vec<Point>> = t.b.iter().map(|s| from_frame(s, &pair.b.frame)).collect();
    let nb = wb.len();
    let endpoints: Vec<(Point, Point)> =
        (0..scores.len()).map(|k| (*wa[k / nb].last().unwrap(), *wb[k % nb].last().unwrap())).collect();
    let k = model.cfg.top_k.min(scores.len());
    let sel = select_topk_pairs(&endpoints, &scores, k, model.cfg.nms_eps0, model.cfg.nms_gamma)?;
    let mut out: Vec<PairPrediction> = sel
        .iter()
        .map(|s| PairPrediction { traj_a: wa[s.index / nb].clone(), traj_b: wb[s.index % nb].clone(), score: s.score })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Cartesian-product baseline from the marginal predictor alone.
pub fn predict_marginal(model: &Model, pair: &PairInputs) -> Result<Vec<PairPrediction>> {
    let a = marginal_predict(model, &pair.a)?.candidates;
    let b = marginal_predict(model, &pair.b)?.candidates;
    Ok(cartesian_baseline(&a, &b, model.cfg.top_k))
}
