//! Pair broadcasting, the pair-scoring MLP, the ground-truth pair
//! distribution with its cross-entropy loss, and NMS pair selection.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::tape::{Tape, Var};
use crate::numeric::{softmax, Tensor};
use crate::scene::geometry::dist;
use crate::scene::Point;

/// Row-major `(i, j)` enumeration of all candidate pairs.
pub fn broadcast_pairs(n_a: usize, n_b: usize) -> Vec<(usize, usize)> {
    (0..n_a).flat_map(|i| (0..n_b).map(move |j| (i, j))).collect()
}

fn flatten(trajs: &[Vec<Point>], scale: f64) -> Vec<f64> {
    trajs.iter().flat_map(|t| t.iter().flat_map(|p| [p[0] / scale, p[1] / scale])).collect()
}

fn side_rows(tape: &mut Tape, trajs: &[Vec<Point>], pooled: Var, scale: f64) -> Result<Var> {
    let n = trajs.len();
    let w = trajs.first().map_or(0, |t| 2 * t.len());
    if trajs.iter().any(|t| 2 * t.len() != w) {
        return Err(Error::dim("candidate trajectories differ in length"));
    }
    let t = tape.constant_raw(n, w, flatten(trajs, scale))?;
    let ones = tape.constant_raw(n, 1, vec![1.0; n])?;
    let rep = tape.matmul(ones, pooled)?;
    tape.concat_cols(&[t, rep])
}

/// Pair logits (1×N_A·N_B) for trajectories of both agents expressed in
/// agent A's frame and the pooled updated latents.
pub fn pair_logits_var(
    tape: &mut Tape,
    model: &Model,
    traj_a: &[Vec<Point>],
    traj_b: &[Vec<Point>],
    pooled_a: Var,
    pooled_b: Var,
) -> Result<Var> {
    if traj_a.is_empty() || traj_b.is_empty() {
        return Err(Error::contract("pair scoring needs candidates for both agents"));
    }
    let s = model.cfg.coord_scale;
    let left = side_rows(tape, traj_a, pooled_a, s)?;
    let right = side_rows(tape, traj_b, pooled_b, s)?;
    let out = model.scorer.forward_pairs(tape, &model.store, left, right)?;
    Ok(tape.transpose(out))
}

/// Pair probabilities from latent tokens `ĥ_A`, `ĥ_B`.
pub fn score_pairs(
    model: &Model,
    traj_a: &[Vec<Point>],
    traj_b: &[Vec<Point>],
    h_hat_a: &Tensor,
    h_hat_b: &Tensor,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let ha = tape.constant(h_hat_a);
    let hb = tape.constant(h_hat_b);
    let pa = tape.mean_rows(ha)?;
    let pb = tape.mean_rows(hb)?;
    let l = pair_logits_var(&mut tape, model, traj_a, traj_b, pa, pb)?;
    softmax(tape.value(l))
}

/// Largest absolute coordinate deviation over all timesteps.
pub fn pair_linf(traj: &[Point], gt: &[Point]) -> Result<f64> {
    if traj.len() != gt.len() {
        return Err(Error::contract(format!("trajectory of {} steps against ground truth of {}", traj.len(), gt.len())));
    }
    Ok(traj.iter().zip(gt).flat_map(|(p, g)| [(p[0] - g[0]).abs(), (p[1] - g[1]).abs()]).fold(0.0, f64::max))
}

/// Mean of the two agents' l∞ deviations.
pub fn avg_pair_linf(traj_a: &[Point], traj_b: &[Point], gt_a: &[Point], gt_b: &[Point]) -> Result<f64> {
    Ok(0.5 * (pair_linf(traj_a, gt_a)? + pair_linf(traj_b, gt_b)?))
}

/// `D(i) ∝ exp(−d_i / (2α))`.
pub fn gt_pair_distribution(d: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::config(format!("alpha must be positive, got {alpha}")));
    }
    let logits: Vec<f64> = d.iter().map(|&x| -x / (2.0 * alpha)).collect();
    softmax(&logits)
}

pub const SCORE_EPS: f64 = 1e-12;

/// `−Σ D(i)·ln(scores(i) + ε)`.
pub fn scoring_loss(scores: &[f64], d: &[f64]) -> Result<f64> {
    if scores.len() != d.len() {
        return Err(Error::dim(format!("{} scores against {} targets", scores.len(), d.len())));
    }
    Ok(-scores.iter().zip(d).map(|(s, t)| t * (s + SCORE_EPS).ln()).sum::<f64>())
}

pub fn scoring_loss_var(tape: &mut Tape, scores: Var, d: &[f64]) -> Result<Var> {
    let shifted = tape.add_scalar(scores, SCORE_EPS);
    let logs = tape.ln(shifted);
    let s = tape.weighted_sum(logs, d)?;
    Ok(tape.scale(s, -1.0))
}

/// One pair accepted by [`select_topk_pairs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selected {
    pub index: usize,
    pub score: f64,
    /// Separation threshold in force when the pair was accepted (0 for
    /// pairs filled by score after the threshold fell below the floor).
    pub eps: f64,
}

pub const NMS_FLOOR: f64 = 0.01;

/// Distance between two pairs: the larger of the two agents' endpoint gaps.
pub fn pair_distance(a: (Point, Point), b: (Point, Point)) -> f64 {
    dist(a.0, b.0).max(dist(a.1, b.1))
}

/// Greedy score-ordered selection of `k` pairs whose endpoint separation is
/// at least ε, decaying ε by `gamma` whenever a pass leaves slots open.
/// `endpoints[i]` holds the final points of pair `i` for agents A and B.
pub fn select_topk_pairs(endpoints: &[(Point, Point)], scores: &[f64], k: usize, eps0: f64, gamma: f64) -> Result<Vec<Selected>> {
    if endpoints.len() != scores.len() {
        return Err(Error::dim(format!("{} pairs with {} scores", endpoints.len(), scores.len())));
    }
    if k > scores.len() {
        return Err(Error::contract(format!("cannot select {k} pairs out of {}", scores.len())));
    }
    if !(eps0 > 0.0 && gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config("NMS needs eps0 > 0 and 0 < gamma < 1"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut taken = vec![false; scores.len()];
    let mut out: Vec<Selected> = Vec::with_capacity(k);
    let mut eps = eps0;
    while out.len() < k {
        if eps < NMS_FLOOR {
            for &i in &order {
                if out.len() == k {
                    break;
                }
                if !taken[i] {
                    taken[i] = true;
                    out.push(Selected { index: i, score: scores[i], eps: 0.0 });
                }
            }
            break;
        }
        for &i in &order {
            if out.len() == k {
                break;
            }
            if taken[i] {
                continue;
            }
            if out.iter().all(|s| pair_distance(endpoints[i], endpoints[s.index]) >= eps) {
                taken[i] = true;
                out.push(Selected { index: i, score: scores[i], eps });
            }
        }
        eps *= gamma;
    }
    Ok(out)
}
