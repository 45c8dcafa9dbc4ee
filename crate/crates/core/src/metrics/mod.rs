//! Pair-wise multi-modal metrics: minADE, minFDE, miss rate, overlap rate
//! and mean average precision.

pub mod iou;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::geometry::dist;
use crate::scene::{AgentId, PairPrediction, Point, Scenario};
use iou::{iou, OrientedBox};

/// Ground truth of one predicted agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTruth {
    pub future: Vec<Point>,
    pub headings: Vec<f64>,
    /// Position at the last history step.
    pub current: Point,
    pub length: f64,
    pub width: f64,
    /// Speed at the last history step (m/s).
    pub speed: f64,
}

/// Ground-truth future of an agent outside the predicted pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OtherAgent {
    pub positions: Vec<Point>,
    pub headings: Vec<f64>,
    pub valid: Vec<bool>,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub pairs: Vec<PairPrediction>,
    pub truth_a: AgentTruth,
    pub truth_b: AgentTruth,
    pub others: Vec<OtherAgent>,
}

fn truth(scenario: &Scenario, id: AgentId) -> Result<AgentTruth> {
    let t = scenario.track(id)?;
    let h = scenario.history_len;
    if t.valid[h..].iter().any(|v| !v) {
        return Err(Error::Validation(format!("agent {id} of {} has gaps in its future", scenario.id)));
    }
    let c = scenario.current_step();
    Ok(AgentTruth {
        future: t.positions[h..].to_vec(),
        headings: t.headings[h..].to_vec(),
        current: t.positions[c],
        length: t.length,
        width: t.width,
        speed: t.speed_at(c),
    })
}

impl EvalRecord {
    pub fn from_scenario(scenario: &Scenario, pair: (AgentId, AgentId), pairs: Vec<PairPrediction>) -> Result<Self> {
        let h = scenario.history_len;
        let others = scenario
            .tracks
            .iter()
            .filter(|t| t.agent_id != pair.0 && t.agent_id != pair.1)
            .map(|t| OtherAgent {
                positions: t.positions[h..].to_vec(),
                headings: t.headings[h..].to_vec(),
                valid: t.valid[h..].to_vec(),
                length: t.length,
                width: t.width,
            })
            .collect();
        Ok(Self { pairs, truth_a: truth(scenario, pair.0)?, truth_b: truth(scenario, pair.1)?, others })
    }

    /// Index of the highest-scored pair (lowest index on ties).
    pub fn best_mode(&self) -> Option<usize> {
        (0..self.pairs.len()).min_by(|&a, &b| self.pairs[b].score.total_cmp(&self.pairs[a].score).then(a.cmp(&b)))
    }
}

fn ade(pred: &[Point], gt: &[Point]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum::<f64>() / gt.len() as f64
}

fn fde(pred: &[Point], gt: &[Point]) -> f64 {
    dist(*pred.last().unwrap(), *gt.last().unwrap())
}

fn check_lengths(r: &EvalRecord) -> Result<()> {
    let (ta, tb) = (r.truth_a.future.len(), r.truth_b.future.len());
    if r.pairs.is_empty() || ta == 0 || tb == 0 {
        return Err(Error::Validation("record without modes or ground truth".into()));
    }
    if r.pairs.iter().any(|p| p.traj_a.len() != ta || p.traj_b.len() != tb) {
        return Err(Error::Validation("predicted and ground-truth horizons differ".into()));
    }
    Ok(())
}

/// Minimum over modes of the pair-averaged ADE.
pub fn min_ade(r: &EvalRecord) -> Result<f64> {
    check_lengths(r)?;
    Ok(r.pairs
        .iter()
        .map(|p| 0.5 * (ade(&p.traj_a, &r.truth_a.future) + ade(&p.traj_b, &r.truth_b.future)))
        .fold(f64::INFINITY, f64::min))
}

/// Minimum over modes of the pair-averaged final displacement.
pub fn min_fde(r: &EvalRecord) -> Result<f64> {
    check_lengths(r)?;
    Ok(r.pairs
        .iter()
        .map(|p| 0.5 * (fde(&p.traj_a, &r.truth_a.future) + fde(&p.traj_b, &r.truth_b.future)))
        .fold(f64::INFINITY, f64::min))
}

/// Speed scaling of the miss threshold.
pub fn speed_scale(v: f64) -> f64 {
    if v <= 1.4 {
        0.5
    } else if v >= 11.0 {
        1.0
    } else {
        0.5 + 0.5 * (v - 1.4) / (11.0 - 1.4)
    }
}

pub const MISS_BASE: f64 = 2.0;

pub fn miss_threshold(v: f64, base: f64) -> f64 {
    base * speed_scale(v)
}

/// Whether mode `k` puts both agents' endpoints within their thresholds.
pub fn is_hit(r: &EvalRecord, k: usize, base: f64) -> bool {
    let p = &r.pairs[k];
    fde(&p.traj_a, &r.truth_a.future) <= miss_threshold(r.truth_a.speed, base)
        && fde(&p.traj_b, &r.truth_b.future) <= miss_threshold(r.truth_b.speed, base)
}

pub fn miss_rate_with(records: &[EvalRecord], base: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("miss rate of an empty batch".into()));
    }
    let mut misses = 0;
    for r in records {
        check_lengths(r)?;
        if !(0..r.pairs.len()).any(|k| is_hit(r, k, base)) {
            misses += 1;
        }
    }
    Ok(misses as f64 / records.len() as f64)
}

pub fn miss_rate(records: &[EvalRecord]) -> Result<f64> {
    miss_rate_with(records, MISS_BASE)
}

/// Standstill displacement below which the ground-truth heading is used.
const STANDSTILL: f64 = 1e-3;

/// Headings of a predicted trajectory from consecutive waypoints.
pub fn waypoint_headings(traj: &[Point], start: Point, gt_headings: &[f64]) -> Vec<f64> {
    (0..traj.len())
        .map(|t| {
            let prev = if t == 0 { start } else { traj[t - 1] };
            let d = [traj[t][0] - prev[0], traj[t][1] - prev[1]];
            if d[0].hypot(d[1]) < STANDSTILL { gt_headings[t] } else { d[1].atan2(d[0]) }
        })
        .collect()
}

fn check_shape(length: f64, width: f64) -> Result<()> {
    if length > 0.0 && width > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("degenerate footprint {length} x {width}")))
    }
}

/// Whether the best mode overlaps any other agent at any future step.
pub fn has_overlap(r: &EvalRecord, threshold: f64) -> Result<bool> {
    check_lengths(r)?;
    check_shape(r.truth_a.length, r.truth_a.width)?;
    check_shape(r.truth_b.length, r.truth_b.width)?;
    for o in &r.others {
        check_shape(o.length, o.width)?;
    }
    let best = &r.pairs[r.best_mode().expect("non-empty")];
    for (traj, truth) in [(&best.traj_a, &r.truth_a), (&best.traj_b, &r.truth_b)] {
        let heads = waypoint_headings(traj, truth.current, &truth.headings);
        for (t, (&p, &h)) in traj.iter().zip(&heads).enumerate() {
            let me = OrientedBox::new(p, h, truth.length, truth.width);
            for o in &r.others {
                if t < o.valid.len() && o.valid[t] {
                    let them = OrientedBox::new(o.positions[t], o.headings[t], o.length, o.width);
                    if iou(&me, &them) > threshold {
                        return Ok(true);
                    }
                }
            }
        }
    }
    Ok(false)
}

pub fn overlap_rate_with(records: &[EvalRecord], threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("overlap rate of an empty batch".into()));
    }
    let mut n = 0;
    for r in records {
        if has_overlap(r, threshold)? {
            n += 1;
        }
    }
    Ok(n as f64 / records.len() as f64)
}

pub fn overlap_rate(records: &[EvalRecord]) -> Result<f64> {
    overlap_rate_with(records, 0.0)
}

/// 11-point interpolated average precision over the records' top pairs,
/// with a hit under the miss-rate criterion counting as a true positive.
/// Detections sharing a score enter the curve together.
pub fn map_metric(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("mAP of an empty batch".into()));
    }
    let mut dets = Vec::with_capacity(records.len());
    for r in records {
        check_lengths(r)?;
        let k = r.best_mode().expect("non-empty");
        dets.push((r.pairs[k].score, is_hit(r, k, MISS_BASE)));
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = records.len() as f64;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < dets.len() {
        let s = dets[i].0;
        while i < dets.len() && dets[i].0 == s {
            tp += dets[i].1 as usize;
            seen += 1;
            i += 1;
        }
        curve.push((tp as f64 / total, tp as f64 / seen as f64));
    }
    let ap = (0..=10)
        .map(|k| {
            let r = k as f64 / 10.0;
            curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|&(_, p)| p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0;
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "minADE")]
    pub min_ade: f64,
    #[serde(rename = "minFDE")]
    pub min_fde: f64,
    #[serde(rename = "MissRate")]
    pub miss_rate: f64,
    #[serde(rename = "OverlapRate")]
    pub overlap_rate: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// All metrics over a batch; displacement errors are batch means.
pub fn evaluate(records: &[EvalRecord], overlap_threshold: f64) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let n = records.len() as f64;
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    for r in records {
        ade_sum += min_ade(r)?;
        fde_sum += min_fde(r)?;
    }
    Ok(MetricsReport {
        min_ade: ade_sum / n,
        min_fde: fde_sum / n,
        miss_rate: miss_rate(records)?,
        overlap_rate: overlap_rate_with(records, overlap_threshold)?,
        map: map_metric(records)?,
    })
}
