//! Comparison arms: supervised cross-entropy and group-relative policy
//! gradient with three click rewards.
//!
//! The distance and Gaussian rewards follow one-line descriptions of the
//! published reward shapes; they are approximations, not exact ports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Categorical, Logits};
use crate::screens::{point_in_bbox, BBox, NORM_MAX};
use crate::tokens::{TokenTrajectory, SEQ_LEN, VOCAB_SIZE};

/// Mean token cross-entropy against the ground-truth trajectory, and the
/// logit gradient `(p − onehot) / |y|`.
pub fn sft_loss(
    student: &[Categorical; SEQ_LEN],
    gt: &TokenTrajectory,
) -> Result<(f64, [Logits; SEQ_LEN])> {
    let norm = SEQ_LEN as f64;
    let mut loss = 0.0;
    let mut grads = [[0.0; VOCAB_SIZE]; SEQ_LEN];
    for t in 0..SEQ_LEN {
        let target = gt.ids[t] as usize;
        loss -= student[t].probs[target].ln() / norm;
        for (i, g) in grads[t].iter_mut().enumerate() {
            let onehot = if i == target { 1.0 } else { 0.0 };
            *g = (student[t].probs[i] - onehot) / norm;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("sft loss"));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Binary,
    Distance,
    Gaussian,
}

impl RewardKind {
    pub fn reward(&self, traj: &TokenTrajectory, bbox: &BBox) -> f64 {
        match self {
            RewardKind::Binary => reward_binary(traj, bbox),
            RewardKind::Distance => reward_distance(traj, bbox),
            RewardKind::Gaussian => reward_gaussian(traj, bbox),
        }
    }
}

fn center(b: &BBox) -> (f64, f64) {
    ((b.x0 + b.x1) as f64 / 2.0, (b.y0 + b.y1) as f64 / 2.0)
}

/// 1 when the decoded click falls inside the box, else 0. Malformed is a miss.
pub fn reward_binary(traj: &TokenTrajectory, bbox: &BBox) -> f64 {
    match traj.decode() {
        Ok(p) if point_in_bbox(p, bbox) => 1.0,
        _ => 0.0,
    }
}

/// Diagonal of the normalized coordinate space.
pub fn normalized_diagonal() -> f64 {
    (NORM_MAX as f64).hypot(NORM_MAX as f64)
}

/// `max(0, 1 − ‖p − c‖ / D)` with `D` the diagonal of the 0..999 space.
pub fn reward_distance(traj: &TokenTrajectory, bbox: &BBox) -> f64 {
    let Ok(p) = traj.decode() else { return 0.0 };
    let (cx, cy) = center(bbox);
    let dist = (p.x as f64 - cx).hypot(p.y as f64 - cy);
    (1.0 - dist / normalized_diagonal()).max(0.0)
}

/// Axis-aligned Gaussian centred on the box with σ equal to the half-extent
/// per axis, floored at 1.
pub fn reward_gaussian(traj: &TokenTrajectory, bbox: &BBox) -> f64 {
    let Ok(p) = traj.decode() else { return 0.0 };
    let (cx, cy) = center(bbox);
    let sx = ((bbox.x1 - bbox.x0) as f64 / 2.0).max(1.0);
    let sy = ((bbox.y1 - bbox.y0) as f64 / 2.0).max(1.0);
    let dx = p.x as f64 - cx;
    let dy = p.y as f64 - cy;
    (-(dx * dx / (2.0 * sx * sx) + dy * dy / (2.0 * sy * sy))).exp()
}

/// `(r − mean) / std` with population std; all zeros when std < 1e-8.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < 1e-8 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// G rollouts for one task with their rewards and advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub trajectories: Vec<TokenTrajectory>,
    pub student: Vec<[Categorical; SEQ_LEN]>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        trajectories: Vec<TokenTrajectory>,
        student: Vec<[Categorical; SEQ_LEN]>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            trajectories,
            student,
            rewards,
            advantages,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// On-policy group policy gradient:
/// `L = −(1/G) Σ_i A_i · (1/|y|) Σ_t ln π(y_{i,t})`.
/// Returns one logit-gradient block per rollout.
pub fn grpo_loss(group: &RolloutGroup) -> Result<(f64, Vec<[Logits; SEQ_LEN]>)> {
    let g = group.len() as f64;
    let norm = SEQ_LEN as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(group.len());
    for ((traj, dists), &adv) in group
        .trajectories
        .iter()
        .zip(&group.student)
        .zip(&group.advantages)
    {
        let mut block = [[0.0; VOCAB_SIZE]; SEQ_LEN];
        if adv != 0.0 {
            let scale = adv / (g * norm);
            for t in 0..SEQ_LEN {
                let y = traj.ids[t] as usize;
                loss -= scale * dists[t].probs[y].ln();
                for (i, gi) in block[t].iter_mut().enumerate() {
                    let onehot = if i == y { 1.0 } else { 0.0 };
                    *gi = -scale * (onehot - dists[t].probs[i]);
                }
            }
        }
        grads.push(block);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("grpo loss"));
    }
    Ok((loss, grads))
}
