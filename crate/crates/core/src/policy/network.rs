//! Forward and reverse passes of the autoregressive coordinate policy.
//!
//! Conditioning is a pooled raster, the instruction attributes, the hint flag,
//! and (for the text-coordinate teacher) the answer tokens. These are summed
//! into a shared first-layer pre-activation once per trajectory; each step then
//! adds its step embedding and the embeddings of the tokens emitted so far.
//! Summing embedding rows is the same as a linear layer over the concatenated
//! one-hot inputs.
//!
//! ```text
//! h1_t   = tanh(W_obs·obs + b1 + E_instr + E_hint + E_answer + E_step[t] + Σ_{j<t} E_prefix[j, y_j])
//! h2_t   = tanh(W2·h1_t + b2)
//! z_t    = W_out[t]·h2_t + b_out[t]
//! ```

use rand::Rng;

use super::distribution::{argmax, Categorical};
use super::params::{Gradients, Layout, PolicyParams};
use crate::error::{Error, Result};
use crate::privilege::PrivilegedContext;
use crate::screens::{GroundingTask, Raster};
use crate::tokens::{TokenTrajectory, SEQ_LEN, VOCAB_SIZE};

pub type Logits = [f64; VOCAB_SIZE];

/// Everything the policy conditions on besides the token prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub instruction: Vec<usize>,
    pub hint: bool,
    pub answer: Option<TokenTrajectory>,
}

impl Observation {
    pub fn from_raster(raster: &Raster, instruction: &[usize], pool_grid: usize) -> Self {
        Self {
            features: raster.pooled(pool_grid),
            instruction: instruction.to_vec(),
            hint: false,
            answer: None,
        }
    }

    /// The student's view: the plain task raster.
    pub fn student(task: &GroundingTask, pool_grid: usize) -> Self {
        Self::from_raster(&task.raster, &task.instruction, pool_grid)
    }

    /// The teacher's view under a privileged context.
    pub fn teacher(ctx: &PrivilegedContext, instruction: &[usize], pool_grid: usize) -> Self {
        Self {
            features: ctx.raster.pooled(pool_grid),
            instruction: instruction.to_vec(),
            hint: ctx.hint_flag,
            answer: ctx.answer_tokens,
        }
    }
}

/// Activations of one ten-step pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct TrajectoryPass {
    pub trajectory: TokenTrajectory,
    pub logits: [Logits; SEQ_LEN],
    h1: Vec<f64>,
    h2: Vec<f64>,
}

impl TrajectoryPass {
    pub fn distributions(&self) -> [Categorical; SEQ_LEN] {
        std::array::from_fn(|t| Categorical::from_logits(&self.logits[t]))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn base_preactivation(p: &PolicyParams, obs: &Observation) -> Vec<f64> {
    let l = p.layout();
    let d = p.as_slice();
    let (h, f) = (l.hidden, l.features);
    assert_eq!(obs.features.len(), f, "observation feature width");
    let mut base = d[l.b1.clone()].to_vec();
    for (i, b) in base.iter_mut().enumerate() {
        let row = &d[l.w_obs.start + i * f..][..f];
        *b += dot(row, &obs.features);
    }
    for (attr, &value) in obs.instruction.iter().enumerate() {
        add_into(&mut base, &d[l.instr_row(attr, value)..][..h]);
    }
    add_into(&mut base, &d[l.hint_row(obs.hint)..][..h]);
    if let Some(ans) = &obs.answer {
        for (slot, &tok) in ans.ids.iter().enumerate() {
            add_into(&mut base, &d[l.answer_row(slot, tok)..][..h]);
        }
    }
    base
}

/// One step from the accumulated pre-activation. Writes `h1`, `h2`.
fn step_forward(
    d: &[f64],
    l: &Layout,
    pre1: &[f64],
    t: usize,
    h1: &mut [f64],
    h2: &mut [f64],
) -> Logits {
    let h = l.hidden;
    let step = &d[l.step_row(t)..][..h];
    for i in 0..h {
        h1[i] = (pre1[i] + step[i]).tanh();
    }
    let w2 = &d[l.w2.clone()];
    let b2 = &d[l.b2.clone()];
    for i in 0..h {
        h2[i] = (b2[i] + dot(&w2[i * h..][..h], h1)).tanh();
    }
    let wo = &d[l.out_matrix(t)..][..VOCAB_SIZE * h];
    let bo = &d[l.out_bias(t)..][..VOCAB_SIZE];
    std::array::from_fn(|v| bo[v] + dot(&wo[v * h..][..h], h2))
}

/// Runs up to `steps` steps, choosing each token with `choose(t, logits)`.
fn rollout(
    p: &PolicyParams,
    obs: &Observation,
    mut choose: impl FnMut(usize, &Logits) -> u8,
) -> TrajectoryPass {
    let l = p.layout();
    let d = p.as_slice();
    let h = l.hidden;
    let mut pre1 = base_preactivation(p, obs);
    let mut h1 = vec![0.0; SEQ_LEN * h];
    let mut h2 = vec![0.0; SEQ_LEN * h];
    let mut logits = [[0.0; VOCAB_SIZE]; SEQ_LEN];
    let mut ids = [0u8; SEQ_LEN];
    for t in 0..SEQ_LEN {
        logits[t] = step_forward(
            d,
            l,
            &pre1,
            t,
            &mut h1[t * h..(t + 1) * h],
            &mut h2[t * h..(t + 1) * h],
        );
        let tok = choose(t, &logits[t]);
        ids[t] = tok;
        if t + 1 < SEQ_LEN {
            add_into(&mut pre1, &d[l.prefix_row(t, tok)..][..h]);
        }
    }
    TrajectoryPass {
        trajectory: TokenTrajectory::new(ids),
        logits,
        h1,
        h2,
    }
}

/// Logits for the next token after `prefix`.
pub fn forward_step(p: &PolicyParams, obs: &Observation, prefix: &[u8]) -> Logits {
    assert!(
        prefix.len() < SEQ_LEN,
        "prefix must be shorter than the sequence"
    );
    let l = p.layout();
    let d = p.as_slice();
    let h = l.hidden;
    let mut pre1 = base_preactivation(p, obs);
    for (slot, &tok) in prefix.iter().enumerate() {
        add_into(&mut pre1, &d[l.prefix_row(slot, tok)..][..h]);
    }
    let mut h1 = vec![0.0; h];
    let mut h2 = vec![0.0; h];
    step_forward(d, l, &pre1, prefix.len(), &mut h1, &mut h2)
}

/// Evaluates the policy along a fixed trajectory.
pub fn teacher_forced(
    p: &PolicyParams,
    obs: &Observation,
    traj: &TokenTrajectory,
) -> TrajectoryPass {
    rollout(p, obs, |t, _| traj.ids[t])
}

/// Draws one trajectory at `temperature` over the full vocabulary.
pub fn sample_trajectory<R: Rng + ?Sized>(
    p: &PolicyParams,
    obs: &Observation,
    temperature: f64,
    rng: &mut R,
) -> TrajectoryPass {
    assert!(temperature > 0.0, "temperature must be positive");
    rollout(p, obs, |_, z| {
        let dist = Categorical::from_logits_with_temperature(z, temperature);
        sample_index(&dist.probs, rng.gen::<f64>())
    })
}

fn sample_index(probs: &[f64; VOCAB_SIZE], u: f64) -> u8 {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i as u8;
            }
        }
    }
    last as u8
}

pub fn greedy_trajectory(p: &PolicyParams, obs: &Observation) -> TrajectoryPass {
    rollout(p, obs, |_, z| argmax(z))
}

/// Accumulates parameter gradients of the scalar loss whose derivative with
/// respect to the step logits is `logit_grads`.
pub fn backward(
    p: &PolicyParams,
    obs: &Observation,
    pass: &TrajectoryPass,
    logit_grads: &[Logits; SEQ_LEN],
    grads: &mut Gradients,
) -> Result<()> {
    if logit_grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("logit gradients"));
    }
    let l = p.layout();
    let d = p.as_slice();
    let h = l.hidden;
    let f = l.features;
    let g_all = grads.as_mut_slice();

    // Σ_{t' > t} ∂L/∂pre1_{t'}, which is also the gradient of prefix slot t.
    let mut running = vec![0.0; h];
    let mut dh2 = vec![0.0; h];
    let mut dpre2 = vec![0.0; h];
    let mut dpre1 = vec![0.0; h];

    for t in (0..SEQ_LEN).rev() {
        if t + 1 < SEQ_LEN && running.iter().any(|&v| v != 0.0) {
            let row = l.prefix_row(t, pass.trajectory.ids[t]);
            add_into(&mut g_all[row..row + h], &running);
        }
        let g = &logit_grads[t];
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let h1 = &pass.h1[t * h..(t + 1) * h];
        let h2 = &pass.h2[t * h..(t + 1) * h];

        let bo = l.out_bias(t);
        add_into(&mut g_all[bo..bo + VOCAB_SIZE], g);
        let wo = l.out_matrix(t);
        dh2.iter_mut().for_each(|v| *v = 0.0);
        for (v, &gv) in g.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let row = wo + v * h;
            for i in 0..h {
                g_all[row + i] += gv * h2[i];
                dh2[i] += gv * d[row + i];
            }
        }
        for i in 0..h {
            dpre2[i] = dh2[i] * (1.0 - h2[i] * h2[i]);
        }
        add_into(&mut g_all[l.b2.clone()], &dpre2);
        let w2 = l.w2.start;
        dpre1.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            let gi = dpre2[i];
            if gi == 0.0 {
                continue;
            }
            let row = w2 + i * h;
            for j in 0..h {
                g_all[row + j] += gi * h1[j];
                dpre1[j] += gi * d[row + j];
            }
        }
        for j in 0..h {
            dpre1[j] *= 1.0 - h1[j] * h1[j];
        }
        let sr = l.step_row(t);
        add_into(&mut g_all[sr..sr + h], &dpre1);
        add_into(&mut running, &dpre1);
    }

    // `running` now holds the gradient of the shared base pre-activation.
    let dbase = running;
    add_into(&mut g_all[l.b1.clone()], &dbase);
    for (i, &gi) in dbase.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let row = l.w_obs.start + i * f;
        for (k, &x) in obs.features.iter().enumerate() {
            g_all[row + k] += gi * x;
        }
    }
    for (attr, &value) in obs.instruction.iter().enumerate() {
        let row = l.instr_row(attr, value);
        add_into(&mut g_all[row..row + h], &dbase);
    }
    let row = l.hint_row(obs.hint);
    add_into(&mut g_all[row..row + h], &dbase);
    if let Some(ans) = &obs.answer {
        for (slot, &tok) in ans.ids.iter().enumerate() {
            let row = l.answer_row(slot, tok);
            add_into(&mut g_all[row..row + h], &dbase);
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradients"));
    }
    Ok(())
}
