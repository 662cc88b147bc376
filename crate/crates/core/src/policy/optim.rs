use serde::{Deserialize, Serialize};

use super::params::{Gradients, PolicyParams};
use crate::error::{Error, Result};

/// Linear warmup to `peak`, then cosine decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_ratio: f64,
}

impl LrSchedule {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).ceil() as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if step < warm {
            return self.peak * step as f64 / warm as f64;
        }
        let span = self.total_steps.saturating_sub(warm);
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - warm) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update at the schedule's rate for `step`.
pub fn optimizer_step(
    params: &mut PolicyParams,
    grads: &Gradients,
    state: &mut AdamState,
    schedule: &LrSchedule,
    step: usize,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    if state.m.len() != params.len() || grads.as_slice().len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            actual: state.m.len().min(grads.as_slice().len()),
        });
    }
    state.t += 1;
    let lr = schedule.lr(step);
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    let g = grads.as_slice();
    for (i, w) in params.as_mut_slice().iter_mut().enumerate() {
        let m = BETA1 * state.m[i] + (1.0 - BETA1) * g[i];
        let v = BETA2 * state.v[i] + (1.0 - BETA2) * g[i] * g[i];
        state.m[i] = m;
        state.v[i] = v;
        let mhat = m / bc1;
        let vhat = v / bc2;
        *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::params::Architecture;

    #[test]
    fn schedule_warmup_and_decay() {
        let s = LrSchedule {
            peak: 3e-4,
            total_steps: 400,
            warmup_ratio: 0.05,
        };
        assert_eq!(s.warmup_steps(), 20);
        assert_eq!(s.lr(0), 0.0);
        let increment = s.peak / s.warmup_steps() as f64;
        assert!((s.lr(20) - s.peak).abs() <= increment);
        assert!((s.lr(19) - s.peak).abs() <= increment);
        assert!(s.lr(210) < s.peak && s.lr(210) > 0.0);
        assert!(s.lr(400).abs() < 1e-20);
        for k in 20..399 {
            assert!(s.lr(k + 1) <= s.lr(k));
        }
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = PolicyParams::init(Architecture::default(), 0);
        let before = p.clone();
        let g = Gradients::zeros_for(&p);
        let mut st = AdamState::new(p.len());
        let s = LrSchedule {
            peak: 1e-2,
            total_steps: 10,
            warmup_ratio: 0.05,
        };
        for step in 0..5 {
            optimizer_step(&mut p, &g, &mut st, &s, step).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut p = PolicyParams::init(Architecture::default(), 1);
            let mut st = AdamState::new(p.len());
            let s = LrSchedule {
                peak: 1e-3,
                total_steps: 6,
                warmup_ratio: 0.05,
            };
            for step in 0..6 {
                let g = Gradients::from_vec(
                    p.as_slice()
                        .iter()
                        .map(|w| (w * 3.0 + step as f64).sin())
                        .collect(),
                );
                optimizer_step(&mut p, &g, &mut st, &s, step).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = PolicyParams::zeros(Architecture::default());
        let mut g = Gradients::zeros_for(&p);
        g.as_mut_slice()[0] = 2.0;
        g.as_mut_slice()[1] = -0.5;
        let mut st = AdamState::new(p.len());
        let s = LrSchedule {
            peak: 0.1,
            total_steps: 2,
            warmup_ratio: 0.0,
        };
        optimizer_step(&mut p, &g, &mut st, &s, 0).unwrap();
        // First Adam step moves each coordinate by ≈ lr·sign(g).
        assert!((p.as_slice()[0] + 0.1).abs() < 1e-6);
        assert!((p.as_slice()[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = PolicyParams::zeros(Architecture::default());
        let mut g = Gradients::zeros_for(&p);
        g.as_mut_slice()[7] = f64::INFINITY;
        let mut st = AdamState::new(p.len());
        let s = LrSchedule {
            peak: 0.1,
            total_steps: 2,
            warmup_ratio: 0.0,
        };
        assert!(optimizer_step(&mut p, &g, &mut st, &s, 0).is_err());
    }
}
