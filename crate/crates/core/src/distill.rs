//! Entropy-guided weighted reverse-KL distillation.
//!
//! Each token's divergence `KL(P_S ‖ P_T)` is scaled by
//! `w = w_pos · w_ent`, where `w_pos` grows with digit significance and
//! `w_ent = exp(−H(P_T) / τ)` fades out tokens the teacher is unsure about.
//! Uniform weights recover plain on-policy self-distillation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Categorical, Logits};
use crate::tokens::{PositionalSchedule, DIGIT_POS, SEQ_LEN, VOCAB_SIZE};

/// `Σ p_i ln(p_i / q_i)` in nats, with `0 ln 0 = 0`. `q` must be strictly
/// positive.
pub fn reverse_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if let Some(index) = q.iter().position(|&v| v <= 0.0 || v.is_nan()) {
        return Err(Error::UnflooredDistribution { index });
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum())
}

/// `exp(−H / τ)`.
pub fn entropy_gate(entropy: f64, tau: f64) -> f64 {
    (-entropy / tau).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenWeight {
    pub w_pos: f64,
    pub w_ent: f64,
    pub w: f64,
}

pub fn token_weight(k: u8, entropy: f64, alpha: f64, tau: f64) -> TokenWeight {
    Weighting {
        schedule: PositionalSchedule::Linear { alpha },
        tau,
        ..Weighting::default()
    }
    .weight(k, entropy)
}

/// Which weighting factors are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weighting {
    pub schedule: PositionalSchedule,
    pub tau: f64,
    pub positional: bool,
    pub entropy_gate: bool,
}

impl Default for Weighting {
    fn default() -> Self {
        Self {
            schedule: PositionalSchedule::default(),
            tau: 1.0,
            positional: true,
            entropy_gate: true,
        }
    }
}

impl Weighting {
    /// Every token weighted 1.
    pub fn uniform() -> Self {
        Self {
            positional: false,
            entropy_gate: false,
            ..Self::default()
        }
    }

    pub fn weight(&self, k: u8, entropy: f64) -> TokenWeight {
        let w_pos = if self.positional {
            self.schedule.weight(k)
        } else {
            1.0
        };
        let w_ent = if self.entropy_gate {
            entropy_gate(entropy, self.tau)
        } else {
            1.0
        };
        TokenWeight {
            w_pos,
            w_ent,
            w: w_pos * w_ent,
        }
    }
}

/// Everything the loss needs about one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSupervision {
    pub step: usize,
    pub student: Categorical,
    pub teacher: Categorical,
    pub teacher_entropy: f64,
    pub digit_pos: u8,
    pub w_pos: f64,
    pub w_ent: f64,
    pub w: f64,
}

impl StepSupervision {
    /// `teacher` is expected to be floored already.
    pub fn new(
        step: usize,
        student: Categorical,
        teacher: Categorical,
        weighting: &Weighting,
    ) -> Self {
        let teacher_entropy = teacher.entropy();
        let digit_pos = DIGIT_POS[step];
        let tw = weighting.weight(digit_pos, teacher_entropy);
        Self {
            step,
            student,
            teacher,
            teacher_entropy,
            digit_pos,
            w_pos: tw.w_pos,
            w_ent: tw.w_ent,
            w: tw.w,
        }
    }
}

/// Builds supervision for a whole trajectory.
pub fn supervise(
    student: &[Categorical; SEQ_LEN],
    teacher: &[Categorical; SEQ_LEN],
    weighting: &Weighting,
) -> [StepSupervision; SEQ_LEN] {
    std::array::from_fn(|t| StepSupervision::new(t, student[t], teacher[t], weighting))
}

fn weighted_reverse_kl(
    steps: &[StepSupervision; SEQ_LEN],
    weight_of: impl Fn(&StepSupervision) -> f64,
) -> Result<(f64, [Logits; SEQ_LEN])> {
    let norm = SEQ_LEN as f64;
    let mut loss = 0.0;
    let mut grads = [[0.0; VOCAB_SIZE]; SEQ_LEN];
    for (s, g) in steps.iter().zip(grads.iter_mut()) {
        let p = &s.student.probs;
        let q = &s.teacher.probs;
        let kl = reverse_kl(p, q)?;
        let w = weight_of(s);
        loss += w * kl / norm;
        let scale = w / norm;
        for i in 0..VOCAB_SIZE {
            if p[i] > 0.0 {
                g[i] = scale * p[i] * ((p[i].ln() - q[i].ln()) - kl);
            }
        }
    }
    if !loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distillation loss"));
    }
    Ok((loss, grads))
}

/// `(1/|y|) Σ_t w(t) · KL(P_S ‖ P_T)` and its gradient w.r.t. student logits:
/// `∂L/∂z_i = (w/|y|) · p_i · (ln(p_i/q_i) − KL_t)`.
pub fn guisd_loss(steps: &[StepSupervision; SEQ_LEN]) -> Result<(f64, [Logits; SEQ_LEN])> {
    weighted_reverse_kl(steps, |s| s.w)
}

/// Uniform-weight reverse KL.
pub fn naive_opsd_loss(steps: &[StepSupervision; SEQ_LEN]) -> Result<(f64, [Logits; SEQ_LEN])> {
    weighted_reverse_kl(steps, |_| 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PROB_FLOOR;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(rng: &mut ChaCha8Rng, spread: f64) -> Categorical {
        let z: Logits = std::array::from_fn(|_| rng.gen_range(-spread..spread));
        Categorical::from_logits(&z)
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(reverse_kl(&p, &p).unwrap(), 0.0);
        // Direct summation: 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.5 ln(25/9).
        let kl = reverse_kl(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert_abs_diff_eq!(kl, 0.5 * (25.0f64 / 9.0).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(kl, 0.51083, epsilon = 1e-5);
        assert!(matches!(
            reverse_kl(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::UnflooredDistribution { index: 1 })
        ));
        // Zero mass in p is skipped.
        assert_abs_diff_eq!(
            reverse_kl(&[0.0, 1.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn gate_examples() {
        assert_eq!(entropy_gate(0.0, 1.0), 1.0);
        assert_abs_diff_eq!(entropy_gate(0.7, 0.7), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(entropy_gate(0.7, 0.7), 0.36788, epsilon = 1e-5);
        assert_abs_diff_eq!(entropy_gate(14f64.ln(), 1.0), 1.0 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn token_weight_examples() {
        let tw = token_weight(3, 0.0, 1.0, 1.0);
        assert_eq!((tw.w_pos, tw.w_ent, tw.w), (3.0, 1.0, 3.0));
        assert_eq!(token_weight(0, 0.0, 1.0, 1.0).w, 1.0);
        let tw = token_weight(1, 14f64.ln(), 1.0, 1.0);
        assert_abs_diff_eq!(tw.w, 1.0 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn gate_is_strictly_decreasing() {
        for tau in [0.1, 1.0, 3.0] {
            let mut prev = entropy_gate(0.0, tau);
            assert_eq!(prev, 1.0);
            for i in 1..200 {
                let w = entropy_gate(i as f64 * 0.0133, tau);
                assert!(w < prev && w > 0.0);
                prev = w;
            }
        }
    }

    #[test]
    fn sharpened_teacher_drives_gate_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Logits = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let mut last = 0.0;
        for temp in [1.0, 0.3, 0.1, 0.03, 0.01, 0.001] {
            let q = Categorical::from_logits_with_temperature(&z, temp);
            let g = entropy_gate(q.entropy(), 1.0);
            assert!(g >= last);
            last = g;
        }
        assert!(last > 0.999);
    }

    #[test]
    fn matching_distributions_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dists: [Categorical; SEQ_LEN] = std::array::from_fn(|_| random_dist(&mut rng, 3.0));
        let steps = supervise(&dists, &dists, &Weighting::default());
        let (loss, grads) = guisd_loss(&steps).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_weights_reduce_to_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s: [Categorical; SEQ_LEN] = std::array::from_fn(|_| random_dist(&mut rng, 4.0));
            let t: [Categorical; SEQ_LEN] =
                std::array::from_fn(|_| random_dist(&mut rng, 4.0).floored(PROB_FLOOR));
            let steps = supervise(&s, &t, &Weighting::uniform());
            assert!(steps.iter().all(|x| x.w == 1.0));
            let a = guisd_loss(&steps).unwrap();
            let b = naive_opsd_loss(&steps).unwrap();
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn weights_factorize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: [Categorical; SEQ_LEN] = std::array::from_fn(|_| random_dist(&mut rng, 2.0));
        let t: [Categorical; SEQ_LEN] =
            std::array::from_fn(|_| random_dist(&mut rng, 5.0).floored(PROB_FLOOR));
        for step in supervise(&s, &t, &Weighting::default()) {
            assert_eq!(step.w, step.w_pos * step.w_ent);
            assert!(step.w_ent > 0.0 && step.w_ent <= 1.0);
            assert!(step.w > 0.0);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z: [Logits; SEQ_LEN] =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));
            let t: [Categorical; SEQ_LEN] =
                std::array::from_fn(|_| random_dist(&mut rng, 4.0).floored(PROB_FLOOR));
            let weighting = Weighting::default();
            let loss_at = |z: &[Logits; SEQ_LEN]| {
                let s = z.map(|zt| Categorical::from_logits(&zt));
                guisd_loss(&supervise(&s, &t, &weighting)).unwrap().0
            };
            let s = z.map(|zt| Categorical::from_logits(&zt));
            let (_, g) = guisd_loss(&supervise(&s, &t, &weighting)).unwrap();
            let (step, i) = (rng.gen_range(0..SEQ_LEN), rng.gen_range(0..VOCAB_SIZE));
            let eps = 1e-5;
            let mut up = z;
            up[step][i] += eps;
            let mut down = z;
            down[step][i] -= eps;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * eps);
            let rel = (fd - g[step][i]).abs() / fd.abs().max(g[step][i].abs()).max(1e-6);
            assert!(rel < 1e-4, "rel {rel}");
        }
    }

    #[test]
    fn one_hot_teacher_against_uniform_student() {
        // KL(u ‖ q) = CE(u, q) − H(u), evaluated directly.
        let gt = 7u8;
        let q = Categorical::one_hot(gt).floored(PROB_FLOOR);
        let u = Categorical::uniform();
        let s = [u; SEQ_LEN];
        let t = [q; SEQ_LEN];
        let (loss, _) = naive_opsd_loss(&supervise(&s, &t, &Weighting::uniform())).unwrap();
        let ce: f64 = -(0..VOCAB_SIZE).map(|i| q.probs[i].ln() / 14.0).sum::<f64>();
        let oracle = ce - 14f64.ln();
        assert!((loss - oracle).abs() / oracle < 0.01);
        assert!(loss > 14.0);
    }

    #[test]
    fn kl_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let p = random_dist(&mut rng, 6.0);
            let q = random_dist(&mut rng, 6.0).floored(PROB_FLOOR);
            assert!(reverse_kl(&p.probs, &q.probs).unwrap() >= 0.0);
        }
    }
}
