//! Central-difference verification of analytic gradients.

use rand::Rng;

use super::params::{Gradients, PolicyParams};

/// A scalar loss over policy parameters with its analytic gradient.
pub trait LossEvaluator {
    fn loss(&self, params: &PolicyParams) -> f64;
    fn loss_and_grad(&self, params: &PolicyParams) -> (f64, Gradients);
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Compares analytic gradients against central differences on `probe_count`
/// random coordinates. Returns the largest relative error seen.
pub fn grad_check<E: LossEvaluator + ?Sized, R: Rng + ?Sized>(
    params: &PolicyParams,
    evaluator: &E,
    probe_count: usize,
    eps: f64,
    rng: &mut R,
) -> f64 {
    let (_, analytic) = evaluator.loss_and_grad(params);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probe_count {
        let i = rng.gen_range(0..params.len());
        let w = params.as_slice()[i];
        probe.as_mut_slice()[i] = w + eps;
        let up = evaluator.loss(&probe);
        probe.as_mut_slice()[i] = w - eps;
        let down = evaluator.loss(&probe);
        probe.as_mut_slice()[i] = w;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.as_slice()[i], numeric));
    }
    worst
}

/// Probes only coordinates with a non-negligible analytic gradient, so every
/// check exercises a live path through the network.
pub fn grad_check_active<E: LossEvaluator + ?Sized, R: Rng + ?Sized>(
    params: &PolicyParams,
    evaluator: &E,
    probe_count: usize,
    eps: f64,
    rng: &mut R,
) -> f64 {
    let (_, analytic) = evaluator.loss_and_grad(params);
    let active: Vec<usize> = analytic
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.abs() > 1e-7)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return 0.0;
    }
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probe_count {
        let i = active[rng.gen_range(0..active.len())];
        let w = params.as_slice()[i];
        probe.as_mut_slice()[i] = w + eps;
        let up = evaluator.loss(&probe);
        probe.as_mut_slice()[i] = w - eps;
        let down = evaluator.loss(&probe);
        probe.as_mut_slice()[i] = w;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.as_slice()[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::params::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Linear {
        coef: Vec<f64>,
    }

    impl LossEvaluator for Linear {
        fn loss(&self, p: &PolicyParams) -> f64 {
            p.as_slice()
                .iter()
                .zip(&self.coef)
                .map(|(w, c)| w * c)
                .sum()
        }
        fn loss_and_grad(&self, p: &PolicyParams) -> (f64, Gradients) {
            (self.loss(p), Gradients::from_vec(self.coef.clone()))
        }
    }

    #[test]
    fn linear_probe_is_exact() {
        let p = PolicyParams::init(
            Architecture {
                hidden: 8,
                ..Architecture::default()
            },
            0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coef = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = grad_check(&p, &Linear { coef }, 200, 1e-5, &mut rng);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Wrong;
        impl LossEvaluator for Wrong {
            fn loss(&self, p: &PolicyParams) -> f64 {
                p.as_slice().iter().map(|w| w * w).sum()
            }
            fn loss_and_grad(&self, p: &PolicyParams) -> (f64, Gradients) {
                (self.loss(p), Gradients::from_vec(p.as_slice().to_vec()))
            }
        }
        let p = PolicyParams::init(
            Architecture {
                hidden: 8,
                ..Architecture::default()
            },
            2,
        );
        let err = grad_check_active(&p, &Wrong, 20, 1e-5, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(err > 0.3);
    }
}
