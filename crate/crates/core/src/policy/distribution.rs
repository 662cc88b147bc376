use crate::tokens::VOCAB_SIZE;

/// Floor applied to teacher probabilities before any log.
pub const PROB_FLOOR: f64 = 1e-8;

/// Probabilities over the token vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Categorical {
    pub probs: [f64; VOCAB_SIZE],
}

impl Categorical {
    pub fn from_logits(logits: &[f64; VOCAB_SIZE]) -> Self {
        Self::from_logits_with_temperature(logits, 1.0)
    }

    pub fn from_logits_with_temperature(logits: &[f64; VOCAB_SIZE], temperature: f64) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = [0.0; VOCAB_SIZE];
        let mut sum = 0.0;
        for (p, &z) in probs.iter_mut().zip(logits) {
            *p = ((z - max) / temperature).exp();
            sum += *p;
        }
        for p in &mut probs {
            *p /= sum;
        }
        Self { probs }
    }

    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / VOCAB_SIZE as f64; VOCAB_SIZE],
        }
    }

    pub fn one_hot(id: u8) -> Self {
        let mut probs = [0.0; VOCAB_SIZE];
        probs[id as usize] = 1.0;
        Self { probs }
    }

    /// Clamp every entry to at least `eps`, then renormalize.
    pub fn floored(&self, eps: f64) -> Self {
        let mut probs = self.probs;
        let mut sum = 0.0;
        for p in &mut probs {
            *p = p.max(eps);
            sum += *p;
        }
        for p in &mut probs {
            *p /= sum;
        }
        Self { probs }
    }

    /// Entropy in nats; `0 ln 0` counts as zero.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn argmax(&self) -> u8 {
        argmax(&self.probs)
    }

    pub fn top1(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    pub fn prob(&self, id: u8) -> f64 {
        self.probs[id as usize]
    }

    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|&p| p >= 0.0 && p.is_finite())
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_normalizes() {
        let mut z = [0.0; VOCAB_SIZE];
        for (i, v) in z.iter_mut().enumerate() {
            *v = (i as f64 * 37.0).sin() * 50.0;
        }
        let d = Categorical::from_logits(&z);
        assert!(d.is_valid());
        let f = d.floored(PROB_FLOOR);
        assert!(f.is_valid());
        assert!(f.probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn entropy_extremes() {
        assert_eq!(Categorical::one_hot(3).entropy(), 0.0);
        let u = Categorical::uniform();
        assert!((u.entropy() - 14f64.ln()).abs() < 1e-12);
        assert!((u.top1() - 1.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_takes_first_max() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
    }
}
