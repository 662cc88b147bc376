use std::ops::Range;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{SEQ_LEN, VOCAB_SIZE};

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    /// Rasters are average-pooled to `pool_grid × pool_grid` per channel.
    pub pool_grid: usize,
    /// Number of values each instruction attribute can take.
    pub instruction_cardinalities: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 128,
            pool_grid: 8,
            instruction_cardinalities: vec![3, 8],
        }
    }
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        2 * self.pool_grid * self.pool_grid
    }

    pub fn instruction_rows(&self) -> usize {
        self.instruction_cardinalities.iter().sum()
    }
}

/// Offsets of every tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
    pub features: usize,
    pub w_obs: Range<usize>,
    pub b1: Range<usize>,
    pub e_instr: Range<usize>,
    pub e_hint: Range<usize>,
    pub e_step: Range<usize>,
    pub e_prefix: Range<usize>,
    pub e_answer: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    /// Row offset of each instruction attribute inside `e_instr`.
    pub instr_row_base: Vec<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let h = arch.hidden;
        let f = arch.feature_dim();
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let w_obs = take(h * f);
        let b1 = take(h);
        let e_instr = take(arch.instruction_rows() * h);
        let e_hint = take(2 * h);
        let e_step = take(SEQ_LEN * h);
        let e_prefix = take(SEQ_LEN * VOCAB_SIZE * h);
        let e_answer = take(SEQ_LEN * VOCAB_SIZE * h);
        let w2 = take(h * h);
        let b2 = take(h);
        let w_out = take(SEQ_LEN * VOCAB_SIZE * h);
        let b_out = take(SEQ_LEN * VOCAB_SIZE);
        let mut instr_row_base = Vec::with_capacity(arch.instruction_cardinalities.len());
        let mut acc = 0;
        for &c in &arch.instruction_cardinalities {
            instr_row_base.push(acc);
            acc += c;
        }
        Self {
            hidden: h,
            features: f,
            w_obs,
            b1,
            e_instr,
            e_hint,
            e_step,
            e_prefix,
            e_answer,
            w2,
            b2,
            w_out,
            b_out,
            instr_row_base,
            total: cursor,
        }
    }

    /// Tensor names and ranges, in buffer order.
    pub fn tensors(&self) -> [(&'static str, Range<usize>); 11] {
        [
            ("w_obs", self.w_obs.clone()),
            ("b1", self.b1.clone()),
            ("e_instr", self.e_instr.clone()),
            ("e_hint", self.e_hint.clone()),
            ("e_step", self.e_step.clone()),
            ("e_prefix", self.e_prefix.clone()),
            ("e_answer", self.e_answer.clone()),
            ("w2", self.w2.clone()),
            ("b2", self.b2.clone()),
            ("w_out", self.w_out.clone()),
            ("b_out", self.b_out.clone()),
        ]
    }

    #[inline]
    pub fn instr_row(&self, attr: usize, value: usize) -> usize {
        self.e_instr.start + (self.instr_row_base[attr] + value) * self.hidden
    }

    #[inline]
    pub fn hint_row(&self, flag: bool) -> usize {
        self.e_hint.start + flag as usize * self.hidden
    }

    #[inline]
    pub fn step_row(&self, t: usize) -> usize {
        self.e_step.start + t * self.hidden
    }

    #[inline]
    pub fn prefix_row(&self, slot: usize, token: u8) -> usize {
        self.e_prefix.start + (slot * VOCAB_SIZE + token as usize) * self.hidden
    }

    #[inline]
    pub fn answer_row(&self, slot: usize, token: u8) -> usize {
        self.e_answer.start + (slot * VOCAB_SIZE + token as usize) * self.hidden
    }

    /// Start of the `VOCAB_SIZE × hidden` output matrix for step `t`.
    #[inline]
    pub fn out_matrix(&self, t: usize) -> usize {
        self.w_out.start + t * VOCAB_SIZE * self.hidden
    }

    #[inline]
    pub fn out_bias(&self, t: usize) -> usize {
        self.b_out.start + t * VOCAB_SIZE
    }
}

/// All learnable weights of the policy, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    layout: Layout,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layout = Layout::new(&arch);
        let data = vec![0.0; layout.total];
        Self { arch, layout, data }
    }

    /// Random init. Output weights start small so the first distributions are
    /// close to uniform.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = p.layout.clone();
        let fill = |data: &mut [f64], std: f64, rng: &mut ChaCha8Rng| {
            let a = std * 3f64.sqrt();
            let u = Uniform::new_inclusive(-a, a);
            for v in data {
                *v = u.sample(rng);
            }
        };
        let fan_in = (l.features as f64).sqrt();
        fill(&mut p.data[l.w_obs.clone()], 1.0 / fan_in, &mut rng);
        for r in [&l.e_instr, &l.e_hint, &l.e_step, &l.e_prefix, &l.e_answer] {
            fill(&mut p.data[r.clone()], 0.3, &mut rng);
        }
        fill(
            &mut p.data[l.w2.clone()],
            1.0 / (l.hidden as f64).sqrt(),
            &mut rng,
        );
        fill(&mut p.data[l.w_out.clone()], 0.01, &mut rng);
        p
    }

    pub fn from_data(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch);
        if data.len() != layout.total {
            return Err(Error::ShapeMismatch {
                expected: layout.total,
                actual: data.len(),
            });
        }
        Ok(Self { arch, layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.arch != other.arch || self.data.len() != other.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.data.len(),
                actual: other.data.len(),
            });
        }
        Ok(())
    }
}

/// Gradient buffer with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_for(params: &PolicyParams) -> Self {
        Self {
            data: vec![0.0; params.len()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::new(&Architecture::default());
        let mut end = 0;
        for (_, r) in l.tensors() {
            assert_eq!(r.start, end);
            end = r.end;
        }
        assert_eq!(end, l.total);
    }

    #[test]
    fn default_size_is_desk_scale() {
        let p = PolicyParams::init(Architecture::default(), 0);
        assert!(p.len() <= 1_000_000);
        assert!(p.is_finite());
    }

    #[test]
    fn init_is_seeded() {
        let a = PolicyParams::init(Architecture::default(), 5);
        let b = PolicyParams::init(Architecture::default(), 5);
        let c = PolicyParams::init(Architecture::default(), 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn from_data_checks_length() {
        let arch = Architecture::default();
        assert!(matches!(
            PolicyParams::from_data(arch, vec![0.0; 3]),
            Err(Error::ShapeMismatch { actual: 3, .. })
        ));
    }
}
