//! Coordinate token vocabulary and fixed-width encoding.
//!
//! Every response is exactly ten tokens: `( d d d , _ d d d )`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screens::{Point, NORM_MAX};

pub const VOCAB_SIZE: usize = 14;
pub const SEQ_LEN: usize = 10;

pub const OPEN: u8 = 10;
pub const CLOSE: u8 = 11;
pub const COMMA: u8 = 12;
pub const SPACE: u8 = 13;

/// Digit position per slot: 3 = hundreds, 2 = tens, 1 = units, 0 = structural.
pub const DIGIT_POS: [u8; SEQ_LEN] = [0, 3, 2, 1, 0, 0, 3, 2, 1, 0];

/// Template symbol at each structural slot; `None` marks digit slots.
const TEMPLATE: [Option<u8>; SEQ_LEN] = [
    Some(OPEN),
    None,
    None,
    None,
    Some(COMMA),
    Some(SPACE),
    None,
    None,
    None,
    Some(CLOSE),
];

const SYMBOLS: [char; VOCAB_SIZE] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '(', ')', ',', '_',
];

pub fn symbol(id: u8) -> Option<char> {
    SYMBOLS.get(id as usize).copied()
}

pub fn token_id(c: char) -> Option<u8> {
    SYMBOLS.iter().position(|&s| s == c).map(|i| i as u8)
}

pub fn is_digit_slot(slot: usize) -> bool {
    DIGIT_POS[slot] > 0
}

/// A ten-token response. Sampled trajectories may be malformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenTrajectory {
    pub ids: [u8; SEQ_LEN],
}

impl TokenTrajectory {
    pub fn new(ids: [u8; SEQ_LEN]) -> Self {
        Self { ids }
    }

    pub fn digit_pos(&self) -> [u8; SEQ_LEN] {
        DIGIT_POS
    }

    pub fn decode(&self) -> std::result::Result<Point, Malformed> {
        decode_trajectory(&self.ids)
    }
}

impl fmt::Display for TokenTrajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &id) in self.ids.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match symbol(id) {
                Some(c) => write!(f, "{c}")?,
                None => write!(f, "<{id}>")?,
            }
        }
        Ok(())
    }
}

pub fn encode_point(p: Point) -> Result<TokenTrajectory> {
    if p.x > NORM_MAX || p.y > NORM_MAX {
        return Err(Error::Domain(format!("({}, {}) outside 0..=999", p.x, p.y)));
    }
    let digits = |v: u32| [(v / 100) as u8, (v / 10 % 10) as u8, (v % 10) as u8];
    let [xh, xt, xu] = digits(p.x);
    let [yh, yt, yu] = digits(p.y);
    Ok(TokenTrajectory::new([
        OPEN, xh, xt, xu, COMMA, SPACE, yh, yt, yu, CLOSE,
    ]))
}

/// Decode failure, carrying the first slot that breaks the template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Malformed {
    pub slot: usize,
}

impl fmt::Display for Malformed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed coordinate at slot {}", self.slot)
    }
}

impl std::error::Error for Malformed {}

pub fn decode_trajectory(ids: &[u8]) -> std::result::Result<Point, Malformed> {
    for slot in 0..SEQ_LEN {
        let Some(&id) = ids.get(slot) else {
            return Err(Malformed { slot });
        };
        let ok = match TEMPLATE[slot] {
            Some(sym) => id == sym,
            None => id <= 9,
        };
        if !ok {
            return Err(Malformed { slot });
        }
    }
    if ids.len() != SEQ_LEN {
        return Err(Malformed { slot: SEQ_LEN });
    }
    let num = |s: &[u8]| s.iter().fold(0u32, |acc, &d| acc * 10 + d as u32);
    Ok(Point::new(num(&ids[1..4]), num(&ids[6..9])))
}

/// How digit significance maps to a positional weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionalSchedule {
    /// `alpha * k`.
    Linear { alpha: f64 },
    /// `alpha * beta^(k - 1)`.
    Exponential { alpha: f64, beta: f64 },
}

impl Default for PositionalSchedule {
    fn default() -> Self {
        PositionalSchedule::Linear { alpha: 1.0 }
    }
}

impl PositionalSchedule {
    /// Weight for digit position `k` (0 = structural, 1 = units .. 4 = thousands).
    pub fn weight(&self, k: u8) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match *self {
            PositionalSchedule::Linear { alpha } => alpha * k as f64,
            PositionalSchedule::Exponential { alpha, beta } => alpha * beta.powi(k as i32 - 1),
        }
    }
}

/// Linear positional credit: 1 for structural tokens, `alpha * k` for digits.
pub fn positional_weight(k: u8, alpha: f64) -> f64 {
    PositionalSchedule::Linear { alpha }.weight(k)
}
