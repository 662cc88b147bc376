//! JSON checkpoints. Floats are written with shortest round-trip formatting,
//! so a loaded checkpoint is bit-identical to the saved state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{AdamState, Architecture};

use super::eval::EvalReport;
use super::metrics::MetricsRow;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Running sums for the next metrics row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub loss: f64,
    pub grad_norm: f64,
    pub ms: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub architecture: Architecture,
    /// Completed optimizer steps of the method phase.
    pub step: usize,
    pub params: Vec<f64>,
    pub teacher: Option<Vec<f64>>,
    pub adam: AdamState,
    pub hard_subset: Vec<u64>,
    pub initial: EvalReport,
    pub window: Window,
    pub rows: Vec<MetricsRow>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    /// Loads without checking the config hash.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: Checkpoint = serde_json::from_reader(file)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(c.version));
        }
        Ok(c)
    }

    pub fn load(path: &Path, expected_hash: &str) -> Result<Self> {
        let c = Self::load_unchecked(path)?;
        if c.config_hash != expected_hash {
            return Err(Error::ConfigHashMismatch {
                expected: expected_hash.to_string(),
                found: c.config_hash,
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: "abc".into(),
            architecture: Architecture::default(),
            step: 3,
            params: vec![0.1, 1.0 / 3.0, -2.5e-300, f64::MIN_POSITIVE],
            teacher: None,
            adam: AdamState::new(4),
            hard_subset: vec![4, 9],
            initial: EvalReport {
                accuracy: 0.1,
                digit_accuracy: [0.7, 0.2, 0.1],
            },
            window: Window::default(),
            rows: vec![],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = sample();
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path, "abc").unwrap();
        assert_eq!(back, c);
        for (a, b) in back.params.iter().zip(&c.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_other_config_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        sample().save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path, "xyz"),
            Err(Error::ConfigHashMismatch { .. })
        ));
        let mut c = sample();
        c.version = 99;
        c.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load(&path, "abc"),
            Err(Error::CheckpointVersion(99))
        ));
    }
}
