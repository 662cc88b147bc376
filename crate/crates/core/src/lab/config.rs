use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::RewardKind;
use crate::distill::Weighting;
use crate::error::{Error, Result};
use crate::policy::{Architecture, TeacherMode};
use crate::privilege::{PrivilegeConfig, PrivilegeMode};
use crate::screens::ScreenConfig;
use crate::tokens::PositionalSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sft,
    NaiveOpsd,
    Guisd,
    GrpoBinary,
    GrpoDistance,
    GrpoGaussian,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sft,
        Method::NaiveOpsd,
        Method::Guisd,
        Method::GrpoBinary,
        Method::GrpoDistance,
        Method::GrpoGaussian,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::NaiveOpsd => "naive_opsd",
            Method::Guisd => "guisd",
            Method::GrpoBinary => "grpo_binary",
            Method::GrpoDistance => "grpo_distance",
            Method::GrpoGaussian => "grpo_gaussian",
        }
    }

    pub fn reward(&self) -> Option<RewardKind> {
        match self {
            Method::GrpoBinary => Some(RewardKind::Binary),
            Method::GrpoDistance => Some(RewardKind::Distance),
            Method::GrpoGaussian => Some(RewardKind::Gaussian),
            _ => None,
        }
    }

    pub fn is_distillation(&self) -> bool {
        matches!(self, Method::NaiveOpsd | Method::Guisd)
    }

    /// Teacher view used when the config leaves it unset.
    pub fn default_privilege(&self) -> PrivilegeMode {
        match self {
            Method::NaiveOpsd => PrivilegeMode::TextCoordinate,
            _ => PrivilegeMode::GaussianZoom,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    /// Teacher view; `None` picks the method's default.
    pub privilege_mode: Option<PrivilegeMode>,
    pub weighting: Weighting,
    pub teacher_mode: TeacherMode,
    pub privilege: PrivilegeConfig,
    pub group_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub warmup_ratio: f64,
    pub peak_lr: f64,
    /// Student sampling temperature during training.
    pub temperature: f64,
    /// Supervised warm start before the method phase; 0 disables it.
    pub warm_start_steps: usize,
    pub warm_start_lr: f64,
    /// Views mixed into the warm start so the network learns to read them.
    pub warm_start_views: Vec<PrivilegeMode>,
    pub seed: u64,
    pub data_seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    pub eval_cadence: usize,
    pub hard_rollouts: usize,
    pub screen: ScreenConfig,
    pub architecture: Architecture,
    /// Write wall-clock milliseconds per step; off gives byte-stable metrics.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let screen = ScreenConfig::default();
        let architecture = Architecture {
            instruction_cardinalities: screen.instruction_cardinalities(),
            ..Architecture::default()
        };
        Self {
            method: Method::Guisd,
            privilege_mode: None,
            weighting: Weighting::default(),
            teacher_mode: TeacherMode::default(),
            privilege: PrivilegeConfig::default(),
            group_size: 8,
            batch_size: 16,
            steps: 300,
            warmup_ratio: 0.05,
            peak_lr: 3e-4,
            temperature: 1.0,
            warm_start_steps: 200,
            warm_start_lr: 3e-3,
            warm_start_views: PrivilegeMode::ALL.to_vec(),
            seed: 0,
            data_seed: 0,
            train_size: 2000,
            eval_size: 200,
            eval_cadence: 25,
            hard_rollouts: 8,
            screen,
            architecture,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn privilege_mode(&self) -> PrivilegeMode {
        self.privilege_mode
            .unwrap_or_else(|| self.method.default_privilege())
    }

    /// Weighting actually applied by the method's loss.
    pub fn effective_weighting(&self) -> Weighting {
        match self.method {
            Method::NaiveOpsd => Weighting::uniform(),
            _ => self.weighting,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self.weighting.schedule {
            PositionalSchedule::Linear { alpha }
            | PositionalSchedule::Exponential { alpha, .. } => alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.screen.validate()?;
        self.teacher_mode.validate()?;
        if self.architecture.instruction_cardinalities != self.screen.instruction_cardinalities() {
            return bad(
                "architecture instruction cardinalities disagree with screen config".into(),
            );
        }
        if self.architecture.hidden == 0 || self.architecture.pool_grid == 0 {
            return bad("architecture dimensions must be positive".into());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("steps", self.steps),
            ("train_size", self.train_size),
            ("eval_size", self.eval_size),
            ("eval_cadence", self.eval_cadence),
            ("hard_rollouts", self.hard_rollouts),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.method.reward().is_some() && self.group_size < 2 {
            return bad(format!("group_size {} below 2", self.group_size));
        }
        for (name, v) in [
            ("peak_lr", self.peak_lr),
            ("temperature", self.temperature),
            ("tau", self.weighting.tau),
            ("alpha", self.alpha()),
            ("sigma_scale", self.privilege.sigma_scale),
            ("sigma_floor_coef", self.privilege.sigma_floor_coef),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.privilege.adaptive_factor < 1.0 {
            return bad("adaptive_factor must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio {} outside [0, 1)", self.warmup_ratio));
        }
        if self.warm_start_steps > 0 && !(self.warm_start_lr > 0.0) {
            return bad("warm_start_lr must be positive".into());
        }
        if self.warm_start_steps > 0 && self.warm_start_views.is_empty() {
            return bad("warm_start_views is empty".into());
        }
        if self.batch_size > self.train_size {
            return bad("batch_size exceeds train_size".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything that shapes the numbers.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.record_timing = false;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for m in Method::ALL {
            TrainConfig::for_method(m).validate().unwrap();
        }
    }

    #[test]
    fn default_views() {
        assert_eq!(
            TrainConfig::for_method(Method::NaiveOpsd).privilege_mode(),
            PrivilegeMode::TextCoordinate
        );
        assert_eq!(
            TrainConfig::for_method(Method::Guisd).privilege_mode(),
            PrivilegeMode::GaussianZoom
        );
        assert_eq!(
            TrainConfig::for_method(Method::NaiveOpsd).effective_weighting(),
            Weighting::uniform()
        );
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::for_method(Method::GrpoBinary);
        c.group_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.teacher_mode = TeacherMode::Ema { decay: 2.0 };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.weighting.tau = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_timing_only() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.record_timing = false;
        assert_eq!(a.hash(), b.hash());
        b.steps += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}
