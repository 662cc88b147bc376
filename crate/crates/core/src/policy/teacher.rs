use serde::{Deserialize, Serialize};

use super::distribution::{Categorical, PROB_FLOOR};
use super::network::{teacher_forced, Observation};
use super::params::PolicyParams;
use crate::error::{Error, Result};
use crate::tokens::{TokenTrajectory, SEQ_LEN};

/// How teacher weights track the student.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherMode {
    /// Teacher shares the student's current weights.
    CurrentPolicy,
    /// Teacher is frozen at the weights the method phase started from.
    FrozenRef,
    /// Teacher follows an exponential moving average of the student.
    Ema { decay: f64 },
}

impl Default for TeacherMode {
    fn default() -> Self {
        TeacherMode::Ema { decay: 0.95 }
    }
}

impl TeacherMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TeacherMode::Ema { decay } if !(0.0..=1.0).contains(&decay) => Err(
                Error::InvalidConfig(format!("EMA decay {decay} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }
}

/// Teacher distributions along the student's trajectory, floored and
/// renormalized. No gradient flows through these.
pub fn teacher_distributions(
    teacher: &PolicyParams,
    obs: &Observation,
    traj: &TokenTrajectory,
) -> [Categorical; SEQ_LEN] {
    let pass = teacher_forced(teacher, obs, traj);
    pass.distributions().map(|d| d.floored(PROB_FLOOR))
}

/// `teacher ← decay · teacher + (1 − decay) · student`.
pub fn ema_update(teacher: &mut PolicyParams, student: &PolicyParams, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidConfig(format!(
            "EMA decay {decay} outside [0, 1]"
        )));
    }
    teacher.check_same_shape(student)?;
    let keep = 1.0 - decay;
    for (t, s) in teacher.as_mut_slice().iter_mut().zip(student.as_slice()) {
        *t = decay * *t + keep * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::network::sample_trajectory;
    use crate::policy::params::Architecture;
    use crate::screens::{generate_task, ScreenConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ema_identities() {
        let arch = Architecture::default();
        let s = PolicyParams::init(arch.clone(), 1);
        let t0 = PolicyParams::init(arch, 2);

        let mut t = t0.clone();
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, s);

        let mut t = t0.clone();
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, t0);

        assert!(ema_update(&mut t, &s, 1.5).is_err());
    }

    #[test]
    fn ema_scalar_arithmetic() {
        let arch = Architecture::default();
        let mut t = PolicyParams::zeros(arch.clone());
        t.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        let s = PolicyParams::zeros(arch);
        ema_update(&mut t, &s, 0.95).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.95));
    }

    #[test]
    fn ema_rejects_shape_mismatch() {
        let mut t = PolicyParams::zeros(Architecture::default());
        let s = PolicyParams::zeros(Architecture {
            hidden: 16,
            ..Architecture::default()
        });
        assert!(matches!(
            ema_update(&mut t, &s, 0.5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn self_teacher_without_privilege_matches_student() {
        let p = PolicyParams::init(Architecture::default(), 3);
        let task = generate_task(3, &ScreenConfig::default()).unwrap();
        let obs = Observation::student(&task, 8);
        let pass = sample_trajectory(&p, &obs, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let teacher = teacher_distributions(&p, &obs, &pass.trajectory);
        for (s, q) in pass.distributions().iter().zip(&teacher) {
            assert!(q.is_valid());
            let floored = s.floored(PROB_FLOOR);
            assert_eq!(floored.probs, q.probs);
        }
    }

    #[test]
    fn teacher_mode_validation() {
        assert!(TeacherMode::Ema { decay: -0.1 }.validate().is_err());
        assert!(TeacherMode::Ema { decay: 0.9 }.validate().is_ok());
        assert!(TeacherMode::FrozenRef.validate().is_ok());
    }
}
