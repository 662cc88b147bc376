//! Evaluation and diagnostics: accuracy, per-digit accuracy, teacher signal
//! quality, the per-digit entropy analysis, and the hard subset probe.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{
    greedy_trajectory, sample_trajectory, teacher_forced, Categorical, Observation, PolicyParams,
};
use crate::privilege::PrivilegeMode;
use crate::screens::point_in_bbox;
use crate::tokens::{TokenTrajectory, DIGIT_POS, SEQ_LEN};

use super::dataset::TaskRecord;
use super::rng::{stream_rng, Stream};

/// Digit positions reported, most significant first.
pub const POSITIONS: [u8; 3] = [3, 2, 1];

pub fn position_name(k: u8) -> &'static str {
    match k {
        4 => "thousands",
        3 => "hundreds",
        2 => "tens",
        1 => "units",
        _ => "structural",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Hundreds, tens, units.
    pub digit_accuracy: [f64; 3],
}

pub fn hit(traj: &TokenTrajectory, rec: &TaskRecord) -> bool {
    matches!(traj.decode(), Ok(p) if point_in_bbox(p, &rec.target_bbox_norm))
}

/// Scores fixed predictions. Malformed decodes miss, and every digit slot of a
/// malformed decode counts as wrong.
pub fn evaluate_predictions(records: &[TaskRecord], predictions: &[TokenTrajectory]) -> EvalReport {
    assert_eq!(records.len(), predictions.len());
    assert!(!records.is_empty(), "evaluation needs at least one task");
    let mut hits = 0usize;
    let mut digit_hits = [0usize; 3];
    for (rec, pred) in records.iter().zip(predictions) {
        let well_formed = pred.decode().is_ok();
        if hit(pred, rec) {
            hits += 1;
        }
        if !well_formed {
            continue;
        }
        for slot in 0..SEQ_LEN {
            let k = DIGIT_POS[slot];
            if k > 0 && pred.ids[slot] == rec.gt.ids[slot] {
                digit_hits[(3 - k) as usize] += 1;
            }
        }
    }
    let n = records.len() as f64;
    // Two coordinates per task contribute to each position.
    EvalReport {
        accuracy: hits as f64 / n,
        digit_accuracy: digit_hits.map(|h| h as f64 / (2.0 * n)),
    }
}

pub fn greedy_predictions(params: &PolicyParams, records: &[TaskRecord]) -> Vec<TokenTrajectory> {
    records
        .par_iter()
        .map(|r| greedy_trajectory(params, &r.student).trajectory)
        .collect()
}

/// Greedy accuracy of the student view.
pub fn evaluate(params: &PolicyParams, records: &[TaskRecord]) -> EvalReport {
    evaluate_predictions(records, &greedy_predictions(params, records))
}

/// Greedy accuracy on a subset given by task seeds. Vacuously 1 when empty.
pub fn subset_accuracy(
    params: &PolicyParams,
    records: &[TaskRecord],
    seeds: &BTreeSet<u64>,
) -> f64 {
    let subset: Vec<&TaskRecord> = records.iter().filter(|r| seeds.contains(&r.seed)).collect();
    if subset.is_empty() {
        return 1.0;
    }
    let hits = subset
        .par_iter()
        .filter(|r| hit(&greedy_trajectory(params, &r.student).trajectory, r))
        .count();
    hits as f64 / subset.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherStats {
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub mean_top1: f64,
}

/// Teacher quality from greedy passes: hit rate, and entropy / top-1 averaged
/// over digit slots only.
pub fn signal_stats(
    records: &[TaskRecord],
    passes: &[(TokenTrajectory, [Categorical; SEQ_LEN])],
) -> TeacherStats {
    assert_eq!(records.len(), passes.len());
    assert!(!records.is_empty());
    let mut hits = 0usize;
    let mut ent = 0.0;
    let mut top1 = 0.0;
    let mut count = 0usize;
    for (rec, (traj, dists)) in records.iter().zip(passes) {
        if hit(traj, rec) {
            hits += 1;
        }
        for (slot, d) in dists.iter().enumerate() {
            if DIGIT_POS[slot] > 0 {
                ent += d.entropy();
                top1 += d.top1();
                count += 1;
            }
        }
    }
    TeacherStats {
        accuracy: hits as f64 / records.len() as f64,
        mean_entropy: ent / count as f64,
        mean_top1: top1 / count as f64,
    }
}

pub fn teacher_signal_stats(
    teacher: &PolicyParams,
    records: &[TaskRecord],
    mode: PrivilegeMode,
) -> TeacherStats {
    let passes: Vec<_> = records
        .par_iter()
        .map(|r| {
            let pass = greedy_trajectory(teacher, r.view(mode));
            (pass.trajectory, pass.distributions())
        })
        .collect();
    signal_stats(records, &passes)
}

/// One incorrectly predicted digit slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitRecord {
    pub position: u8,
    pub student_entropy: f64,
    pub teacher_entropy: f64,
    pub student_gt_prob: f64,
    pub teacher_gt_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitSummary {
    pub position: u8,
    pub count: usize,
    pub student_entropy: f64,
    pub teacher_entropy: f64,
    pub student_gt_prob: f64,
    pub teacher_gt_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDigitReport {
    pub records: Vec<DigitRecord>,
    /// Hundreds, tens, units; `None` when no slot at that position was wrong.
    pub summary: [Option<DigitSummary>; 3],
}

/// Builds the report from per-task `(gt, student greedy pass, teacher pass
/// along the student's tokens)`.
pub fn summarize_digits(
    items: &[(
        TokenTrajectory,
        TokenTrajectory,
        [Categorical; SEQ_LEN],
        [Categorical; SEQ_LEN],
    )],
) -> PerDigitReport {
    let mut records = Vec::new();
    for (gt, pred, student, teacher) in items {
        for slot in 0..SEQ_LEN {
            let k = DIGIT_POS[slot];
            if k == 0 || pred.ids[slot] == gt.ids[slot] {
                continue;
            }
            let y = gt.ids[slot];
            records.push(DigitRecord {
                position: k,
                student_entropy: student[slot].entropy(),
                teacher_entropy: teacher[slot].entropy(),
                student_gt_prob: student[slot].prob(y),
                teacher_gt_prob: teacher[slot].prob(y),
            });
        }
    }
    let summary = POSITIONS.map(|k| {
        let group: Vec<&DigitRecord> = records.iter().filter(|r| r.position == k).collect();
        if group.is_empty() {
            return None;
        }
        let n = group.len() as f64;
        let mean = |f: fn(&DigitRecord) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
        Some(DigitSummary {
            position: k,
            count: group.len(),
            student_entropy: mean(|r| r.student_entropy),
            teacher_entropy: mean(|r| r.teacher_entropy),
            student_gt_prob: mean(|r| r.student_gt_prob),
            teacher_gt_prob: mean(|r| r.teacher_gt_prob),
        })
    });
    PerDigitReport { records, summary }
}

/// Entropy and ground-truth probability of student and teacher on the digit
/// slots the student's greedy decode gets wrong.
pub fn per_digit_analysis(
    student: &PolicyParams,
    teacher: &PolicyParams,
    records: &[TaskRecord],
    mode: PrivilegeMode,
) -> PerDigitReport {
    let items: Vec<_> = records
        .par_iter()
        .map(|r| {
            let s = greedy_trajectory(student, &r.student);
            let t = teacher_forced(teacher, r.view(mode), &s.trajectory);
            (r.gt, s.trajectory, s.distributions(), t.distributions())
        })
        .collect();
    summarize_digits(&items)
}

/// Seeds of tasks where every one of `n_rollouts` samples misses. Rollout `i`
/// of a task is identical for any `n_rollouts > i`, so raising `n_rollouts`
/// can only shrink the set.
pub fn hard_subset_with<F>(
    records: &[TaskRecord],
    n_rollouts: usize,
    seed: u64,
    sample: F,
) -> BTreeSet<u64>
where
    F: Fn(&Observation, &mut rand_chacha::ChaCha8Rng) -> TokenTrajectory + Sync,
{
    assert!(n_rollouts >= 1);
    records
        .par_iter()
        .filter(|r| {
            let mut rng = stream_rng(seed, Stream::HardSubset, r.seed, 0);
            (0..n_rollouts).all(|_| !hit(&sample(&r.student, &mut rng), r))
        })
        .map(|r| r.seed)
        .collect()
}

pub fn hard_subset(
    params: &PolicyParams,
    records: &[TaskRecord],
    n_rollouts: usize,
    temperature: f64,
    seed: u64,
) -> BTreeSet<u64> {
    hard_subset_with(records, n_rollouts, seed, |obs, rng| {
        sample_trajectory(params, obs, temperature, rng).trajectory
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::config::TrainConfig;
    use crate::lab::dataset::Dataset;
    use crate::policy::Architecture;
    use crate::screens::Point;
    use crate::tokens::encode_point;

    fn small() -> Dataset {
        let c = TrainConfig {
            train_size: 8,
            eval_size: 40,
            ..TrainConfig::default()
        };
        Dataset::for_config(&c).unwrap()
    }

    #[test]
    fn oracle_predictor_scores_one() {
        let d = small();
        let preds: Vec<_> = d.eval.iter().map(|r| r.gt).collect();
        let rep = evaluate_predictions(&d.eval, &preds);
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.digit_accuracy, [1.0; 3]);
    }

    #[test]
    fn constant_predictor_matches_brute_force() {
        let d = small();
        let p = Point::new(500, 500);
        let preds = vec![encode_point(p).unwrap(); d.eval.len()];
        let rep = evaluate_predictions(&d.eval, &preds);
        let brute = d
            .eval
            .iter()
            .filter(|r| point_in_bbox(p, &r.target_bbox_norm))
            .count() as f64
            / d.eval.len() as f64;
        assert_eq!(rep.accuracy, brute);
    }

    #[test]
    fn malformed_predictions_miss_everywhere() {
        let d = small();
        let preds: Vec<_> = d
            .eval
            .iter()
            .map(|r| {
                let mut t = r.gt;
                t.ids[9] = 3;
                t
            })
            .collect();
        let rep = evaluate_predictions(&d.eval, &preds);
        assert_eq!(rep.accuracy, 0.0);
        assert_eq!(rep.digit_accuracy, [0.0; 3]);
    }

    #[test]
    fn signal_stats_extremes() {
        let d = small();
        let one_hot: Vec<_> = d
            .eval
            .iter()
            .map(|r| (r.gt, r.gt.ids.map(Categorical::one_hot)))
            .collect();
        let s = signal_stats(&d.eval, &one_hot);
        assert_eq!((s.mean_entropy, s.mean_top1, s.accuracy), (0.0, 1.0, 1.0));

        let uniform: Vec<_> = d
            .eval
            .iter()
            .map(|r| (r.gt, [Categorical::uniform(); SEQ_LEN]))
            .collect();
        let s = signal_stats(&d.eval, &uniform);
        assert!((s.mean_entropy - 14f64.ln()).abs() < 1e-12);
        assert!((s.mean_top1 - 1.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_student_has_no_digit_records() {
        let d = small();
        let items: Vec<_> = d
            .eval
            .iter()
            .map(|r| {
                let dists = r.gt.ids.map(Categorical::one_hot);
                (r.gt, r.gt, dists, dists)
            })
            .collect();
        let rep = summarize_digits(&items);
        assert!(rep.records.is_empty());
        assert!(rep.summary.iter().all(Option::is_none));
    }

    #[test]
    fn digit_records_are_well_formed() {
        let d = small();
        let p = PolicyParams::init(Architecture::default(), 0);
        let rep = per_digit_analysis(&p, &p, &d.eval, PrivilegeMode::GaussianZoom);
        assert!(!rep.records.is_empty());
        for r in &rep.records {
            assert!(r.student_entropy >= 0.0 && r.teacher_entropy >= 0.0);
            assert!((0.0..=1.0).contains(&r.student_gt_prob));
            assert!((0.0..=1.0).contains(&r.teacher_gt_prob));
            assert!(POSITIONS.contains(&r.position));
        }
    }

    #[test]
    fn hard_subset_extremes() {
        let d = small();
        let oracle = hard_subset_with(&d.eval, 8, 0, |obs, _| {
            d.eval.iter().find(|r| &r.student == obs).unwrap().gt
        });
        assert!(oracle.is_empty());
        // (999, 999) lies inside no target box on these screens.
        let far = encode_point(Point::new(999, 999)).unwrap();
        assert!(d
            .eval
            .iter()
            .all(|r| !point_in_bbox(Point::new(999, 999), &r.target_bbox_norm)));
        let all = hard_subset_with(&d.eval, 8, 0, |_, _| far);
        assert_eq!(all.len(), d.eval.len());
    }

    #[test]
    fn hard_subset_shrinks_with_more_rollouts() {
        let d = small();
        let p = PolicyParams::init(Architecture::default(), 1);
        let mut prev = hard_subset(&p, &d.eval, 1, 1.0, 7);
        assert_eq!(prev, hard_subset(&p, &d.eval, 1, 1.0, 7));
        for n in 2..=8 {
            let cur = hard_subset(&p, &d.eval, n, 1.0, 7);
            assert!(cur.is_subset(&prev));
            prev = cur;
        }
    }
}
