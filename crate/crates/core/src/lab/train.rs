//! Warm start and the per-method training loops.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{grpo_loss, sft_loss, RolloutGroup};
use crate::distill::{guisd_loss, naive_opsd_loss, supervise, Weighting};
use crate::error::{Error, Result};
use crate::policy::{
    backward, ema_update, optimizer_step, sample_trajectory, teacher_distributions, teacher_forced,
    AdamState, Gradients, LrSchedule, PolicyParams, TeacherMode,
};
use crate::privilege::PrivilegeMode;

use super::checkpoint::{Checkpoint, Window, CHECKPOINT_VERSION};
use super::config::{Method, TrainConfig};
use super::dataset::{Dataset, TaskRecord};
use super::eval::{evaluate, hard_subset, subset_accuracy, teacher_signal_stats, EvalReport};
use super::metrics::{write_metrics, MetricsRow};
use super::rng::{stream_rng, stream_seed, Stream};

fn batch(n: usize, size: usize, seed: u64, stream: Stream, step: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, stream, step as u64, 0);
    sample_indices(&mut rng, n, size).into_vec()
}

/// Sums per-task gradients in batch order and averages. Order is fixed, so the
/// result does not depend on thread scheduling.
fn reduce(outputs: Vec<(f64, Gradients)>, params: &PolicyParams) -> (f64, Gradients) {
    let n = outputs.len() as f64;
    let mut total = Gradients::zeros_for(params);
    let mut loss = 0.0;
    for (l, g) in &outputs {
        loss += l;
        total.add_assign(g);
    }
    total.scale(1.0 / n);
    (loss / n, total)
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged { step },
        other => other,
    }
}

/// Supervised pass on the ground truth under `obs`.
fn sft_task(
    params: &PolicyParams,
    obs: &crate::policy::Observation,
    rec: &TaskRecord,
) -> Result<(f64, Gradients)> {
    let pass = teacher_forced(params, obs, &rec.gt);
    let (loss, lg) = sft_loss(&pass.distributions(), &rec.gt)?;
    let mut g = Gradients::zeros_for(params);
    backward(params, obs, &pass, &lg, &mut g)?;
    Ok((loss, g))
}

/// Initial weights followed by supervised training on a mixture of the
/// student view and the configured privileged views. Depends only on the
/// seed, data, architecture and warm-start settings, never on the method.
pub fn warm_start(config: &TrainConfig, data: &Dataset) -> Result<PolicyParams> {
    let mut params = PolicyParams::init(
        config.architecture.clone(),
        stream_seed(config.seed, Stream::Init, 0, 0),
    );
    let steps = config.warm_start_steps;
    if steps == 0 {
        return Ok(params);
    }
    let schedule = LrSchedule {
        peak: config.warm_start_lr,
        total_steps: steps,
        warmup_ratio: config.warmup_ratio,
    };
    let mut adam = AdamState::new(params.len());
    let views = &config.warm_start_views;
    for s in 0..steps {
        let idx = batch(
            data.train.len(),
            config.batch_size,
            config.seed,
            Stream::WarmBatch,
            s,
        );
        let outputs = idx
            .par_iter()
            .enumerate()
            .map(|(i, &j)| {
                let rec = &data.train[j];
                let mut rng = stream_rng(config.seed, Stream::WarmView, s as u64, i as u64);
                let mode = views[rng.gen_range(0..views.len())];
                sft_task(&params, rec.view(mode), rec)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(diverged(s))?;
        let (loss, grads) = reduce(outputs, &params);
        if !loss.is_finite() {
            return Err(Error::Diverged { step: s });
        }
        optimizer_step(&mut params, &grads, &mut adam, &schedule, s).map_err(diverged(s))?;
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Everything one method step reads.
pub struct StepInputs<'a> {
    pub method: Method,
    pub mode: PrivilegeMode,
    pub weighting: Weighting,
    pub group_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub params: &'a PolicyParams,
    pub teacher: &'a PolicyParams,
}

impl StepInputs<'_> {
    /// Loss and parameter gradient for one task. `step` and `slot` key the
    /// rollout stream.
    pub fn task(&self, rec: &TaskRecord, step: usize, slot: usize) -> Result<(f64, Gradients)> {
        let p = self.params;
        if self.method == Method::Sft {
            return sft_task(p, &rec.student, rec);
        }
        let mut rng = stream_rng(self.seed, Stream::Rollout, step as u64, slot as u64);
        let mut g = Gradients::zeros_for(p);
        if let Some(reward) = self.method.reward() {
            let passes: Vec<_> = (0..self.group_size)
                .map(|_| sample_trajectory(p, &rec.student, self.temperature, &mut rng))
                .collect();
            let trajectories = passes.iter().map(|x| x.trajectory).collect();
            let student = passes.iter().map(|x| x.distributions()).collect();
            let rewards = passes
                .iter()
                .map(|x| reward.reward(&x.trajectory, &rec.target_bbox_norm))
                .collect();
            let group = RolloutGroup::new(trajectories, student, rewards)?;
            let (loss, lgs) = grpo_loss(&group)?;
            for ((pass, lg), &adv) in passes.iter().zip(&lgs).zip(&group.advantages) {
                if adv != 0.0 {
                    backward(p, &rec.student, pass, lg, &mut g)?;
                }
            }
            return Ok((loss, g));
        }
        let pass = sample_trajectory(p, &rec.student, self.temperature, &mut rng);
        let teacher = teacher_distributions(self.teacher, rec.view(self.mode), &pass.trajectory);
        let sup = supervise(&pass.distributions(), &teacher, &self.weighting);
        let (loss, lg) = match self.method {
            Method::NaiveOpsd => naive_opsd_loss(&sup)?,
            _ => guisd_loss(&sup)?,
        };
        backward(p, &rec.student, &pass, &lg, &mut g)?;
        Ok((loss, g))
    }

    /// Mean loss and gradient over `records`, in order.
    pub fn batch(&self, records: &[&TaskRecord], step: usize) -> Result<(f64, Gradients)> {
        let outputs = records
            .par_iter()
            .enumerate()
            .map(|(i, rec)| self.task(rec, step, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce(outputs, self.params))
    }
}

/// Mutable state of the method phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub params: PolicyParams,
    /// Separate teacher weights; `None` when the teacher is the live student.
    pub teacher: Option<PolicyParams>,
    pub adam: AdamState,
    pub hard_subset: BTreeSet<u64>,
    /// Eval of the warm-started weights, before any method step.
    pub initial: EvalReport,
    pub window: Window,
    pub rows: Vec<MetricsRow>,
}

impl TrainState {
    pub fn teacher_params(&self) -> &PolicyParams {
        self.teacher.as_ref().unwrap_or(&self.params)
    }

    pub fn to_checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            architecture: self.params.architecture().clone(),
            step: self.step,
            params: self.params.as_slice().to_vec(),
            teacher: self.teacher.as_ref().map(|t| t.as_slice().to_vec()),
            adam: self.adam.clone(),
            hard_subset: self.hard_subset.iter().copied().collect(),
            initial: self.initial,
            window: self.window,
            rows: self.rows.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        let arch = c.architecture;
        let params = PolicyParams::from_data(arch.clone(), c.params)?;
        let teacher = c
            .teacher
            .map(|t| PolicyParams::from_data(arch.clone(), t))
            .transpose()?;
        if c.adam.m.len() != params.len() || c.adam.v.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                actual: c.adam.m.len(),
            });
        }
        Ok(Self {
            step: c.step,
            params,
            teacher,
            adam: c.adam,
            hard_subset: c.hard_subset.into_iter().collect(),
            initial: c.initial,
            window: c.window,
            rows: c.rows,
        })
    }
}

pub struct Trainer<'a> {
    config: &'a TrainConfig,
    data: &'a Dataset,
    schedule: LrSchedule,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Starts the method phase from `init`, normally the warm-started weights.
    pub fn new(config: &'a TrainConfig, data: &'a Dataset, init: PolicyParams) -> Result<Self> {
        config.validate()?;
        let teacher = match config.teacher_mode {
            TeacherMode::CurrentPolicy => None,
            _ if !config.method.is_distillation() => None,
            _ => Some(init.clone()),
        };
        let hard = hard_subset(
            &init,
            &data.eval,
            config.hard_rollouts,
            config.temperature,
            config.seed,
        );
        let state = TrainState {
            step: 0,
            adam: AdamState::new(init.len()),
            initial: evaluate(&init, &data.eval),
            params: init,
            teacher,
            hard_subset: hard,
            window: Window::default(),
            rows: Vec::new(),
        };
        Ok(Self::with_state(config, data, state))
    }

    pub fn resume(
        config: &'a TrainConfig,
        data: &'a Dataset,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        if checkpoint.config_hash != hash {
            return Err(Error::ConfigHashMismatch {
                expected: hash,
                found: checkpoint.config_hash,
            });
        }
        Ok(Self::with_state(
            config,
            data,
            TrainState::from_checkpoint(checkpoint)?,
        ))
    }

    fn with_state(config: &'a TrainConfig, data: &'a Dataset, state: TrainState) -> Self {
        Self {
            config,
            data,
            schedule: LrSchedule {
                peak: config.peak_lr,
                total_steps: config.steps,
                warmup_ratio: config.warmup_ratio,
            },
            state,
        }
    }

    pub fn done(&self) -> bool {
        self.state.step >= self.config.steps
    }

    /// One optimizer step of the configured method, then the teacher update
    /// and, on cadence, a metrics row.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let c = self.config;
        let s = self.state.step;
        let start = Instant::now();
        let idx = batch(
            self.data.train.len(),
            c.batch_size,
            c.seed,
            Stream::Batch,
            s,
        );
        let records: Vec<&TaskRecord> = idx.iter().map(|&j| &self.data.train[j]).collect();
        let inputs = StepInputs {
            method: c.method,
            mode: c.privilege_mode(),
            weighting: c.effective_weighting(),
            group_size: c.group_size,
            temperature: c.temperature,
            seed: c.seed,
            params: &self.state.params,
            teacher: self.state.teacher_params(),
        };
        let (loss, grads) = inputs.batch(&records, s).map_err(diverged(s))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: s });
        }
        let grad_norm = grads.norm();
        optimizer_step(
            &mut self.state.params,
            &grads,
            &mut self.state.adam,
            &self.schedule,
            s,
        )
        .map_err(diverged(s))?;
        if !self.state.params.is_finite() {
            return Err(Error::Diverged { step: s });
        }
        if let (TeacherMode::Ema { decay }, Some(t)) = (c.teacher_mode, self.state.teacher.as_mut())
        {
            ema_update(t, &self.state.params, decay)?;
        }
        let ms = if c.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.state.step += 1;
        let w = &mut self.state.window;
        w.loss += loss;
        w.grad_norm += grad_norm;
        w.ms += ms;
        w.steps += 1;
        let done = self.state.step;
        if done % c.eval_cadence == 0 || done == c.steps {
            let row = self.metrics_row();
            self.state.rows.push(row);
            self.state.window = Window::default();
        }
        Ok(StepOutcome { loss, grad_norm })
    }

    fn metrics_row(&self) -> MetricsRow {
        let st = &self.state;
        let eval = evaluate(&st.params, &self.data.eval);
        let teacher = teacher_signal_stats(
            st.teacher_params(),
            &self.data.eval,
            self.config.privilege_mode(),
        );
        let n = st.window.steps.max(1) as f64;
        MetricsRow {
            step: st.step,
            method: self.config.method.as_str().to_string(),
            loss: st.window.loss / n,
            acc: eval.accuracy,
            acc_hundreds: eval.digit_accuracy[0],
            acc_tens: eval.digit_accuracy[1],
            acc_units: eval.digit_accuracy[2],
            acc_hard: subset_accuracy(&st.params, &self.data.eval, &st.hard_subset),
            teacher_entropy: teacher.mean_entropy,
            teacher_top1: teacher.mean_top1,
            teacher_acc: teacher.accuracy,
            grad_norm: st.window.grad_norm / n,
            ms: st.window.ms / n,
        }
    }

    /// Steps until `halt_at` completed steps or the end of the run.
    pub fn run_until(&mut self, halt_at: usize) -> Result<()> {
        while !self.done() && self.state.step < halt_at {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(usize::MAX)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.to_checkpoint(self.config)
    }
}

/// Warm start plus the full method phase, in memory.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainState> {
    let init = warm_start(config, data)?;
    let mut t = Trainer::new(config, data, init)?;
    t.run()?;
    Ok(t.state)
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";

/// Options for [`run_experiment`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many method steps and checkpoint.
    pub halt_at: Option<usize>,
    /// Continue from this checkpoint instead of warm-starting.
    pub resume: Option<std::path::PathBuf>,
}

/// Trains and writes `metrics.csv`, `checkpoint.json` and `config.json` under
/// `out`.
pub fn run_experiment(config: &TrainConfig, out: &Path, opts: &RunOptions) -> Result<TrainState> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let data = Dataset::for_config(config)?;
    let mut trainer = match &opts.resume {
        Some(path) => Trainer::resume(config, &data, Checkpoint::load(path, &config.hash())?)?,
        None => Trainer::new(config, &data, warm_start(config, &data)?)?,
    };
    trainer.run_until(opts.halt_at.unwrap_or(usize::MAX))?;
    trainer.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
    write_metrics(&out.join(METRICS_FILE), &trainer.state.rows)?;
    std::fs::write(out.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;
    Ok(trainer.state)
}
