use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::Observation;
use crate::privilege::{build_privileged_context, PrivilegeConfig, PrivilegeMode};
use crate::screens::{generate_task, split_dataset, BBox, GroundingTask, ScreenConfig};
use crate::tokens::{encode_point, TokenTrajectory};

use super::config::TrainConfig;

/// One line of the dataset manifest. Rasters are regenerated from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub seed: u64,
    pub split: String,
    pub instruction: Vec<usize>,
    pub target_bbox_px: BBox,
    pub target_bbox_norm: BBox,
}

/// A task reduced to what training needs: labels plus pooled views.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub seed: u64,
    pub target_bbox_norm: BBox,
    pub target_bbox_px: BBox,
    pub instruction: Vec<usize>,
    pub gt: TokenTrajectory,
    pub student: Observation,
    /// Teacher views keyed by privilege mode.
    pub views: BTreeMap<PrivilegeMode, Observation>,
}

impl TaskRecord {
    pub fn build(
        task: &GroundingTask,
        modes: &[PrivilegeMode],
        privilege: &PrivilegeConfig,
        pool_grid: usize,
    ) -> Self {
        let views = modes
            .iter()
            .map(|&m| {
                let ctx = build_privileged_context(task, m, privilege);
                (m, Observation::teacher(&ctx, &task.instruction, pool_grid))
            })
            .collect();
        Self {
            seed: task.seed,
            target_bbox_norm: task.target_bbox_norm,
            target_bbox_px: task.target().bbox,
            instruction: task.instruction.clone(),
            gt: encode_point(task.target_point()).expect("normalized target"),
            student: Observation::student(task, pool_grid),
            views,
        }
    }

    /// Teacher view for `mode`. Panics if the dataset was built without it.
    pub fn view(&self, mode: PrivilegeMode) -> &Observation {
        self.views
            .get(&mode)
            .unwrap_or_else(|| panic!("dataset built without {mode} views"))
    }
}

/// Train and eval task records for one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<TaskRecord>,
    pub eval: Vec<TaskRecord>,
}

/// Seeds for the train and eval splits.
pub fn dataset_seeds(config: &TrainConfig) -> Result<(Vec<u64>, Vec<u64>)> {
    let n = (config.train_size + config.eval_size) as u64;
    let start = config.data_seed.wrapping_mul(1_000_003);
    let eval_ratio = config.eval_size as f64 / n as f64;
    split_dataset(start..start + n, (1.0 - eval_ratio, eval_ratio))
}

fn build_records(
    seeds: &[u64],
    screen: &ScreenConfig,
    modes: &[PrivilegeMode],
    privilege: &PrivilegeConfig,
    pool_grid: usize,
) -> Result<Vec<TaskRecord>> {
    seeds
        .par_iter()
        .map(|&s| {
            let task = generate_task(s, screen)?;
            Ok(TaskRecord::build(&task, modes, privilege, pool_grid))
        })
        .collect()
}

impl Dataset {
    /// Builds every view any phase of `config` may ask for.
    pub fn for_config(config: &TrainConfig) -> Result<Self> {
        let mut modes: Vec<PrivilegeMode> = config.warm_start_views.clone();
        modes.push(config.privilege_mode());
        modes.push(PrivilegeMode::TextCoordinate);
        modes.push(PrivilegeMode::GaussianZoom);
        modes.sort_by_key(|m| m.as_str());
        modes.dedup();
        Self::with_modes(config, &modes)
    }

    pub fn with_modes(config: &TrainConfig, modes: &[PrivilegeMode]) -> Result<Self> {
        let (train_seeds, eval_seeds) = dataset_seeds(config)?;
        let grid = config.architecture.pool_grid;
        Ok(Self {
            train: build_records(&train_seeds, &config.screen, modes, &config.privilege, grid)?,
            eval: build_records(&eval_seeds, &config.screen, modes, &config.privilege, grid)?,
        })
    }
}

/// Manifest lines for both splits, train first.
pub fn manifest(config: &TrainConfig) -> Result<Vec<ManifestRecord>> {
    let (train, eval) = dataset_seeds(config)?;
    let mut out = Vec::with_capacity(train.len() + eval.len());
    for (split, seeds) in [("train", train), ("eval", eval)] {
        for s in seeds {
            let task = generate_task(s, &config.screen)?;
            out.push(ManifestRecord {
                seed: s,
                split: split.to_string(),
                instruction: task.instruction.clone(),
                target_bbox_px: task.target().bbox,
                target_bbox_norm: task.target_bbox_norm,
            });
        }
    }
    Ok(out)
}
