//! Several methods from one config, sharing data and warm start per seed.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privilege::PrivilegeMode;

use super::config::{Method, TrainConfig};
use super::dataset::Dataset;
use super::metrics::{write_metrics, MetricsRow};
use super::train::{warm_start, Trainer};

/// Final numbers of one (method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    /// A seed, or `median` for the per-method aggregate.
    pub seed: String,
    pub steps: usize,
    pub initial_acc: f64,
    pub acc: f64,
    pub acc_hundreds: f64,
    pub acc_tens: f64,
    pub acc_units: f64,
    pub acc_hard: f64,
    pub hard_size: usize,
    pub teacher_entropy: f64,
    pub teacher_top1: f64,
    pub teacher_acc: f64,
    pub ms_per_step: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub medians: Vec<RunSummary>,
    /// Every metrics row of every run, method-major then seed.
    pub rows: Vec<(u64, MetricsRow)>,
}

impl Comparison {
    pub fn median(&self, method: Method) -> Option<&RunSummary> {
        self.medians.iter().find(|r| r.method == method.as_str())
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_summary(method: Method, runs: &[&RunSummary]) -> RunSummary {
    let m = |f: fn(&RunSummary) -> f64| median(&mut runs.iter().map(|r| f(r)).collect::<Vec<_>>());
    RunSummary {
        method: method.as_str().to_string(),
        seed: "median".to_string(),
        steps: runs[0].steps,
        initial_acc: m(|r| r.initial_acc),
        acc: m(|r| r.acc),
        acc_hundreds: m(|r| r.acc_hundreds),
        acc_tens: m(|r| r.acc_tens),
        acc_units: m(|r| r.acc_units),
        acc_hard: m(|r| r.acc_hard),
        hard_size: m(|r| r.hard_size as f64).round() as usize,
        teacher_entropy: m(|r| r.teacher_entropy),
        teacher_top1: m(|r| r.teacher_top1),
        teacher_acc: m(|r| r.teacher_acc),
        ms_per_step: m(|r| r.ms_per_step),
    }
}

/// Runs every method for every seed. `base.method` is ignored; each method
/// keeps `base.privilege_mode` if set and otherwise uses its own default view.
pub fn compare(base: &TrainConfig, methods: &[Method], seeds: &[u64]) -> Result<Comparison> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "compare needs methods and seeds".into(),
        ));
    }
    let configs: Vec<TrainConfig> = methods
        .iter()
        .map(|&method| TrainConfig {
            method,
            ..base.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let data = Dataset::with_modes(base, &PrivilegeMode::ALL)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &seed in seeds {
        let shared = TrainConfig {
            seed,
            ..base.clone()
        };
        let init = warm_start(&shared, &data)?;
        for c in &configs {
            let c = TrainConfig { seed, ..c.clone() };
            let mut t = Trainer::new(&c, &data, init.clone())?;
            t.run()?;
            let st = &t.state;
            let last = st.rows.last().expect("at least one metrics row");
            let ms = st.rows.iter().map(|r| r.ms).sum::<f64>() / st.rows.len() as f64;
            runs.push(RunSummary {
                method: c.method.as_str().to_string(),
                seed: seed.to_string(),
                steps: st.step,
                initial_acc: st.initial.accuracy,
                acc: last.acc,
                acc_hundreds: last.acc_hundreds,
                acc_tens: last.acc_tens,
                acc_units: last.acc_units,
                acc_hard: last.acc_hard,
                hard_size: st.hard_subset.len(),
                teacher_entropy: last.teacher_entropy,
                teacher_top1: last.teacher_top1,
                teacher_acc: last.teacher_acc,
                ms_per_step: ms,
            });
            rows.extend(st.rows.iter().cloned().map(|r| (seed, r)));
        }
    }
    let medians = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.method == m.as_str()).collect();
            median_summary(m, &mine)
        })
        .collect();
    rows.sort_by(|a, b| {
        let pos = |r: &MetricsRow| methods.iter().position(|m| m.as_str() == r.method);
        pos(&a.1).cmp(&pos(&b.1)).then(a.0.cmp(&b.0))
    });
    Ok(Comparison {
        runs,
        medians,
        rows,
    })
}

pub const SUMMARY_FILE: &str = "summary.csv";

pub fn write_summary<W: Write>(out: W, c: &Comparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in c.runs.iter().chain(&c.medians) {
        w.serialize(r).map_err(|e| Error::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` plus one metrics file per seed (`metrics_seed<N>.csv`)
/// holding every method's rows under the shared header.
pub fn write_comparison(dir: &Path, c: &Comparison) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary(std::fs::File::create(dir.join(SUMMARY_FILE))?, c)?;
    let mut seeds: Vec<u64> = c.rows.iter().map(|(s, _)| *s).collect();
    seeds.dedup();
    seeds.sort_unstable();
    seeds.dedup();
    for s in seeds {
        let rows: Vec<MetricsRow> = c
            .rows
            .iter()
            .filter(|(seed, _)| *seed == s)
            .map(|(_, r)| r.clone())
            .collect();
        write_metrics(&dir.join(format!("metrics_seed{s}.csv")), &rows)?;
    }
    Ok(())
}
