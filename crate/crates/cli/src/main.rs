use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use guisd_core::lab::checkpoint::Checkpoint;
use guisd_core::lab::compare::{compare, write_comparison};
use guisd_core::lab::dataset::{manifest, Dataset};
use guisd_core::lab::eval::{
    evaluate, hard_subset, per_digit_analysis, position_name, subset_accuracy,
    teacher_signal_stats, PerDigitReport,
};
use guisd_core::lab::train::{run_experiment, RunOptions, TrainState, CHECKPOINT_FILE};
use guisd_core::lab::{Method, TrainConfig};
use guisd_core::privilege::{build_privileged_context, to_pgm, PrivilegeMode};
use guisd_core::screens::generate_task;

#[derive(Parser)]
#[command(
    name = "guisd",
    version,
    about = "Self-distillation for coordinate grounding on synthetic screens"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset manifest (and optional PGM renders).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Also render the first N tasks as PGM files, one per view.
        #[arg(long, default_value_t = 0)]
        render: usize,
    },
    /// Warm start and train one method.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many method steps.
        #[arg(long)]
        halt_at: Option<usize>,
    },
    /// Greedy accuracy of a checkpoint on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Teacher signal under every view, per-digit analysis, hard subset.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train several methods over several seeds and tabulate.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated method names.
        #[arg(long, default_value = "guisd,naive_opsd,grpo_binary")]
        methods: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    privilege_mode: Option<PrivilegeMode>,
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => read_config(path)?,
            None => TrainConfig::default(),
        };
        if let Some(m) = self.method {
            c.method = m;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(p) = self.privilege_mode {
            c.privilege_mode = Some(p);
        }
        if let Some(s) = self.steps {
            c.steps = s;
        }
        c.validate().context("invalid configuration")?;
        Ok(c)
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let c = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)?,
        _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    Ok(c)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| anyhow::anyhow!("'{x}': {e}")))
        .collect()
}

fn load_state(config: &TrainConfig, out: &Path, path: &Option<PathBuf>) -> Result<TrainState> {
    let path = path.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let c = Checkpoint::load(&path, &config.hash())
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(TrainState::from_checkpoint(c)?)
}

fn gen_data(config: &TrainConfig, out: &Path, render: usize) -> Result<()> {
    fs::create_dir_all(out)?;
    let lines = manifest(config)?;
    let mut f = std::io::BufWriter::new(fs::File::create(out.join("manifest.jsonl"))?);
    for l in &lines {
        serde_json::to_writer(&mut f, l)?;
        writeln!(f)?;
    }
    f.flush()?;
    if render > 0 {
        let dir = out.join("renders");
        fs::create_dir_all(&dir)?;
        for l in lines.iter().take(render) {
            let task = generate_task(l.seed, &config.screen)?;
            for mode in PrivilegeMode::ALL {
                let ctx = build_privileged_context(&task, mode, &config.privilege);
                fs::write(
                    dir.join(format!("{}_{mode}.pgm", l.seed)),
                    to_pgm(&ctx.raster, false),
                )?;
                if mode.draws_marker() {
                    fs::write(
                        dir.join(format!("{}_{mode}_marker.pgm", l.seed)),
                        to_pgm(&ctx.raster, true),
                    )?;
                }
            }
        }
    }
    println!(
        "wrote {} tasks to {}",
        lines.len(),
        out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn write_per_digit(path: &Path, method: &str, rep: &PerDigitReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "position",
        "count",
        "student_entropy",
        "teacher_entropy",
        "student_gt_prob",
        "teacher_gt_prob",
    ])?;
    for s in rep.summary.iter().flatten() {
        w.write_record([
            method.to_string(),
            position_name(s.position).to_string(),
            s.count.to_string(),
            s.student_entropy.to_string(),
            s.teacher_entropy.to_string(),
            s.student_gt_prob.to_string(),
            s.teacher_gt_prob.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, render } => gen_data(&common.load()?, &common.out, render),
        Command::Train {
            common,
            resume,
            halt_at,
        } => {
            let c = common.load()?;
            let st = run_experiment(&c, &common.out, &RunOptions { halt_at, resume })?;
            println!(
                "{} step {}: initial acc {:.4}",
                c.method, st.step, st.initial.accuracy
            );
            if let Some(r) = st.rows.last() {
                println!(
                    "acc {:.4}  hundreds {:.4}  hard {:.4}  teacher entropy {:.4}",
                    r.acc, r.acc_hundreds, r.acc_hard, r.teacher_entropy
                );
            }
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let c = common.load()?;
            let st = load_state(&c, &common.out, &checkpoint)?;
            let data = Dataset::with_modes(&c, &[])?;
            let rep = evaluate(&st.params, &data.eval);
            let hard = subset_accuracy(&st.params, &data.eval, &st.hard_subset);
            let json = serde_json::json!({
                "step": st.step,
                "accuracy": rep.accuracy,
                "acc_hundreds": rep.digit_accuracy[0],
                "acc_tens": rep.digit_accuracy[1],
                "acc_units": rep.digit_accuracy[2],
                "acc_hard": hard,
                "hard_size": st.hard_subset.len(),
            });
            fs::create_dir_all(&common.out)?;
            fs::write(
                common.out.join("eval.json"),
                serde_json::to_string_pretty(&json)?,
            )?;
            println!("{json}");
            Ok(())
        }
        Command::Analyze { common, checkpoint } => {
            let c = common.load()?;
            let st = load_state(&c, &common.out, &checkpoint)?;
            let data = Dataset::with_modes(&c, &PrivilegeMode::ALL)?;
            fs::create_dir_all(&common.out)?;
            let mut w = csv::Writer::from_path(common.out.join("teacher_stats.csv"))?;
            w.write_record(["mode", "teacher_acc", "entropy", "top1"])?;
            for mode in PrivilegeMode::ALL {
                let s = teacher_signal_stats(st.teacher_params(), &data.eval, mode);
                println!(
                    "{mode:>20}: acc {:.4}  entropy {:.4}  top1 {:.4}",
                    s.accuracy, s.mean_entropy, s.mean_top1
                );
                w.write_record([
                    mode.to_string(),
                    s.accuracy.to_string(),
                    s.mean_entropy.to_string(),
                    s.mean_top1.to_string(),
                ])?;
            }
            w.flush()?;
            let rep = per_digit_analysis(
                &st.params,
                st.teacher_params(),
                &data.eval,
                c.privilege_mode(),
            );
            write_per_digit(&common.out.join("per_digit.csv"), c.method.as_str(), &rep)?;
            let hard = hard_subset(
                &st.params,
                &data.eval,
                c.hard_rollouts,
                c.temperature,
                c.seed,
            );
            fs::write(
                common.out.join("hard_subset.json"),
                serde_json::to_string(&hard.iter().collect::<Vec<_>>())?,
            )?;
            println!(
                "hard subset: {} of {} eval tasks",
                hard.len(),
                data.eval.len()
            );
            Ok(())
        }
        Command::Compare {
            common,
            methods,
            seeds,
        } => {
            let c = common.load()?;
            let methods: Vec<Method> = parse_list(&methods)?;
            let seeds: Vec<u64> = parse_list(&seeds)?;
            if methods.is_empty() || seeds.is_empty() {
                bail!("compare needs at least one method and one seed");
            }
            let cmp = compare(&c, &methods, &seeds)?;
            write_comparison(&common.out, &cmp)?;
            for m in &cmp.medians {
                println!(
                    "{:>14}: acc {:.4}  hundreds {:.4}  hard {:.4}  ms/step {:.1}",
                    m.method, m.acc, m.acc_hundreds, m.acc_hard, m.ms_per_step
                );
            }
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
