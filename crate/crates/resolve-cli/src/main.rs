//! Command-line driver: dataset generation, training sweeps, evaluation,
//! the attention microbenchmark, gradient checks, and learning-curve
//! plots.

mod plot;

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use resolve_core::bench::{bench_attention, BenchConfig};
use resolve_core::diagnostics::gradcheck_suite;
use resolve_core::harness::{
    eval_checkpoint, load_task_data, run_experiment, RunConfig, TaskData,
};

#[derive(Parser)]
#[command(name = "resolve", about = "Hyperdimensional relational learning toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; defaults come from the task preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task preset (pairwise | sorting | mnist-math).
    #[arg(long)]
    task: Option<String>,
    /// Model variant (a | b | c | d | transformer-cls | transformer-seq).
    #[arg(long)]
    variant: Option<String>,
    /// Extra key=value overrides, highest precedence.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> anyhow::Result<RunConfig> {
        let mut text = String::new();
        if let Some(path) = &self.config {
            text.push_str(
                &fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
            );
            text.push('\n');
        } else {
            let (Some(task), Some(variant)) = (&self.task, &self.variant) else {
                bail!("pass --config or both --task and --variant");
            };
            text.push_str(&format!("task={task}\nvariant={variant}\n"));
        }
        for kv in &self.overrides {
            text.push_str(kv);
            text.push('\n');
        }
        Ok(RunConfig::from_kv(&text)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset and dump it as inspectable TSV files.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for the TSV dump.
        #[arg(long, default_value = "data/dump")]
        out: PathBuf,
    },
    /// Train over the configured (train_size, seed) grid and write
    /// metrics + checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Train in single precision (faster; metrics stay in f64).
        #[arg(long)]
        f32: bool,
    },
    /// Evaluate a checkpoint on its task's test split.
    Eval {
        checkpoint: PathBuf,
    },
    /// Attention-score microbenchmark (float32 vs dense HD vs packed HD).
    Bench {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 1024)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gradient-check every differentiable primitive and the variant (a)
    /// pipeline end-to-end.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render accuracy-vs-train-size learning curves from metrics files.
    Plot {
        /// One or more metrics.csv files; each becomes a labeled curve.
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "learning_curves.svg")]
        out: PathBuf,
        /// Metric to plot (defaults to the task's headline accuracy).
        #[arg(long)]
        metric: Option<String>,
    },
}

fn dump_dataset(cfg: &RunConfig, out: &PathBuf) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let data = load_task_data(cfg)?;
    let write_rows = |name: &str, rows: &[Vec<f64>]| -> anyhow::Result<()> {
        let mut s = String::new();
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        fs::write(out.join(name), s)?;
        Ok(())
    };
    match &data {
        TaskData::Pairwise(d) => {
            write_rows("objects.tsv", &d.objects)?;
            let mut s = String::from("i\tj\tlabel\n");
            for (k, (i, j)) in d.pairs.iter().enumerate() {
                s.push_str(&format!("{i}\t{j}\t{}\n", d.labels[k]));
            }
            fs::write(out.join("pairs.tsv"), s)?;
        }
        TaskData::Sorting(d) => {
            write_rows("objects.tsv", &d.objects)?;
            let mut s = String::from("sequence\ttarget\n");
            for (seq, tgt) in d.sequences.iter().zip(&d.targets) {
                let a: Vec<String> = seq.iter().map(|v| v.to_string()).collect();
                let b: Vec<String> = tgt.iter().map(|v| v.to_string()).collect();
                s.push_str(&format!("{}\t{}\n", a.join(","), b.join(",")));
            }
            fs::write(out.join("sequences.tsv"), s)?;
        }
        TaskData::MnistMath { digits, ds } => {
            let mut s = String::from("i\tj\tdigit_i\tdigit_j\tlabel\n");
            for (k, (i, j)) in ds.pairs.iter().enumerate() {
                s.push_str(&format!(
                    "{i}\t{j}\t{}\t{}\t{}\n",
                    digits.labels[*i], digits.labels[*j], ds.labels[k]
                ));
            }
            fs::write(out.join("pairs.tsv"), s)?;
        }
    }
    println!("wrote dataset dump to {}", out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::GenData { cfg, out } => {
            let cfg = cfg.build()?;
            dump_dataset(&cfg, &out)?;
        }
        Cmd::Train { cfg, f32: single } => {
            let cfg = cfg.build()?;
            let summary = if single {
                run_experiment::<f32>(&cfg)?
            } else {
                run_experiment::<f64>(&cfg)?
            };
            println!("run directory: {}", summary.run_dir.display());
            for agg in &summary.aggregates {
                println!(
                    "train_size {:>6}  {}: {:.4} ± {:.4} (n={})",
                    agg.train_size, agg.metric, agg.mean, agg.std, agg.n
                );
            }
        }
        Cmd::Eval { checkpoint } => {
            for (metric, value) in eval_checkpoint::<f64>(&checkpoint)? {
                println!("{metric}: {value:.4}");
            }
        }
        Cmd::Bench { n, d, reps, seed } => {
            let report = bench_attention(BenchConfig { n, d, reps, seed })?;
            print!("{report}");
            if !report.exact_match {
                bail!("packed and dense HD scores diverged");
            }
        }
        Cmd::Gradcheck { instances, seed } => {
            let mut ok = true;
            for (name, err) in gradcheck_suite(instances, seed)? {
                let status = if err < 1e-4 { "ok " } else { "FAIL" };
                ok &= err < 1e-4;
                println!("{status} {name:<28} max rel err {err:.3e}");
            }
            if !ok {
                bail!("gradient check failed");
            }
        }
        Cmd::Plot { metrics, out, metric } => {
            if metrics.is_empty() {
                bail!("pass at least one metrics.csv");
            }
            plot::learning_curves(&metrics, &out, metric.as_deref())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
