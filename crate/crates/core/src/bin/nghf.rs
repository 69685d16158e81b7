use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nghf::bench::{run_bench, BenchConfig};
use nghf::config::RunConfig;
use nghf::experiment::{eval, gen_data, lattice_check, output_path, train};
use nghf::optim::metrics::{append_csv, write_csv};
use nghf::synth::GenConfig;
use nghf::{Error, Precision, Result};

#[derive(Parser)]
#[command(
    name = "nghf",
    version,
    about = "Second-order sequence training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    precision: Option<Precision>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task.
    GenData,
    /// Train a model; writes metrics, traces and checkpoints.
    Train,
    /// Evaluate a checkpoint and append the result to `<out>/eval.csv`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "valid")]
        split: String,
    },
    /// Validate a lattice file and print per-lattice statistics.
    LatticeCheck { file: PathBuf },
    /// CG micro-benchmarks.
    CgBench,
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(p) = c.precision {
        cfg.precision = p;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_csv<T: serde::Serialize>(rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout());
    let io = |msg: String| Error::Io {
        path: "stdout".into(),
        msg,
    };
    for r in rows {
        w.serialize(r).map_err(|e| io(e.to_string()))?;
    }
    w.flush().map_err(|e| io(e.to_string()))
}

fn emit<T: serde::Serialize>(out: Option<&Path>, name: &str, rows: &[T]) -> Result<()> {
    match out {
        Some(dir) => write_csv(output_path(dir, name)?, rows),
        None => print_csv(rows),
    }
}

fn run(cli: Cli) -> Result<String> {
    let c = &cli.common;
    match cli.command {
        Command::GenData => {
            let mut cfg = match &c.config {
                Some(p) => GenConfig::load(p)?,
                None => GenConfig::default(),
            };
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            let ds = gen_data(&cfg, &out)?;
            Ok(format!(
                "ok command=gen-data train={} valid={} states={} out={}",
                ds.train.len(),
                ds.valid.len(),
                ds.info.num_states,
                out.display()
            ))
        }
        Command::Train => {
            let cfg = run_config(c)?;
            let s = train(&cfg)?;
            let acc = s.valid.last().map_or(f64::NAN, |m| m.mpe_accuracy);
            Ok(format!(
                "ok command=train updates={} best_epoch={} valid_mpe_accuracy={acc:.6} out={}",
                s.reports.len(),
                s.best_epoch,
                cfg.out.display()
            ))
        }
        Command::Eval { checkpoint, split } => {
            let cfg = run_config(c)?;
            let rec = eval(
                &checkpoint,
                &cfg.data,
                &split,
                cfg.loss,
                cfg.kappa,
                cfg.priors,
                c.precision,
                cfg.workers,
            )?;
            append_csv(
                output_path(&cfg.out, "eval.csv")?,
                std::slice::from_ref(&rec),
            )?;
            Ok(format!(
                "ok command=eval split={} loss={:.6} mpe_accuracy={:.6} frame_error={:.6}",
                rec.split, rec.value, rec.mpe_accuracy, rec.frame_error
            ))
        }
        Command::LatticeCheck { file } => {
            let rows = lattice_check(&file)?;
            emit(c.out.as_deref(), "lattice_check.csv", &rows)?;
            Ok(format!("ok command=lattice-check lattices={}", rows.len()))
        }
        Command::CgBench => {
            let mut cfg = match &c.config {
                Some(p) => BenchConfig::load(p)?,
                None => BenchConfig::default(),
            };
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(w) = c.workers {
                cfg.workers = w;
            }
            if let Some(p) = c.precision {
                cfg.precision = p;
            }
            let rows = run_bench(&cfg)?;
            emit(c.out.as_deref(), "cg_bench.csv", &rows)?;
            Ok(format!("ok command=cg-bench rows={}", rows.len()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error kind=usage msg={first:?}");
            return ExitCode::from(2);
        }
    };
    let out_is_stdout = matches!(cli.command, Command::LatticeCheck { .. } | Command::CgBench)
        && cli.common.out.is_none();
    match run(cli) {
        Ok(summary) => {
            if out_is_stdout {
                eprintln!("{summary}");
            } else {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} msg={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
