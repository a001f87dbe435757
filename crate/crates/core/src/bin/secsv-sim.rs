use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use secsv::config::ExperimentConfig;
use secsv::experiment::{bench_csv, bench_matmul, cmd_gen_data, cmd_run, parse_shapes, BENCH_SHAPES};
use secsv::he::DEFAULT_SLOTS;
use secsv::Result;

#[derive(Parser)]
#[command(name = "secsv-sim", version, about = "Secure Shapley-value protocol simulator")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for round-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a federation, run the configured protocols and write reports.
    Run,
    /// Compare the two packed matmul kernels on a list of shapes.
    BenchMatmul {
        /// Comma-separated `ROWSxCOLS` shapes of the model matrix.
        #[arg(long)]
        shapes: Option<String>,
        /// Slot count; defaults to the config value.
        #[arg(long)]
        slots: Option<usize>,
    },
    /// Write synthetic per-client train and test CSVs.
    GenData,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build_global()
        .map_err(|e| secsv::Error::Config { field: "workers".into(), reason: e.to_string() })?;
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Run => {
            let out = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
            let run = cmd_run(&cfg, &out)?;
            for f in &run.files {
                println!("wrote {}", f.display());
            }
            for (pair, ratio) in &run.summary.speedups {
                println!("speedup {pair}: {ratio:.2}");
            }
        }
        Command::BenchMatmul { shapes, slots } => {
            let shapes = match shapes {
                Some(s) => parse_shapes(s)?,
                None => BENCH_SHAPES.to_vec(),
            };
            let slots = slots.unwrap_or(if cli.config.is_some() { cfg.slot_count } else { DEFAULT_SLOTS });
            let (rows, warnings) = bench_matmul(&shapes, slots, cfg.seed)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let out = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
            std::fs::create_dir_all(&out)?;
            let path = out.join("bench_matmul.csv");
            std::fs::write(&path, bench_csv(&rows))?;
            println!("wrote {}", path.display());
        }
        Command::GenData => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            for f in cmd_gen_data(&cfg, &out)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
