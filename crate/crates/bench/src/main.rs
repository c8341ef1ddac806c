use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use code_bandits::harness::{emit_outputs, reaggregate_dir, run_experiment, write_plots, ExperimentConfig};
use code_bandits::Error;

/// Bandit experiment runner.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV and SVG results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log every round instead of 100 checkpoints.
        #[arg(long)]
        full_trace: bool,
    },
    /// Re-aggregate raw.csv in a results directory and redraw its plots.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// List shipped configs (BENCH_CONFIG_DIR or ./configs).
    ListConfigs,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Parse { .. } => 3,
        _ => 2,
    }
}

fn run(config: &Path, seed: Option<u64>, runs: Option<usize>, out: Option<PathBuf>, full_trace: bool) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if out.is_some() {
        cfg.out = out;
    }
    cfg.full_trace |= full_trace;
    cfg.validate()?;

    log::info!("{}: {} algorithms x {} runs, n = {}", cfg.name, cfg.algorithms.len(), cfg.runs, cfg.n);
    let (table, results) = run_experiment(&cfg)?;
    let outdir = cfg.out_dir();
    for path in emit_outputs(&table, &outdir)? {
        println!("wrote {}", path.display());
    }

    println!("{:<14} {:>14} {:>14} {:>10}", "algorithm", "regret", "Q_n", "covered");
    for alg in table.algorithms() {
        let last = table.final_row(&alg).expect("every algorithm has rows");
        let mine: Vec<_> = results.iter().filter(|r| r.algorithm == alg).collect();
        let covered = mine.iter().filter(|r| r.diagnostics.always_covered).count();
        println!(
            "{:<14} {:>14.3} {:>14.4} {:>6}/{:<4}",
            alg,
            last.regret_mean,
            last.q_mean,
            covered,
            mine.len()
        );
    }
    let violations: u64 = results.iter().map(|r| r.diagnostics.lemma_violations).sum();
    if violations > 0 {
        log::warn!("{violations} per-round inequality violations in covered rounds");
    }
    Ok(())
}

fn plot(dir: &Path) -> Result<(), Error> {
    let (table, gap) = reaggregate_dir(dir)?;
    println!("re-aggregated {} raw rows, max difference from aggregate.csv {gap:.3e}", table.raw.len());
    for path in write_plots(&table.aggregate, &table.algorithms(), dir)? {
        println!("wrote {}", path.display());
    }
    if gap > 1e-9 {
        return Err(Error::Input(format!("aggregate.csv disagrees with raw.csv by {gap:.3e}")));
    }
    Ok(())
}

fn list_configs() -> Result<(), Error> {
    let dir = std::env::var_os("BENCH_CONFIG_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("configs"));
    let entries = std::fs::read_dir(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    for path in paths {
        match ExperimentConfig::load(&path) {
            Ok(cfg) => println!(
                "{:<40} {:?}, n = {}, runs = {}, {} algorithms",
                path.display(),
                cfg.environment.kind,
                cfg.n,
                cfg.runs,
                cfg.algorithms.len()
            ),
            Err(e) => println!("{:<40} invalid: {e}", path.display()),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            runs,
            out,
            full_trace,
        } => run(&config, seed, runs, out, full_trace),
        Command::Plot { input } => plot(&input),
        Command::ListConfigs => list_configs(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
