//! `shepherd`: run trials, batches, sweeps and coverage analyses.
//!
//! Exit codes: 0 success, 1 I/O or output-directory error, 2 configuration
//! error, 3 aborted trial.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shepherd_grid::coverage::{containment_condition, containment_sweep};
use shepherd_grid::harness::{self, SweepAxis};
use shepherd_grid::{run_trial, SimError, Strategy};

use config::{ConfigError, FlagOverrides, RunConfig};

#[derive(Parser)]
#[command(name = "shepherd", version, about = "Pack-based interception simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded trial.
    Trial(Common),
    /// Run a Monte Carlo batch.
    Batch(Common),
    /// Compare strategies across packet-loss levels.
    SweepLoss(Common),
    /// Compare strategies across simultaneous target counts.
    SweepTargets(Common),
    /// Evaluate the containment condition across horizons.
    Coverage(Common),
    /// Re-export phase timelines from a batch directory.
    Timeline {
        /// Directory holding a batch's trials.jsonl.
        batch_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set params.k_slot=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    targets: Option<usize>,
    /// Comma-separated sweep levels.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record and emit the per-tick trace (trial only).
    #[arg(long)]
    trace: bool,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: SimError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("output directory {0} is not empty (use --force)")]
    OutputExists(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Sim(SimError::InvalidParameter(_)) => 2,
            CliError::Sim(SimError::TrialAborted { .. }) => 3,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Trial(c) => trial(&c),
        Command::Batch(c) => batch(&c),
        Command::SweepLoss(c) => sweep(&c, true),
        Command::SweepTargets(c) => sweep(&c, false),
        Command::Coverage(c) => coverage(&c),
        Command::Timeline { batch_dir, out, force } => timeline(&batch_dir, out.as_deref(), force),
    }
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let flags = FlagOverrides {
        seed: c.seed,
        trials: c.trials,
        strategy: c.strategy,
        loss: c.loss,
        targets: c.targets,
        trace: c.trace,
    };
    Ok(config::load(c.config.as_deref(), &c.sets, &flags)?)
}

/// Creates `dir`, refusing a non-empty one unless `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: dir.display().to_string(), source };
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io)?.next().is_some();
        if non_empty && !force {
            return Err(CliError::OutputExists(dir.display().to_string()));
        }
    }
    fs::create_dir_all(dir).map_err(io)
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write_effective(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write(&dir.join("effective_config.json"), &(harness::to_rounded_json(cfg, true)? + "\n"))
}

fn out_dir(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn trial(c: &Common) -> Result<(), CliError> {
    let cfg = load(c)?;
    if let Some(dir) = &c.out {
        prepare_out(dir, c.force)?;
        write_effective(dir, &cfg)?;
    }
    let result = run_trial(&cfg.scenario)?;
    let trace_lines = if c.trace {
        let mut s = String::new();
        for rec in &result.trace {
            s.push_str(&harness::to_rounded_json(rec, false)?);
            s.push('\n');
        }
        Some(s)
    } else {
        None
    };
    let summary = harness::to_rounded_json(&shepherd_grid::TrialResult { trace: Vec::new(), ..result.clone() }, true)? + "\n";
    match &c.out {
        Some(dir) => {
            write(&dir.join("result.json"), &summary)?;
            if let Some(t) = &trace_lines {
                write(&dir.join("trace.jsonl"), t)?;
            }
            println!(
                "seed {}: captured {}/{} in {:.1} s -> {}",
                result.seed,
                result.n_captured(),
                result.outcomes.len(),
                result.end_time,
                dir.display()
            );
        }
        None => {
            let mut out = std::io::stdout().lock();
            let text = trace_lines.unwrap_or(summary);
            match out.write_all(text.as_bytes()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r.map_err(|source| CliError::Io { path: "<stdout>".into(), source })?,
            }
        }
    }
    Ok(())
}

fn batch(c: &Common) -> Result<(), CliError> {
    let cfg = load(c)?;
    let dir = out_dir(c, "runs/batch");
    prepare_out(&dir, c.force)?;
    write_effective(&dir, &cfg)?;
    let b = harness::run_batch(&cfg.batch(SweepAxis::None))?;
    harness::write_batch(&dir, &b)?;
    let s = &b.stats;
    let median = s.tti.median().map_or("n/a".to_string(), |m| format!("{m:.1} s"));
    println!(
        "{} x{}: success {:.3} [{:.3}, {:.3}], median TTI {median} -> {}",
        s.strategy.name(),
        s.n_trials,
        s.success_rate,
        s.success_ci.lo,
        s.success_ci.hi,
        dir.display()
    );
    Ok(())
}

fn sweep(c: &Common, loss: bool) -> Result<(), CliError> {
    let mut cfg = load(c)?;
    if !c.levels.is_empty() {
        if loss {
            cfg.loss_levels = c.levels.clone();
        } else {
            cfg.target_levels = c.levels.iter().map(|l| l.round().max(0.0) as usize).collect();
        }
        cfg.validate()?;
    }
    let dir = out_dir(c, if loss { "runs/sweep-loss" } else { "runs/sweep-targets" });
    prepare_out(&dir, c.force)?;
    write_effective(&dir, &cfg)?;
    let base = cfg.batch(SweepAxis::None);
    let s = if loss {
        harness::sweep_packet_loss(&base, &cfg.loss_levels)?
    } else {
        harness::sweep_target_count(&base, &cfg.target_levels)?
    };
    harness::write_sweep(&dir, &s)?;
    let mut table = String::new();
    for r in s.rows() {
        let _ = writeln!(table, "{:>6} {:<12} {:.3} [{:.3}, {:.3}]", r.level, r.strategy.name(), r.success, r.ci_lo, r.ci_hi);
    }
    print!("{table}");
    println!("-> {}", dir.display());
    Ok(())
}

fn coverage(c: &Common) -> Result<(), CliError> {
    let cfg = load(c)?;
    let dir = out_dir(c, "runs/coverage");
    prepare_out(&dir, c.force)?;
    write_effective(&dir, &cfg)?;
    let p = &cfg.scenario.coverage;
    let r_formation = cfg.scenario.params.r_formation;
    let rows = containment_sweep(r_formation, p, &cfg.coverage_horizons)?;
    let mut csv = String::from("dt,r_formation,r_intercept,condition_holds,escape_prob_bound\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            harness::sig9(r.dt),
            harness::sig9(r.r_formation),
            harness::sig9(r.r_intercept),
            r.condition_holds,
            harness::sig9(r.escape_prob_bound)
        );
    }
    write(&dir.join("coverage.csv"), &csv)?;
    let holds = containment_condition(r_formation, p.r_intercept, p.v_target_max, p.horizon_dt);
    println!(
        "containment condition at dt = {}: {} ({} horizons -> {})",
        p.horizon_dt,
        if holds { "holds" } else { "fails" },
        rows.len(),
        dir.join("coverage.csv").display()
    );
    Ok(())
}

fn timeline(batch_dir: &Path, out: Option<&Path>, force: bool) -> Result<(), CliError> {
    let trials = harness::read_trials(batch_dir)?;
    let rows = harness::phase_timeline_export(&trials);
    let csv = harness::timeline_csv(&rows);
    let durations = harness::to_rounded_json(&harness::phase_durations(&rows), true)? + "\n";
    match out {
        Some(dir) => {
            prepare_out(dir, force)?;
            write(&dir.join("timeline.csv"), &csv)?;
            write(&dir.join("phase_durations.json"), &durations)?;
            println!("{} intervals from {} trials -> {}", rows.len(), trials.len(), dir.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
