//! `dicke`: collision-model preparation of symmetric entangled states —
//! simulate traces, synthesize controllers, sweep noise, map loss
//! landscapes, and replay the bundled reference controllers.

mod commands;
mod config;
mod errors;
mod fmt;
mod records;
mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_target, RunConfig};
use crate::errors::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "dicke",
    version,
    about = "Deterministic collision-model preparation of Dicke states",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Flat key = value config file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Target state as n,m (n qubits, m excitations).
    #[arg(long, global = true, value_name = "N,M")]
    target: Option<String>,

    /// Collision schedule: interleaved or factored.
    #[arg(long, global = true, value_name = "VARIANT")]
    schedule: Option<String>,

    /// Spacing of the coarse multistart grid, in radians.
    #[arg(long, global = true, value_name = "RADIANS")]
    grid_spacing: Option<f64>,

    /// Horizon: number of rounds searched over (default 200*m).
    #[arg(long, global = true, value_name = "ROUNDS")]
    rounds_max: Option<usize>,

    /// Loss fidelity kind: magnitude or phase.
    #[arg(long, global = true, value_name = "KIND")]
    loss: Option<String>,

    /// Seed for every stochastic component (starts, trajectories, phases).
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Worker threads (overrides the DICKE_WORKERS environment variable).
    #[arg(long, global = true, value_name = "COUNT")]
    workers: Option<usize>,

    /// Noise setting AXIS=LEVEL; repeatable (pmiss, dephasing,
    /// depolarizing, damping, none).
    #[arg(long, global = true, value_name = "AXIS=LEVEL")]
    noise: Vec<String>,

    /// When the decoherence channel acts: per_round or per_collision.
    #[arg(long, global = true, value_name = "POLICY")]
    policy: Option<String>,

    /// Noisy engine: dm (exact density matrix) or traj:COUNT (sampled).
    #[arg(long, global = true, value_name = "ENGINE")]
    engine: Option<String>,

    /// Apply dropout to intra-register collisions too, not just shuttles.
    #[arg(long, global = true)]
    drop_intra: bool,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the per-round fidelity of fixed collision strengths.
    Simulate {
        /// Intra-register collision strength, radians.
        #[arg(long, value_name = "RADIANS")]
        gamma_in: Option<f64>,
        /// Shuttle collision strength, radians.
        #[arg(long, value_name = "RADIANS")]
        gamma_sh: Option<f64>,
        /// Rounds to trace (default: the search horizon).
        #[arg(long, value_name = "ROUNDS")]
        rounds: Option<usize>,
    },
    /// Synthesize a controller by multistart refinement over the grid.
    Optimize {
        /// Exit with status 4 if the final fidelity is below this floor.
        #[arg(long, value_name = "FIDELITY")]
        fidelity_floor: Option<f64>,
    },
    /// Re-optimize across noise levels along one axis, with a frozen
    /// noiseless baseline for comparison.
    Sweep {
        /// Axis to sweep: pmiss, dephasing, depolarizing, or damping.
        #[arg(long, value_name = "AXIS")]
        axis: Option<String>,
        /// Comma-separated noise levels, e.g. 0,0.05,0.1.
        #[arg(long, value_name = "L1,L2,...")]
        levels: Option<String>,
    },
    /// Dump the full coarse-grid loss surface plus the refined incumbent.
    Landscape,
    /// Replay reference controllers (bundled table by default) and
    /// report pass/warn per row; mismatches never fail the run.
    Verify {
        /// Alternative controller table (CSV, same schema as bundled).
        #[arg(long, value_name = "FILE")]
        table: Option<PathBuf>,
        /// Fidelity threshold separating pass from warn.
        #[arg(long, value_name = "FIDELITY")]
        threshold: Option<f64>,
        /// Skip table rows with more qubits than this.
        #[arg(long, value_name = "N")]
        max_n: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Optimize { .. } => "optimize",
            Command::Sweep { .. } => "sweep",
            Command::Landscape => "landscape",
            Command::Verify { .. } => "verify",
        }
    }
}

fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.global.config {
        cfg.apply_file(path)?;
    }

    let g = &cli.global;
    if let Some(t) = &g.target {
        let (n, m) = parse_target(t)?;
        cfg.n = Some(n);
        cfg.m = Some(m);
    }
    if let Some(s) = &g.schedule {
        cfg.apply_kv("schedule", s)?;
    }
    if let Some(v) = g.grid_spacing {
        cfg.grid_spacing = v;
    }
    if let Some(v) = g.rounds_max {
        cfg.rounds_max = Some(v);
    }
    if let Some(s) = &g.loss {
        cfg.apply_kv("loss", s)?;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.workers {
        cfg.workers = Some(v);
    }
    for spec in &g.noise {
        cfg.apply_noise_flag(spec)?;
    }
    if let Some(s) = &g.policy {
        cfg.apply_kv("policy", s)?;
    }
    if let Some(s) = &g.engine {
        cfg.apply_kv("engine", s)?;
    }
    if g.drop_intra {
        cfg.drop_intra = true;
    }
    if let Some(dir) = &g.out {
        cfg.out_dir = dir.clone();
    }

    match &cli.command {
        Command::Simulate { gamma_in, gamma_sh, rounds } => {
            if let Some(v) = gamma_in {
                cfg.gamma_in = Some(*v);
            }
            if let Some(v) = gamma_sh {
                cfg.gamma_sh = Some(*v);
            }
            if let Some(v) = rounds {
                cfg.rounds = Some(*v);
            }
        }
        Command::Optimize { fidelity_floor } => {
            if let Some(v) = fidelity_floor {
                cfg.fidelity_floor = Some(*v);
            }
        }
        Command::Sweep { axis, levels } => {
            if let Some(a) = axis {
                cfg.apply_kv("axis", a)?;
            }
            if let Some(l) = levels {
                cfg.apply_kv("levels", l)?;
            }
        }
        Command::Landscape => {}
        Command::Verify { table, threshold, max_n } => {
            if let Some(p) = table {
                cfg.table = Some(p.clone());
            }
            if let Some(v) = threshold {
                cfg.threshold = *v;
            }
            if let Some(v) = max_n {
                cfg.max_n = *v;
            }
        }
    }
    cfg.command = cli.command.name().to_string();
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = build_config(cli)?;
    if let Some(workers) = cfg.resolve_workers() {
        if workers == 0 {
            return Err(CliError::config("workers must be at least 1".to_string()));
        }
        // Ignore the error if a pool already exists (e.g. in-process tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    match &cli.command {
        Command::Simulate { .. } => commands::simulate::run(&cfg),
        Command::Optimize { .. } => commands::optimize::run(&cfg),
        Command::Sweep { .. } => commands::sweep::run(&cfg),
        Command::Landscape => commands::landscape::run(&cfg),
        Command::Verify { .. } => commands::verify::run(&cfg),
    }
}

/// Die quietly on a closed pipe (e.g. piping into `head`) like other
/// line-oriented Unix tools instead of panicking mid-write.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {}", err.msg);
        std::process::exit(err.code);
    }
}
