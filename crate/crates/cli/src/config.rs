//! Run configuration: defaults, flat key = value config file, flag
//! overrides, and the fully-resolved config (with hash) persisted next to
//! every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use dicke_core::{
    make_channel, ApplicationPolicy, Bounds, ChannelLabel, FidelityKind, JitterSpec, LocalConfig,
    NoiseConfig, NoiseEngine, OptimizerConfig, ProtocolSpec, ScheduleVariant, SweepAxis,
};

use crate::errors::{CliError, CliResult};
use crate::fmt::num;
use crate::table::sha256_hex;

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "DICKE_WORKERS";

/// How noisy traces are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineChoice {
    DensityMatrix,
    Trajectories(usize),
}

impl EngineChoice {
    pub fn label(self) -> String {
        match self {
            EngineChoice::DensityMatrix => "dm".to_string(),
            EngineChoice::Trajectories(count) => format!("traj:{count}"),
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        if s == "dm" || s == "density_matrix" {
            return Ok(EngineChoice::DensityMatrix);
        }
        if let Some(rest) = s.strip_prefix("traj:").or_else(|| s.strip_prefix("trajectories:")) {
            let count: usize = rest
                .parse()
                .map_err(|_| CliError::config(format!("invalid trajectory count '{rest}'")))?;
            if count == 0 {
                return Err(CliError::config("trajectory count must be at least 1".to_string()));
            }
            return Ok(EngineChoice::Trajectories(count));
        }
        Err(CliError::config(format!(
            "unknown engine '{s}' (expected 'dm' or 'traj:COUNT')"
        )))
    }
}

/// Fully-merged run configuration (defaults < config file < flags).
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Subcommand name; recorded in the resolved config, not hashed.
    pub command: String,

    pub n: Option<usize>,
    pub m: Option<usize>,
    pub schedule: ScheduleVariant,
    pub grid_spacing: f64,
    pub rounds_max: Option<usize>,
    pub loss_kind: FidelityKind,
    pub seed: u64,
    pub workers: Option<usize>,

    pub gamma_in: Option<f64>,
    pub gamma_sh: Option<f64>,
    pub rounds: Option<usize>,

    pub p_miss: f64,
    pub channel: Option<ChannelLabel>,
    pub channel_q: f64,
    pub policy: ApplicationPolicy,
    pub engine: EngineChoice,
    pub drop_intra: bool,

    pub fidelity_floor: Option<f64>,
    pub out_dir: PathBuf,
    pub phase_starts: usize,
    pub maxiter: usize,
    pub ftol: f64,
    pub jitter_count: usize,
    pub jitter_scale: f64,

    pub axis: Option<SweepAxis>,
    pub levels: Vec<f64>,

    pub table: Option<PathBuf>,
    pub threshold: f64,
    pub max_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            n: None,
            m: None,
            schedule: ScheduleVariant::Interleaved,
            grid_spacing: 0.2,
            rounds_max: None,
            loss_kind: FidelityKind::Magnitude,
            seed: 0,
            workers: None,
            gamma_in: None,
            gamma_sh: None,
            rounds: None,
            p_miss: 0.0,
            channel: None,
            channel_q: 0.0,
            policy: ApplicationPolicy::PerRoundAllQubits,
            engine: EngineChoice::DensityMatrix,
            drop_intra: false,
            fidelity_floor: None,
            out_dir: PathBuf::from("out"),
            phase_starts: 32,
            maxiter: 100,
            ftol: 1e-6,
            jitter_count: 0,
            jitter_scale: 0.05,
            axis: None,
            levels: Vec::new(),
            table: None,
            threshold: 0.9,
            max_n: 10,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::config(format!("invalid value '{v}' for key '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(CliError::config(format!(
            "invalid boolean '{v}' for key '{key}' (expected true/false)"
        ))),
    }
}

fn unset(v: &str) -> bool {
    v == "none" || v == "auto"
}

pub fn parse_levels(v: &str) -> CliResult<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::config(format!("invalid level '{p}' in levels list")))
        })
        .collect()
}

pub fn parse_target(v: &str) -> CliResult<(usize, usize)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::config(format!(
            "target must be 'n,m', got '{v}'"
        )));
    }
    Ok((parse_num("target n", parts[0])?, parse_num("target m", parts[1])?))
}

impl RunConfig {
    /// Apply one key = value pair (config-file syntax). Unknown keys are
    /// errors; `command` and `config_hash` are accepted and ignored so a
    /// persisted resolved config can be replayed via --config.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "command" | "config_hash" => {}
            "n" => self.n = if unset(v) { None } else { Some(parse_num(key, v)?) },
            "m" => self.m = if unset(v) { None } else { Some(parse_num(key, v)?) },
            "schedule" => self.schedule = v.parse::<ScheduleVariant>().map_err(CliError::from)?,
            "grid_spacing" => self.grid_spacing = parse_num(key, v)?,
            "rounds_max" => {
                self.rounds_max = if unset(v) { None } else { Some(parse_num(key, v)?) }
            }
            "loss" => self.loss_kind = v.parse::<FidelityKind>().map_err(CliError::from)?,
            "seed" => self.seed = parse_num(key, v)?,
            "workers" => self.workers = if unset(v) { None } else { Some(parse_num(key, v)?) },
            "gamma_in" => self.gamma_in = if unset(v) { None } else { Some(parse_num(key, v)?) },
            "gamma_sh" => self.gamma_sh = if unset(v) { None } else { Some(parse_num(key, v)?) },
            "rounds" => self.rounds = if unset(v) { None } else { Some(parse_num(key, v)?) },
            "p_miss" => self.p_miss = parse_num(key, v)?,
            "channel" => {
                self.channel = if v == "none" {
                    None
                } else {
                    Some(v.parse::<ChannelLabel>().map_err(CliError::from)?)
                }
            }
            "channel_q" => self.channel_q = parse_num(key, v)?,
            "policy" => self.policy = v.parse::<ApplicationPolicy>().map_err(CliError::from)?,
            "engine" => self.engine = EngineChoice::parse(v)?,
            "drop_intra" => self.drop_intra = parse_bool(key, v)?,
            "fidelity_floor" => {
                self.fidelity_floor = if unset(v) { None } else { Some(parse_num(key, v)?) }
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "phase_starts" => self.phase_starts = parse_num(key, v)?,
            "maxiter" => self.maxiter = parse_num(key, v)?,
            "ftol" => self.ftol = parse_num(key, v)?,
            "jitter_count" => self.jitter_count = parse_num(key, v)?,
            "jitter_scale" => self.jitter_scale = parse_num(key, v)?,
            "axis" => {
                self.axis = if unset(v) {
                    None
                } else {
                    Some(v.parse::<SweepAxis>().map_err(CliError::from)?)
                }
            }
            "levels" => self.levels = parse_levels(v)?,
            "table" => self.table = if unset(v) { None } else { Some(PathBuf::from(v)) },
            "threshold" => self.threshold = parse_num(key, v)?,
            "max_n" => self.max_n = parse_num(key, v)?,
            other => {
                return Err(CliError::config(format!(
                    "unknown config key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Load a flat UTF-8 key = value file; `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim();
            if !matches!(key, "command" | "config_hash") {
                if seen.iter().any(|k| k == key) {
                    return Err(CliError::config(format!(
                        "{}:{}: duplicate key '{key}'",
                        path.display(),
                        lineno + 1
                    )));
                }
                seen.push(key.to_string());
            }
            self.apply_kv(key, value.trim()).map_err(|e| {
                CliError::config(format!("{}:{}: {}", path.display(), lineno + 1, e.msg))
            })?;
        }
        Ok(())
    }

    /// Apply one `--noise AXIS=LEVEL` occurrence.
    pub fn apply_noise_flag(&mut self, s: &str) -> CliResult<()> {
        let Some((axis, level)) = s.split_once('=') else {
            return Err(CliError::config(format!(
                "--noise expects AXIS=LEVEL, got '{s}'"
            )));
        };
        let level: f64 = parse_num("noise level", level.trim())?;
        match axis.trim() {
            "pmiss" | "p_miss" => self.p_miss = level,
            "none" | "identity" => {
                self.channel = None;
                self.channel_q = 0.0;
            }
            other => {
                let label: ChannelLabel = other
                    .parse()
                    .map_err(|e: dicke_core::Error| CliError::config(e.to_string()))?;
                self.channel = Some(label);
                self.channel_q = level;
            }
        }
        Ok(())
    }

    pub fn require_target(&self) -> CliResult<(usize, usize)> {
        match (self.n, self.m) {
            (Some(n), Some(m)) => Ok((n, m)),
            _ => Err(CliError::config(
                "a target is required: pass --target n,m or set n/m in the config file"
                    .to_string(),
            )),
        }
    }

    pub fn spec(&self) -> CliResult<ProtocolSpec> {
        let (n, m) = self.require_target()?;
        Ok(ProtocolSpec::new(n, m, self.schedule)?)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig<f64> {
        OptimizerConfig {
            grid_spacing: self.grid_spacing,
            rounds_max: self.rounds_max,
            fidelity_kind: self.loss_kind,
            bounds: Bounds::gamma_defaults(),
            local: LocalConfig {
                maxiter: self.maxiter,
                ftol: self.ftol,
                ..LocalConfig::default()
            },
            extra_starts: Vec::new(),
            jitter: (self.jitter_count > 0).then(|| JitterSpec {
                count: self.jitter_count,
                seed: self.seed,
                scale: self.jitter_scale,
            }),
            phase_starts: self.phase_starts,
            phase_seed: self.seed,
        }
    }

    pub fn noise_config(&self) -> CliResult<NoiseConfig<f64>> {
        let channel = match self.channel {
            None | Some(ChannelLabel::Identity) => None,
            Some(label) => Some(make_channel(label, self.channel_q)?),
        };
        let engine = match self.engine {
            EngineChoice::DensityMatrix => NoiseEngine::DensityMatrix,
            EngineChoice::Trajectories(count) => {
                NoiseEngine::Trajectories { count, seed: self.seed }
            }
        };
        let noise = NoiseConfig {
            p_miss: self.p_miss,
            channel,
            policy: self.policy,
            engine,
            drop_intra: self.drop_intra,
        };
        noise.validate()?;
        Ok(noise)
    }

    /// Worker-count resolution: flag/config, then the environment
    /// variable, else the runtime default.
    pub fn resolve_workers(&self) -> Option<usize> {
        self.workers.or_else(|| {
            std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok())
        })
    }

    /// The hashed, semantic portion of the resolved configuration —
    /// everything that influences results. Execution details (command
    /// label, output directory, worker count) are excluded so identical
    /// physics hashes identically regardless of where or how wide it ran.
    pub fn semantic_text(&self) -> String {
        fn opt_num<T: std::fmt::Display>(v: &Option<T>, unset: &str) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| unset.to_string())
        }
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("axis", self.axis.map(|a| a.name().to_string()).unwrap_or_else(|| "none".into()));
        push("channel", self.channel.map(|c| c.name().to_string()).unwrap_or_else(|| "none".into()));
        push("channel_q", num(self.channel_q));
        push("drop_intra", self.drop_intra.to_string());
        push("engine", self.engine.label());
        push("fidelity_floor", self.fidelity_floor.map(num).unwrap_or_else(|| "none".into()));
        push("ftol", num(self.ftol));
        push("gamma_in", self.gamma_in.map(num).unwrap_or_else(|| "none".into()));
        push("gamma_sh", self.gamma_sh.map(num).unwrap_or_else(|| "none".into()));
        push("grid_spacing", num(self.grid_spacing));
        push("jitter_count", self.jitter_count.to_string());
        push("jitter_scale", num(self.jitter_scale));
        push(
            "levels",
            self.levels.iter().map(|&l| num(l)).collect::<Vec<_>>().join(","),
        );
        push("loss", self.loss_kind.name().to_string());
        push("m", opt_num(&self.m, "none"));
        push("max_n", self.max_n.to_string());
        push("maxiter", self.maxiter.to_string());
        push("n", opt_num(&self.n, "none"));
        push("p_miss", num(self.p_miss));
        push("phase_starts", self.phase_starts.to_string());
        push("policy", self.policy.name().to_string());
        push("rounds", opt_num(&self.rounds, "auto"));
        push("rounds_max", opt_num(&self.rounds_max, "auto"));
        push("schedule", self.schedule.name().to_string());
        push("seed", self.seed.to_string());
        push(
            "table",
            self.table
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        push("threshold", num(self.threshold));
        s
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.semantic_text().as_bytes())
    }

    /// Create the output directory and write the fully-resolved config
    /// (semantic section + execution section + hash). Returns the hash.
    pub fn write_resolved(&self) -> CliResult<String> {
        fs::create_dir_all(&self.out_dir)?;
        let hash = self.config_hash();
        let mut text = String::from("# resolved run configuration (semantic section, hashed)\n");
        text.push_str(&self.semantic_text());
        text.push_str("# execution (not hashed)\n");
        text.push_str(&format!("command = {}\n", self.command));
        text.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        text.push_str(&format!(
            "workers = {}\n",
            self.resolve_workers().map(|w| w.to_string()).unwrap_or_else(|| "auto".into())
        ));
        text.push_str(&format!("config_hash = {hash}\n"));
        fs::write(self.out_dir.join("resolved_config.txt"), text)?;
        Ok(hash)
    }

    /// Simulation horizon: explicit rounds, else the optimizer horizon,
    /// else the protocol default.
    pub fn resolve_rounds(&self, spec: &ProtocolSpec) -> usize {
        self.rounds
            .or(self.rounds_max)
            .unwrap_or_else(|| spec.default_rounds_max())
    }
}
