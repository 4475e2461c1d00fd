//! `dicke optimize`: multistart controller synthesis, candidate-wise
//! phase alignment, JSON-line record, quality gate.

use std::fs;
use std::time::Instant;

use dicke_core::{multistart_optimize, optimize_aligned, optimize_phases, FidelityKind};

use crate::config::RunConfig;
use crate::errors::{CliError, CliResult};
use crate::fmt::{angle, num};
use crate::records::{NoiseDescriptor, ResultRecord};

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let spec = cfg.spec()?;
    let optcfg = cfg.optimizer_config();
    let noise = cfg.noise_config()?;
    let hash = cfg.write_resolved()?;

    // Noise-free magnitude runs select across all refined candidates by
    // post-rotation fidelity; otherwise the plain loss incumbent wins
    // (with a single alignment pass when the run is still noise-free).
    let (sol, starts) = if noise.is_trivial() && cfg.loss_kind == FidelityKind::Magnitude {
        let outcome = optimize_aligned(&spec, &optcfg)?;
        (outcome.solution, outcome.starts)
    } else {
        let outcome = multistart_optimize(&spec, &optcfg, Some(&noise))?;
        let mut sol = outcome.solution;
        if noise.is_trivial() {
            let (angles, aligned) =
                optimize_phases(&spec, sol.gamma_in, sol.gamma_sh, sol.best_round, &optcfg)?;
            sol.fidelity_phase_aligned = Some(aligned);
            sol.rz_angles = Some(angles);
        }
        (sol, outcome.starts)
    };

    let wall_ms = started.elapsed().as_millis() as u64;
    let record = ResultRecord::from_solution(
        &spec,
        cfg,
        &sol,
        NoiseDescriptor::from_config(cfg),
        wall_ms,
        &hash,
    );
    let path = cfg.out_dir.join("record.jsonl");
    fs::write(&path, format!("{}\n", record.to_line()))?;

    println!(
        "optimized D({},{}) [{}]: gamma_in={} gamma_sh={} round={} loss={} ({} starts)",
        spec.n(),
        spec.m(),
        spec.variant().name(),
        angle(sol.gamma_in),
        angle(sol.gamma_sh),
        sol.best_round,
        num(sol.loss),
        starts
    );
    match sol.fidelity_phase_aligned {
        Some(f) => println!("phase-aligned fidelity: {}", num(f)),
        None => println!("fidelity (1 - loss): {}", num(1.0 - sol.loss)),
    }
    println!("record: {}", path.display());
    println!("config_hash: {hash}");

    if let Some(floor) = cfg.fidelity_floor {
        let achieved = sol.fidelity_phase_aligned.unwrap_or(1.0 - sol.loss);
        if achieved < floor {
            return Err(CliError::gate(format!(
                "fidelity {} is below the required floor {}",
                num(achieved),
                num(floor)
            )));
        }
    }
    Ok(())
}
