//! `dicke landscape`: loss over the full coarse control grid, plus the
//! refined incumbent, for plotting.

use std::fs;
use std::time::Instant;

use dicke_core::multistart_optimize;

use crate::config::RunConfig;
use crate::errors::CliResult;
use crate::fmt::{angle, num};
use crate::records::{NoiseDescriptor, ResultRecord};

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let started = Instant::now();
    let spec = cfg.spec()?;
    let optcfg = cfg.optimizer_config();
    let noise = cfg.noise_config()?;
    let hash = cfg.write_resolved()?;

    let outcome = multistart_optimize(&spec, &optcfg, Some(&noise))?;
    let sol = &outcome.solution;

    let mut csv = String::from("gamma_in,gamma_sh,loss,best_round\n");
    for p in &outcome.grid {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            angle(p.gamma_in),
            angle(p.gamma_sh),
            num(p.loss),
            p.best_round
        ));
    }
    let grid_path = cfg.out_dir.join("landscape.csv");
    fs::write(&grid_path, csv)?;

    let wall_ms = started.elapsed().as_millis() as u64;
    let record = ResultRecord::from_solution(
        &spec,
        cfg,
        sol,
        NoiseDescriptor::from_config(cfg),
        wall_ms,
        &hash,
    );
    let record_path = cfg.out_dir.join("record.jsonl");
    fs::write(&record_path, format!("{}\n", record.to_line()))?;

    let grid_min = outcome
        .grid
        .iter()
        .map(|p| p.loss)
        .fold(f64::INFINITY, f64::min);
    println!(
        "landscape for D({},{}) [{}]: {} grid points (spacing {})",
        spec.n(),
        spec.m(),
        spec.variant().name(),
        outcome.grid.len(),
        num(cfg.grid_spacing)
    );
    println!(
        "incumbent after refinement: gamma_in={} gamma_sh={} round={} loss={}",
        angle(sol.gamma_in),
        angle(sol.gamma_sh),
        sol.best_round,
        num(sol.loss)
    );
    println!("coarsest grid loss: {}", num(grid_min));
    println!("grid: {}", grid_path.display());
    println!("record: {}", record_path.display());
    println!("config_hash: {hash}");
    Ok(())
}
