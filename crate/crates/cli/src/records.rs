//! JSON-lines result records persisted by optimize / sweep / landscape.

use dicke_core::{ControlSolution64, ProtocolSpec, SweepAxis};
use serde::Serialize;

use crate::config::RunConfig;
use crate::fmt::sig12;

pub const SCHEMA_VERSION: u32 = 1;

/// Noise settings a record was produced under.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseDescriptor {
    pub p_miss: f64,
    pub channel: String,
    pub q: f64,
    pub policy: String,
    pub engine: String,
    pub drop_intra: bool,
}

impl NoiseDescriptor {
    pub fn from_config(cfg: &RunConfig) -> Self {
        NoiseDescriptor {
            p_miss: cfg.p_miss,
            channel: cfg.channel.map(|c| c.name().to_string()).unwrap_or_else(|| "none".into()),
            q: cfg.channel_q,
            policy: cfg.policy.name().to_string(),
            engine: cfg.engine.label(),
            drop_intra: cfg.drop_intra,
        }
    }

    /// Descriptor for one sweep level: the swept axis overrides the base.
    pub fn at_level(cfg: &RunConfig, axis: SweepAxis, level: f64) -> Self {
        let mut d = Self::from_config(cfg);
        match axis {
            SweepAxis::PMiss => d.p_miss = level,
            SweepAxis::Channel(label) => {
                d.channel = label.name().to_string();
                d.q = level;
            }
        }
        d
    }
}

/// One solved controller, serialized as a single JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRecord {
    pub schema: u32,
    pub n: usize,
    pub m: usize,
    pub schedule: String,
    pub gamma_sh: f64,
    pub gamma_in: f64,
    pub rounds: usize,
    pub loss: f64,
    pub fidelity: f64,
    pub rz_angles: Option<Vec<f64>>,
    pub fidelity_phase_aligned: Option<f64>,
    pub noise: NoiseDescriptor,
    pub wall_ms: u64,
    pub config_hash: String,
}

impl ResultRecord {
    pub fn from_solution(
        spec: &ProtocolSpec,
        cfg: &RunConfig,
        sol: &ControlSolution64,
        noise: NoiseDescriptor,
        wall_ms: u64,
        config_hash: &str,
    ) -> Self {
        ResultRecord {
            schema: SCHEMA_VERSION,
            n: spec.n(),
            m: spec.m(),
            schedule: cfg.schedule.name().to_string(),
            gamma_sh: sig12(sol.gamma_sh),
            gamma_in: sig12(sol.gamma_in),
            rounds: sol.best_round,
            loss: sol.loss,
            fidelity: 1.0 - sol.loss,
            rz_angles: sol
                .rz_angles
                .as_ref()
                .map(|a| a.0.iter().map(|&t| sig12(t)).collect()),
            fidelity_phase_aligned: sol.fidelity_phase_aligned,
            noise,
            wall_ms,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
