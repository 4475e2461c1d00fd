//! Published reference controllers shipped with the tool, with an
//! integrity checksum so verification never runs against a silently
//! edited copy.

use sha2::{Digest, Sha256};

use crate::errors::{CliError, CliResult};

pub const BUNDLED_TABLE: &str = include_str!("../data/reference_controls.csv");

/// SHA-256 of the bundled CSV, pinned at transcription time.
pub const BUNDLED_TABLE_SHA256: &str =
    "f7f45bce342364bfe1679077a43cc9128c708635d8b0ed22339dd2fef79a6561";

const HEADER: &str = "n,m,gamma_sh,gamma_in,rounds,rz_angles";

/// One published controller: target, collision strengths, round count,
/// local phase-rotation angles.
#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub n: usize,
    pub m: usize,
    pub gamma_sh: f64,
    pub gamma_in: f64,
    pub rounds: usize,
    pub rz_angles: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").expect("hex formatting");
    }
    out
}

pub fn bundled_rows() -> CliResult<Vec<ReferenceRow>> {
    let actual = sha256_hex(BUNDLED_TABLE.as_bytes());
    if actual != BUNDLED_TABLE_SHA256 {
        return Err(CliError::config(format!(
            "bundled reference table checksum mismatch: expected {BUNDLED_TABLE_SHA256}, got {actual}"
        )));
    }
    parse_table(BUNDLED_TABLE)
}

pub fn parse_table(text: &str) -> CliResult<Vec<ReferenceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        other => {
            return Err(CliError::config(format!(
                "reference table must start with header '{HEADER}', got {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CliError::config(format!(
                "reference table line {}: expected 6 fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            CliError::config(format!("reference table line {}: invalid {what}", idx + 1))
        };
        let n: usize = fields[0].parse().map_err(|_| bad("n"))?;
        let m: usize = fields[1].parse().map_err(|_| bad("m"))?;
        let gamma_sh: f64 = fields[2].parse().map_err(|_| bad("gamma_sh"))?;
        let gamma_in: f64 = fields[3].parse().map_err(|_| bad("gamma_in"))?;
        let rounds: usize = fields[4].parse().map_err(|_| bad("rounds"))?;
        let rz_angles: Vec<f64> = fields[5]
            .split(';')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("rz_angles"))?;
        if rz_angles.len() != n {
            return Err(CliError::config(format!(
                "reference table line {}: {} angles for n = {n}",
                idx + 1,
                rz_angles.len()
            )));
        }
        if rounds == 0 {
            return Err(bad("rounds (must be >= 1)"));
        }
        rows.push(ReferenceRow { n, m, gamma_sh, gamma_in, rounds, rz_angles });
    }
    if rows.is_empty() {
        return Err(CliError::config("reference table has no data rows".to_string()));
    }
    Ok(rows)
}
