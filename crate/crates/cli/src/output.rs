//! File writers. Every output embeds the tool version, the master seed,
//! and a hash of the resolved configuration so runs can be traced back to
//! their inputs; identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::config::Resolved;
use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// FNV-1a over the canonical rendering of every setting that determines
/// simulated content. Output location and parallelism are excluded: they
/// cannot change a result.
pub fn config_hash(resolved: &Resolved) -> u64 {
    let key = format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
        resolved.calibration,
        resolved.regime,
        resolved.switches,
        resolved.tax_deduction,
        resolved.n_runs,
        resolved.tax_levels,
        resolved.master_seed,
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in key.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub struct OutputContext {
    pub dir: PathBuf,
    pub master_seed: u64,
    pub config_hash: u64,
}

impl OutputContext {
    pub fn new(resolved: &Resolved) -> Result<Self, CliError> {
        fs::create_dir_all(&resolved.out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create output dir: {e}")))?;
        Ok(OutputContext {
            dir: resolved.out_dir.clone(),
            master_seed: resolved.master_seed,
            config_hash: config_hash(resolved),
        })
    }

    pub fn header_line(&self) -> String {
        format!(
            "# regmkt {} seed={} config={:016x}",
            TOOL_VERSION, self.master_seed, self.config_hash
        )
    }

    /// Write a CSV: a provenance comment line, the header row, then rows.
    pub fn write_csv(
        &self,
        name: &str,
        columns: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        let _ = writeln!(text, "{}", self.header_line());
        let _ = writeln!(text, "{}", columns.join(","));
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            let _ = writeln!(text, "{}", row.join(","));
        }
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("write {name}: {e}")))?;
        Ok(path)
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
        let wrapped = serde_json::json!({
            "tool_version": TOOL_VERSION,
            "master_seed": self.master_seed,
            "config_hash": format!("{:016x}", self.config_hash),
            "metrics": value,
        });
        let text = serde_json::to_string_pretty(&wrapped)
            .map_err(|e| CliError::Runtime(format!("serialize {name}: {e}")))?;
        let path = self.dir.join(name);
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::Runtime(format!("write {name}: {e}")))?;
        Ok(path)
    }
}

/// Shortest-roundtrip decimal rendering; empty string for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn fmt_bool(v: bool) -> String {
    if v { "1".into() } else { "0".into() }
}
