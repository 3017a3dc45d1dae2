//! Config-file loading and flag merging.
//!
//! The config is sectioned TOML whose keys mirror the calibration fields
//! one to one; anything omitted falls back to the standard calibration.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use regmkt::calibration::{Calibration, MispricingSign, RegulatoryRegime, ReturnConvention, Switches};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub calibration: CalibrationSection,
    pub regime: RegimeSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
    pub switches: SwitchesSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub n_agents: Option<usize>,
    pub n_shares: Option<f64>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub initial_wealth: Option<f64>,
    pub lambda_max: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub fundamental_value: Option<f64>,
    pub eps_sigma: Option<f64>,
    pub eps_corr: Option<f64>,
    pub var_quantile: Option<f64>,
    pub var_window_base: Option<f64>,
    pub tobin_tax: Option<f64>,
    pub gamma_scale: Option<f64>,
    pub default_fraction: Option<f64>,
    pub default_timeout: Option<u32>,
    pub n_timesteps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSection {
    pub ssban: Option<bool>,
    pub var_limit: Option<bool>,
    pub tax_level: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_runs: Option<u64>,
    pub tax_levels: Option<Vec<f64>>,
    pub master_seed: Option<u64>,
    pub parallelism: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    pub per_run_trajectory: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchesSection {
    pub mispricing_sign: Option<MispricingSign>,
    pub tax_deduction: Option<bool>,
    pub return_convention: Option<ReturnConvention>,
    pub burn_in: Option<usize>,
    pub initial_log_perceived: Option<f64>,
}

/// Everything a command needs, after merging defaults, the config file,
/// the environment, and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub calibration: Calibration,
    pub regime: RegulatoryRegime,
    pub switches: Switches,
    pub tax_deduction: bool,
    pub n_runs: u64,
    pub tax_levels: Option<Vec<f64>>,
    pub master_seed: u64,
    pub jobs: Option<usize>,
    pub out_dir: PathBuf,
    pub per_run_trajectory: bool,
}

/// Flag-level overrides collected by the argument parser.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    /// Comma-separated subset of {ssban, var, tt}.
    pub regime: Option<String>,
    pub tax_level: Option<f64>,
    pub mispricing_sign: Option<MispricingSign>,
    pub return_convention: Option<ReturnConvention>,
    pub tax_deduction: Option<bool>,
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Resolved, CliError> {
    let file: ConfigFile = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    resolve(file, overrides)
}

fn resolve(file: ConfigFile, ov: &Overrides) -> Result<Resolved, CliError> {
    let mut cal = Calibration::default();
    let c = &file.calibration;
    if let Some(v) = c.n_agents {
        cal.n_agents = v;
        // Derived defaults follow the base fields unless set explicitly.
        cal.n_shares = 3.0 * v as f64;
    }
    if let Some(v) = c.beta_max {
        cal.beta_max = v;
        cal.var_window_base = 10.0 * v;
    }
    if let Some(v) = c.n_shares {
        cal.n_shares = v;
    }
    if let Some(v) = c.beta_min {
        cal.beta_min = v;
    }
    if let Some(v) = c.initial_wealth {
        cal.initial_wealth = v;
    }
    if let Some(v) = c.lambda_max {
        cal.lambda_max = v;
    }
    if let Some(v) = c.tau {
        cal.tau = v;
    }
    if let Some(v) = c.rho {
        cal.rho = v;
    }
    if let Some(v) = c.fundamental_value {
        cal.fundamental_value = v;
    }
    if let Some(v) = c.eps_sigma {
        cal.eps_sigma = v;
    }
    if let Some(v) = c.eps_corr {
        cal.eps_corr = v;
    }
    if let Some(v) = c.var_quantile {
        cal.var_quantile = v;
    }
    if let Some(v) = c.var_window_base {
        cal.var_window_base = v;
    }
    if let Some(v) = c.tobin_tax {
        cal.tobin_tax = v;
    }
    if let Some(v) = c.gamma_scale {
        cal.gamma_scale = v;
    }
    if let Some(v) = c.default_fraction {
        cal.default_fraction = v;
    }
    if let Some(v) = c.default_timeout {
        cal.default_timeout = v;
    }
    if let Some(v) = c.n_timesteps {
        cal.n_timesteps = v;
    }
    if let Some(v) = ov.tax_level {
        cal.tobin_tax = v;
    }
    cal.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let mut regime = RegulatoryRegime {
        ssban: file.regime.ssban.unwrap_or(false),
        var_limit: file.regime.var_limit.unwrap_or(false),
        tax_level: file.regime.tax_level.unwrap_or(0.0),
    };
    if let Some(spec) = &ov.regime {
        regime = parse_regime(spec, cal.tobin_tax)?;
    }
    if let Some(level) = ov.tax_level {
        if regime.tax_active() || ov.regime.as_deref().is_some_and(|s| s.contains("tt")) {
            regime.tax_level = level;
        }
    }
    regime.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let switches = Switches {
        mispricing_sign: ov
            .mispricing_sign
            .or(file.switches.mispricing_sign)
            .unwrap_or(MispricingSign::PerceivedMinusPrice),
        return_convention: ov
            .return_convention
            .or(file.switches.return_convention)
            .unwrap_or(ReturnConvention::Log),
        burn_in: file.switches.burn_in.unwrap_or(0),
        initial_log_perceived: file.switches.initial_log_perceived,
    };
    let tax_deduction = ov.tax_deduction.or(file.switches.tax_deduction).unwrap_or(false);

    let env_seed = std::env::var("REGMKT_SEED").ok().and_then(|s| s.parse::<u64>().ok());
    let master_seed = ov.seed.or(file.experiment.master_seed).or(env_seed).unwrap_or(0);

    let n_runs = ov.runs.or(file.experiment.n_runs).unwrap_or(100);
    if n_runs < 1 {
        return Err(CliError::Config("n_runs must be >= 1".into()));
    }
    if let Some(levels) = &file.experiment.tax_levels {
        if levels.iter().any(|t| *t < 0.0) {
            return Err(CliError::Config("tax_levels must be non-negative".into()));
        }
    }

    Ok(Resolved {
        calibration: cal,
        regime,
        switches,
        tax_deduction,
        n_runs,
        tax_levels: file.experiment.tax_levels,
        master_seed,
        jobs: ov.jobs.or(file.experiment.parallelism),
        out_dir: ov.out.clone().or(file.output.directory).unwrap_or_else(|| PathBuf::from(".")),
        per_run_trajectory: file.output.per_run_trajectory.unwrap_or(false),
    })
}

/// Parse `--regime ssban,var,tt` into flags; `tt` activates the tax at the
/// calibrated level.
fn parse_regime(spec: &str, tobin_tax: f64) -> Result<RegulatoryRegime, CliError> {
    let mut regime = RegulatoryRegime::baseline();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part {
            "ssban" => regime.ssban = true,
            "var" => regime.var_limit = true,
            "tt" => regime.tax_level = tobin_tax,
            "none" => {}
            other => {
                return Err(CliError::Config(format!(
                    "unknown regime flag '{other}' (expected ssban, var, tt)"
                )))
            }
        }
    }
    Ok(regime)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_paper_calibration() {
        let resolved = load(None, &Overrides::default()).unwrap();
        assert_eq!(resolved.calibration, Calibration::default());
        assert_eq!(resolved.regime, RegulatoryRegime::baseline());
        assert_eq!(resolved.n_runs, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file: Result<ConfigFile, _> = toml::from_str("[calibration]\nbogus = 3\n");
        assert!(file.is_err());
    }

    #[test]
    fn derived_defaults_follow_base_fields() {
        let file: ConfigFile = toml::from_str("[calibration]\nn_agents = 10\n").unwrap();
        let resolved = resolve(file, &Overrides::default()).unwrap();
        assert_eq!(resolved.calibration.n_shares, 30.0);
        let file: ConfigFile =
            toml::from_str("[calibration]\nn_agents = 10\nn_shares = 99.0\n").unwrap();
        let resolved = resolve(file, &Overrides::default()).unwrap();
        assert_eq!(resolved.calibration.n_shares, 99.0);
    }

    #[test]
    fn invalid_calibration_names_field() {
        let file: ConfigFile = toml::from_str("[calibration]\ntau = 1.5\n").unwrap();
        let err = resolve(file, &Overrides::default()).unwrap_err();
        match err {
            CliError::Config(msg) => assert!(msg.contains("tau"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn regime_flag_parsing() {
        let r = parse_regime("ssban,tt", 0.003).unwrap();
        assert!(r.ssban && !r.var_limit);
        assert_eq!(r.tax_level, 0.003);
        assert!(parse_regime("bogus", 0.003).is_err());
    }
}
