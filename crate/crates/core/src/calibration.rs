//! Model constants, regulatory regime flags, and sensitivity switches.
//!
//! The default [`Calibration`] reproduces the standard weekly-data setup:
//! 150 leveraged value investors trading 450 shares of a single asset over
//! 4000 timesteps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// All model constants for one simulation run.
///
/// Fields are plain numbers so they can be loaded from a config file
/// one-to-one; call [`Calibration::validate`] after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Number of agents (N^a).
    pub n_agents: usize,
    /// Total number of shares outstanding (N^s).
    pub n_shares: f64,
    /// Lower bound of the aggressiveness range.
    pub beta_min: f64,
    /// Upper bound of the aggressiveness range.
    pub beta_max: f64,
    /// Initial wealth of every agent (W_0).
    pub initial_wealth: f64,
    /// Maximum leverage: asset exposure divided by own funds.
    pub lambda_max: f64,
    /// Fraction of agents that never take short positions.
    pub tau: f64,
    /// Persistence of the perceived-value process.
    pub rho: f64,
    /// True fundamental value of the asset (V).
    pub fundamental_value: f64,
    /// Per-step scale of the log-perception shocks.
    pub eps_sigma: f64,
    /// Cross-agent equicorrelation of the perception shocks.
    pub eps_corr: f64,
    /// Quantile used for the value-at-risk estimate.
    pub var_quantile: f64,
    /// Base observation count for VaR windows; agent i uses
    /// round(var_window_base / beta_i) observations.
    pub var_window_base: f64,
    /// Per-transaction tax rate applied when the tax overlay is active.
    pub tobin_tax: f64,
    /// Coefficient of the no-trade threshold: Gamma_i = beta_i * gamma_scale * tax.
    pub gamma_scale: f64,
    /// Default trigger as a fraction of initial wealth.
    pub default_fraction: f64,
    /// Timesteps an agent stays out of the market after a default.
    pub default_timeout: u32,
    /// Timesteps per run, including the deterministic opening step.
    pub n_timesteps: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        let n_agents = 150;
        let beta_max = 50.0;
        Calibration {
            n_agents,
            n_shares: 3.0 * n_agents as f64,
            beta_min: 10.0,
            beta_max,
            initial_wealth: 2.0,
            lambda_max: 10.0,
            tau: 0.95,
            rho: 0.99,
            fundamental_value: 1.0,
            eps_sigma: 0.025,
            eps_corr: 0.4,
            var_quantile: 0.99,
            var_window_base: 10.0 * beta_max,
            tobin_tax: 0.003,
            gamma_scale: 1.0 / 0.14,
            default_fraction: 0.1,
            default_timeout: 100,
            n_timesteps: 4000,
        }
    }
}

/// A calibration field violating its allowed range. The field name is kept
/// verbatim so config errors can point at the offending key.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid calibration: {field} {reason} (got {value})")]
pub struct CalibrationError {
    pub field: &'static str,
    pub reason: &'static str,
    pub value: f64,
}

impl Calibration {
    /// Check every invariant; the error names the first offending field.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let err = |field, reason, value| Err(CalibrationError { field, reason, value });
        if self.n_agents < 1 {
            return err("n_agents", "must be >= 1", self.n_agents as f64);
        }
        if !(self.n_shares > 0.0) {
            return err("n_shares", "must be > 0", self.n_shares);
        }
        if !(self.beta_min > 0.0) {
            return err("beta_min", "must be > 0", self.beta_min);
        }
        if self.beta_min > self.beta_max {
            return err("beta_max", "must be >= beta_min", self.beta_max);
        }
        if !(self.initial_wealth > 0.0) {
            return err("initial_wealth", "must be > 0", self.initial_wealth);
        }
        if !(self.lambda_max > 1.0) {
            return err("lambda_max", "must be > 1", self.lambda_max);
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return err("tau", "must lie in [0, 1]", self.tau);
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return err("rho", "must lie in (0, 1)", self.rho);
        }
        if !(self.fundamental_value > 0.0) {
            return err("fundamental_value", "must be > 0", self.fundamental_value);
        }
        if !(self.eps_sigma > 0.0) {
            return err("eps_sigma", "must be > 0", self.eps_sigma);
        }
        // Valid equicorrelation; the sampler additionally requires corr >= 0
        // (see stochastic::NoiseSpec).
        let corr_lo = if self.n_agents > 1 {
            -1.0 / (self.n_agents as f64 - 1.0)
        } else {
            0.0
        };
        if self.n_agents > 1 && !(self.eps_corr > corr_lo && self.eps_corr < 1.0) {
            return err("eps_corr", "must be a valid equicorrelation in (-1/(n-1), 1)", self.eps_corr);
        }
        if !(self.var_quantile > 0.0 && self.var_quantile < 1.0) {
            return err("var_quantile", "must lie in (0, 1)", self.var_quantile);
        }
        if !(self.var_window_base >= 2.0) {
            return err("var_window_base", "must be >= 2", self.var_window_base);
        }
        if !(self.tobin_tax >= 0.0) {
            return err("tobin_tax", "must be >= 0", self.tobin_tax);
        }
        if !(self.gamma_scale >= 0.0) {
            return err("gamma_scale", "must be >= 0", self.gamma_scale);
        }
        if !(self.default_fraction > 0.0 && self.default_fraction < 1.0) {
            return err("default_fraction", "must lie in (0, 1)", self.default_fraction);
        }
        if self.n_timesteps < 1 {
            return err("n_timesteps", "must be >= 1", self.n_timesteps as f64);
        }
        Ok(())
    }

    /// Aggressiveness of agent `i`: evenly spaced over [beta_min, beta_max]
    /// by index. A single agent gets the midpoint.
    pub fn agent_beta(&self, i: usize) -> f64 {
        if self.n_agents == 1 {
            return 0.5 * (self.beta_min + self.beta_max);
        }
        let frac = i as f64 / (self.n_agents as f64 - 1.0);
        self.beta_min + frac * (self.beta_max - self.beta_min)
    }

    /// Whether agent `i` may take short positions. The first
    /// floor(tau * n_agents) agents by index never short.
    pub fn agent_shorts_allowed(&self, i: usize) -> bool {
        i >= (self.tau * self.n_agents as f64).floor() as usize
    }

    /// VaR window length for an agent with aggressiveness `beta`,
    /// clipped to [2, n_timesteps].
    pub fn var_window_len(&self, beta: f64) -> usize {
        let raw = (self.var_window_base / beta).round() as usize;
        raw.clamp(2, self.n_timesteps.max(2))
    }

    /// No-trade threshold Gamma_i for a given aggressiveness and tax level.
    pub fn gamma(&self, beta: f64, tax_level: f64) -> f64 {
        beta * self.gamma_scale * tax_level
    }

    /// Wealth level below which an agent defaults.
    pub fn default_threshold(&self) -> f64 {
        self.default_fraction * self.initial_wealth
    }
}

/// Which regulatory overlays are in force for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulatoryRegime {
    /// Short-selling ban: demand is floored at zero for every agent.
    pub ssban: bool,
    /// Value-at-risk limit: portfolio VaR may not exceed wealth.
    pub var_limit: bool,
    /// Transaction-tax rate; 0 disables the tax overlay.
    pub tax_level: f64,
}

impl RegulatoryRegime {
    /// Unregulated market.
    pub fn baseline() -> Self {
        RegulatoryRegime { ssban: false, var_limit: false, tax_level: 0.0 }
    }

    /// Whether the transaction-tax overlay is active.
    pub fn tax_active(&self) -> bool {
        self.tax_level > 0.0
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.tax_level >= 0.0) {
            return Err(CalibrationError {
                field: "tax_level",
                reason: "must be >= 0",
                value: self.tax_level,
            });
        }
        Ok(())
    }
}

impl Default for RegulatoryRegime {
    fn default() -> Self {
        Self::baseline()
    }
}

/// Sign convention of the mispricing signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MispricingSign {
    /// m = perceived value - price (default; demand falls in price).
    PerceivedMinusPrice,
    /// m = price - perceived value (sensitivity switch).
    PriceMinusPerceived,
}

/// How returns are computed from the price series, both for metrics and
/// for VaR estimation windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnConvention {
    /// r_t = ln(p_t / p_{t-1}) (default).
    Log,
    /// r_t = p_t / p_{t-1} - 1.
    Simple,
}

impl ReturnConvention {
    pub fn step_return(&self, prev_price: f64, price: f64) -> f64 {
        match self {
            ReturnConvention::Log => (price / prev_price).ln(),
            ReturnConvention::Simple => price / prev_price - 1.0,
        }
    }
}

/// Sensitivity switches; the defaults reproduce the reference setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Switches {
    pub mispricing_sign: MispricingSign,
    pub return_convention: ReturnConvention,
    /// Extra steps simulated before recording starts; 0 disables burn-in.
    pub burn_in: usize,
    /// Starting log perceived value; None means log(fundamental_value).
    pub initial_log_perceived: Option<f64>,
}

impl Default for Switches {
    fn default() -> Self {
        Switches {
            mispricing_sign: MispricingSign::PerceivedMinusPrice,
            return_convention: ReturnConvention::Log,
            burn_in: 0,
            initial_log_perceived: None,
        }
    }
}
