//! Per-run outcome metrics and stylized-facts diagnostics: returns,
//! volatility, liquidity, tail measures, autocorrelations, and the
//! plot-ready tables behind the distribution figures.

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::calibration::{Calibration, ReturnConvention};
use crate::engine::RunResult;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("price series too short: need at least {needed}, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("non-positive price at index {index}")]
    NonPositivePrice { index: usize },
    #[error("metric undefined: {0}")]
    UndefinedSignal(&'static str),
}

/// Log returns r_t = ln(p_t / p_{t-1}); length is one less than `prices`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>, MetricsError> {
    returns_by(prices, ReturnConvention::Log)
}

/// Returns under the chosen convention.
pub fn returns_by(prices: &[f64], convention: ReturnConvention) -> Result<Vec<f64>, MetricsError> {
    if prices.len() < 2 {
        return Err(MetricsError::SeriesTooShort { needed: 2, got: prices.len() });
    }
    if let Some(index) = prices.iter().position(|p| !(*p > 0.0)) {
        return Err(MetricsError::NonPositivePrice { index });
    }
    Ok(prices
        .windows(2)
        .map(|w| convention.step_return(w[0], w[1]))
        .collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the n-1 denominator; exactly 0 for a
/// constant series (including series of length 1).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 || xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Excess kurtosis about the sample mean (population moment ratio minus 3).
pub fn excess_kurtosis(xs: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() < 4 {
        return Err(MetricsError::SeriesTooShort { needed: 4, got: xs.len() });
    }
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4: f64 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Err(MetricsError::UndefinedSignal("kurtosis of a constant series"));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Tail-risk measure: excess kurtosis of the set formed by the negative
/// returns together with their mirror images. The mean of that set is zero
/// by construction, so raw moments over the negatives suffice.
pub fn flipped_kurtosis(returns: &[f64]) -> Result<f64, MetricsError> {
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    let mut k = 0usize;
    for &r in returns.iter().filter(|r| **r < 0.0) {
        m2 += r * r;
        m4 += r * r * r * r;
        k += 1;
    }
    if k < 4 {
        return Err(MetricsError::UndefinedSignal("fewer than 4 negative returns"));
    }
    let kf = k as f64;
    m2 /= kf;
    m4 /= kf;
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Average traded shares per agent per step over a timestep-by-agent
/// holdings matrix.
pub fn liquidity(demand_matrix: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let steps = demand_matrix.len();
    if steps < 2 {
        return Err(MetricsError::SeriesTooShort { needed: 2, got: steps });
    }
    let n_agents = demand_matrix[0].len();
    let volume: f64 = demand_matrix
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).sum::<f64>())
        .sum();
    Ok(volume / ((steps as f64 - 1.0) * n_agents as f64))
}

/// Liquidity from an online-accumulated trade volume.
pub fn liquidity_from_volume(trade_volume: f64, steps: usize, n_agents: usize) -> f64 {
    if steps < 2 || n_agents == 0 {
        return f64::NAN;
    }
    trade_volume / ((steps as f64 - 1.0) * n_agents as f64)
}

/// Sample autocorrelations at lags 1..=max_lag with the usual
/// 95% band of +-1.96/sqrt(n).
#[derive(Debug, Clone, PartialEq)]
pub struct Acf {
    pub values: Vec<f64>,
    pub band: f64,
}

pub fn acf(series: &[f64], max_lag: usize) -> Result<Acf, MetricsError> {
    let n = series.len();
    if n <= max_lag {
        return Err(MetricsError::SeriesTooShort { needed: max_lag + 1, got: n });
    }
    let m = mean(series);
    let denom: f64 = series.iter().map(|x| (x - m) * (x - m)).sum();
    if denom == 0.0 {
        return Err(MetricsError::UndefinedSignal("autocorrelation of a constant series"));
    }
    let values = (1..=max_lag)
        .map(|lag| {
            let num: f64 = series[lag..]
                .iter()
                .zip(series)
                .map(|(a, b)| (a - m) * (b - m))
                .sum();
            num / denom
        })
        .collect();
    Ok(Acf { values, band: 1.96 / (n as f64).sqrt() })
}

/// One point of the kernel-density table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPoint {
    pub x: f64,
    pub empirical: f64,
    pub normal_ref: f64,
}

/// One probability point of the quantile-quantile table. The reference
/// quantiles are scaled to the sample mean and standard deviation; the
/// Student-t(7) quantile is standardized to unit variance first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QqPoint {
    pub prob: f64,
    pub empirical: f64,
    pub normal_q: f64,
    pub student_t7_q: f64,
}

/// Numeric tables behind the return-distribution diagnostics: kernel
/// density vs a matched normal, QQ pairs vs normal and Student-t(7),
/// the return series itself, and autocorrelations of returns and
/// squared returns.
#[derive(Debug, Clone, PartialEq)]
pub struct StylizedReport {
    pub density: Vec<DensityPoint>,
    pub qq: Vec<QqPoint>,
    pub returns: Vec<f64>,
    pub acf_returns: Vec<f64>,
    pub acf_squared: Vec<f64>,
    pub band: f64,
}

pub fn stylized_facts_report(
    run: &RunResult,
    convention: ReturnConvention,
    max_lag: usize,
) -> Result<StylizedReport, MetricsError> {
    let returns = returns_by(&run.prices, convention)?;
    stylized_report_from_returns(&returns, max_lag)
}

pub fn stylized_report_from_returns(
    returns: &[f64],
    max_lag: usize,
) -> Result<StylizedReport, MetricsError> {
    let n = returns.len();
    if n <= max_lag.max(3) {
        return Err(MetricsError::SeriesTooShort { needed: max_lag.max(3) + 1, got: n });
    }
    let mu = mean(returns);
    let sd = std_dev(returns);
    if sd == 0.0 {
        return Err(MetricsError::UndefinedSignal("degenerate return distribution"));
    }

    let mut sorted = returns.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Silverman's rule of thumb with the IQR guard.
    let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);

    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[n - 1] + 3.0 * h;
    let grid_points = 201;
    let density = (0..grid_points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (grid_points - 1) as f64;
            let kde = returns
                .iter()
                .map(|r| {
                    let z = (x - r) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
            let z = (x - mu) / sd;
            let normal_ref = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            DensityPoint { x, empirical: kde, normal_ref }
        })
        .collect();

    let std_normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    let t7 = statrs::distribution::StudentsT::new(0.0, 1.0, 7.0).expect("t with 7 df");
    let t7_scale = (7.0f64 / 5.0).sqrt();
    let qq_points = 200.min(n);
    let qq = (0..qq_points)
        .map(|i| {
            let prob = (i as f64 + 0.5) / qq_points as f64;
            QqPoint {
                prob,
                empirical: quantile_type7(&sorted, prob),
                normal_q: mu + sd * std_normal.inverse_cdf(prob),
                student_t7_q: mu + sd * t7.inverse_cdf(prob) / t7_scale,
            }
        })
        .collect();

    let returns_acf = acf(returns, max_lag)?;
    let squared: Vec<f64> = returns.iter().map(|r| r * r).collect();
    let squared_acf = acf(&squared, max_lag)?;

    Ok(StylizedReport {
        density,
        qq,
        returns: returns.to_vec(),
        acf_returns: returns_acf.values,
        acf_squared: squared_acf.values,
        band: returns_acf.band,
    })
}

/// Linear-interpolation (type-7) quantile of an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-run scalar outcomes with regime labels, as consumed by the
/// experiment tables and the regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_index: u64,
    pub seed: u64,
    pub ssban: bool,
    pub var_limit: bool,
    pub tax_level: f64,
    /// Average traded shares per agent per step.
    pub liquidity: f64,
    /// Standard deviation of returns.
    pub volatility: f64,
    /// Volatility times 100, the regression-facing scale.
    pub volatility_pct: f64,
    /// Excess kurtosis of the mirrored-negative-return distribution;
    /// None when the run had fewer than 4 negative returns.
    pub kurtosis_flipped: Option<f64>,
    /// Number of default events over the run.
    pub defaults: u32,
    pub aborted: bool,
    /// Hash of the consumed shock stream, for CRN assertions.
    pub shock_hash: u64,
}

impl MetricsRecord {
    /// Whether the transaction-tax overlay was active.
    pub fn tt(&self) -> bool {
        self.tax_level > 0.0
    }
}

/// Compute the per-run metrics from a completed (or aborted) run.
pub fn metrics_record(
    result: &RunResult,
    cal: &Calibration,
    convention: ReturnConvention,
) -> MetricsRecord {
    let (volatility, kurtosis_flipped) = match returns_by(&result.prices, convention) {
        Ok(returns) => (std_dev(&returns), flipped_kurtosis(&returns).ok()),
        Err(_) => (f64::NAN, None),
    };
    MetricsRecord {
        run_index: result.run_index,
        seed: result.seed,
        ssban: result.regime.ssban,
        var_limit: result.regime.var_limit,
        tax_level: result.regime.tax_level,
        liquidity: liquidity_from_volume(result.trade_volume, result.prices.len(), cal.n_agents),
        volatility,
        volatility_pct: volatility * 100.0,
        kurtosis_flipped,
        defaults: result.default_events.len() as u32,
        aborted: result.aborted,
        shock_hash: result.shock_hash,
    }
}
