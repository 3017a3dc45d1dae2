//! Experiment designs: the 2x2x2 regulatory-regime grid and the
//! transaction-tax level sweep, both with common random numbers so that
//! every cell of one run index consumes the identical shock draw.

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{Calibration, RegulatoryRegime, Switches};
use crate::engine::{run, RunConfig};
use crate::metrics::{metrics_record, quantile_type7, MetricsRecord};

/// Default tax levels of the sweep.
pub const DEFAULT_TAX_LEVELS: [f64; 8] = [0.0, 0.001, 0.003, 0.005, 0.01, 0.02, 0.03, 0.05];

/// One experiment's scope: which regimes and tax levels to visit, how many
/// runs per cell, and the master seed addressing the shock streams.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub calibration: Calibration,
    pub regimes: Vec<RegulatoryRegime>,
    pub tax_levels: Vec<f64>,
    pub n_runs: u64,
    pub master_seed: u64,
    pub switches: Switches,
    pub tax_deduction: bool,
}

impl ExperimentPlan {
    /// Grid plan: all 8 combinations of ban, VaR limit, and the tax at the
    /// calibrated level.
    pub fn grid(calibration: Calibration, n_runs: u64, master_seed: u64) -> Self {
        let regimes = grid_regimes(&calibration);
        ExperimentPlan {
            calibration,
            regimes,
            tax_levels: vec![],
            n_runs,
            master_seed,
            switches: Switches::default(),
            tax_deduction: false,
        }
    }

    /// Sweep plan: the four ban/VaR combinations crossed with the given tax
    /// levels (the default levels when `levels` is None).
    pub fn sweep(calibration: Calibration, n_runs: u64, master_seed: u64, levels: Option<Vec<f64>>) -> Self {
        let mut tax_levels = levels.unwrap_or_else(|| DEFAULT_TAX_LEVELS.to_vec());
        tax_levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ExperimentPlan {
            calibration,
            regimes: base_regime_pairs(),
            tax_levels,
            n_runs,
            master_seed,
            switches: Switches::default(),
            tax_deduction: false,
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.n_runs < 1 {
            return Err("n_runs must be >= 1");
        }
        if self.tax_levels.iter().any(|t| *t < 0.0) {
            return Err("tax levels must be non-negative");
        }
        Ok(())
    }
}

/// The 8 regime combinations in deterministic order: for each ssban and
/// VaR flag, tax off then tax at the calibrated level.
pub fn grid_regimes(cal: &Calibration) -> Vec<RegulatoryRegime> {
    let mut regimes = Vec::with_capacity(8);
    for ssban in [false, true] {
        for var_limit in [false, true] {
            for tt in [false, true] {
                regimes.push(RegulatoryRegime {
                    ssban,
                    var_limit,
                    tax_level: if tt { cal.tobin_tax } else { 0.0 },
                });
            }
        }
    }
    regimes
}

/// The four ban/VaR combinations with no tax; the sweep applies levels.
pub fn base_regime_pairs() -> Vec<RegulatoryRegime> {
    let mut regimes = Vec::with_capacity(4);
    for ssban in [false, true] {
        for var_limit in [false, true] {
            regimes.push(RegulatoryRegime { ssban, var_limit, tax_level: 0.0 });
        }
    }
    regimes
}

fn run_cell(plan: &ExperimentPlan, regime: RegulatoryRegime, run_index: u64) -> MetricsRecord {
    let config = RunConfig {
        calibration: plan.calibration.clone(),
        regime,
        seed: plan.master_seed,
        run_index,
        record_per_agent: false,
        tax_deduction: plan.tax_deduction,
        switches: plan.switches,
    };
    let result = run(&config);
    metrics_record(&result, &plan.calibration, plan.switches.return_convention)
}

/// Execute the full regime grid: for each run index the same shock stream
/// is replayed under all 8 regimes. Records come back run-major, regime
/// order as in [`grid_regimes`]; aborted runs are flagged, never dropped.
pub fn regime_grid(plan: &ExperimentPlan) -> Vec<MetricsRecord> {
    debug_assert!(plan.validate().is_ok());
    let regimes = &plan.regimes;
    let tasks: Vec<(u64, RegulatoryRegime)> = (0..plan.n_runs)
        .flat_map(|r| regimes.iter().map(move |g| (r, *g)))
        .collect();
    tasks
        .into_par_iter()
        .map(|(run_index, regime)| run_cell(plan, regime, run_index))
        .collect()
}

/// Mean / median / upper-quartile triple over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub q75: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    if values.is_empty() {
        return MetricSummary { mean: f64::NAN, median: f64::NAN, q75: f64::NAN };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    MetricSummary {
        mean: crate::metrics::mean(&sorted),
        median: quantile_type7(&sorted, 0.5),
        q75: quantile_type7(&sorted, 0.75),
    }
}

/// Per-cell summary of one sweep cell (or one aggregated tax level, where
/// the regime flags are `None`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub ssban: Option<bool>,
    pub var_limit: Option<bool>,
    pub tax_level: f64,
    pub volatility: MetricSummary,
    pub kurtosis_flipped: MetricSummary,
    /// Fraction of runs whose flipped kurtosis exceeds 100.
    pub frac_kurtosis_gt_100: f64,
    pub n_runs: usize,
    pub n_aborted: usize,
}

/// Sweep output: per-regime cells plus the aggregated-across-regimes view.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub by_regime: Vec<CellSummary>,
    pub aggregated: Vec<CellSummary>,
    pub records: Vec<MetricsRecord>,
}

fn summarize_cell(
    ssban: Option<bool>,
    var_limit: Option<bool>,
    tax_level: f64,
    records: &[&MetricsRecord],
) -> CellSummary {
    let ok: Vec<&&MetricsRecord> = records.iter().filter(|r| !r.aborted).collect();
    let vols: Vec<f64> = ok.iter().map(|r| r.volatility).collect();
    let kurts: Vec<f64> = ok.iter().filter_map(|r| r.kurtosis_flipped).collect();
    let heavy = if kurts.is_empty() {
        0.0
    } else {
        kurts.iter().filter(|k| **k > 100.0).count() as f64 / kurts.len() as f64
    };
    CellSummary {
        ssban,
        var_limit,
        tax_level,
        volatility: summarize(&vols),
        kurtosis_flipped: summarize(&kurts),
        frac_kurtosis_gt_100: heavy,
        n_runs: records.len(),
        n_aborted: records.len() - ok.len(),
    }
}

/// Execute the tax-level sweep with common random numbers across both the
/// regime pairs and the tax levels.
pub fn tobin_sweep(plan: &ExperimentPlan) -> SweepResult {
    debug_assert!(plan.validate().is_ok());
    let cells: Vec<(RegulatoryRegime, f64)> = plan
        .regimes
        .iter()
        .flat_map(|g| plan.tax_levels.iter().map(move |t| (*g, *t)))
        .collect();
    let tasks: Vec<(u64, RegulatoryRegime)> = (0..plan.n_runs)
        .flat_map(|r| {
            cells
                .iter()
                .map(move |(g, t)| (r, RegulatoryRegime { tax_level: *t, ..*g }))
        })
        .collect();
    let records: Vec<MetricsRecord> = tasks
        .into_par_iter()
        .map(|(run_index, regime)| run_cell(plan, regime, run_index))
        .collect();

    let mut by_regime = Vec::with_capacity(cells.len());
    for (g, t) in &cells {
        let cell_records: Vec<&MetricsRecord> = records
            .iter()
            .filter(|r| {
                r.ssban == g.ssban && r.var_limit == g.var_limit && r.tax_level == *t
            })
            .collect();
        by_regime.push(summarize_cell(Some(g.ssban), Some(g.var_limit), *t, &cell_records));
    }
    let mut aggregated = Vec::with_capacity(plan.tax_levels.len());
    for t in &plan.tax_levels {
        let level_records: Vec<&MetricsRecord> =
            records.iter().filter(|r| r.tax_level == *t).collect();
        aggregated.push(summarize_cell(None, None, *t, &level_records));
    }
    SweepResult { by_regime, aggregated, records }
}
