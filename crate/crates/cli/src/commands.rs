//! The four subcommands: one run, the regime grid with regressions, the
//! tax-level sweep, and the return-distribution diagnostics.

use rand::Rng;

use regmkt::analysis::{fgls, median_regression, DesignRow, RegressionResult};
use regmkt::engine::{run, RunConfig};
use regmkt::experiments::{regime_grid, tobin_sweep, CellSummary, ExperimentPlan};
use regmkt::metrics::{metrics_record, stylized_report_from_returns, MetricsRecord, StylizedReport};
use regmkt::stochastic::{stream_rng, StreamPurpose};

use crate::config::Resolved;
use crate::output::{fmt_bool, fmt_f64, fmt_opt, OutputContext};
use crate::CliError;

const REGRESSION_BOOTSTRAP: usize = 1000;

fn plan_from(resolved: &Resolved) -> ExperimentPlan {
    let mut plan = ExperimentPlan::grid(
        resolved.calibration.clone(),
        resolved.n_runs,
        resolved.master_seed,
    );
    plan.switches = resolved.switches;
    plan.tax_deduction = resolved.tax_deduction;
    plan
}

pub fn cmd_simulate(resolved: &Resolved) -> Result<(), CliError> {
    let ctx = OutputContext::new(resolved)?;
    let config = RunConfig {
        calibration: resolved.calibration.clone(),
        regime: resolved.regime,
        seed: resolved.master_seed,
        run_index: 0,
        record_per_agent: resolved.per_run_trajectory,
        tax_deduction: resolved.tax_deduction,
        switches: resolved.switches,
    };
    let result = run(&config);
    if result.aborted {
        return Err(CliError::Runtime(format!(
            "run aborted: {}",
            result.abort_reason.as_deref().unwrap_or("unknown")
        )));
    }
    ctx.write_csv(
        "prices.csv",
        &["t", "price"],
        result
            .prices
            .iter()
            .enumerate()
            .map(|(t, p)| vec![t.to_string(), fmt_f64(*p)]),
    )?;
    if let Some(matrix) = &result.per_agent_demand {
        let rows = matrix.iter().enumerate().flat_map(|(t, row)| {
            row.iter()
                .enumerate()
                .map(move |(agent, d)| vec![t.to_string(), agent.to_string(), fmt_f64(*d)])
                .collect::<Vec<_>>()
        });
        ctx.write_csv("trades.csv", &["t", "agent", "demand"], rows)?;
    }
    let record = metrics_record(&result, &resolved.calibration, resolved.switches.return_convention);
    let value = serde_json::to_value(&record)
        .map_err(|e| CliError::Runtime(format!("serialize metrics: {e}")))?;
    ctx.write_json("metrics.json", &value)?;
    eprintln!(
        "simulate: {} steps, volatility {:.5}, liquidity {:.4}, defaults {}",
        result.prices.len(),
        record.volatility,
        record.liquidity,
        record.defaults
    );
    Ok(())
}

fn grid_rows(records: &[MetricsRecord]) -> impl Iterator<Item = Vec<String>> + '_ {
    records.iter().map(|r| {
        vec![
            r.run_index.to_string(),
            r.seed.to_string(),
            fmt_bool(r.ssban),
            fmt_bool(r.var_limit),
            fmt_bool(r.tt()),
            fmt_f64(r.tax_level),
            fmt_f64(r.liquidity),
            fmt_f64(r.volatility),
            fmt_f64(r.volatility_pct),
            fmt_opt(r.kurtosis_flipped),
            r.defaults.to_string(),
            fmt_bool(r.aborted),
        ]
    })
}

const GRID_COLUMNS: [&str; 12] = [
    "run_index",
    "seed",
    "ssban",
    "var",
    "tt",
    "tax_level",
    "liquidity",
    "volatility",
    "volatility_pct",
    "kurtosis_flipped",
    "defaults",
    "aborted",
];

/// Build design rows for one response; aborted runs and runs without the
/// response are skipped.
pub fn design_rows(
    records: &[MetricsRecord],
    response: impl Fn(&MetricsRecord) -> Option<f64>,
) -> Vec<DesignRow> {
    records
        .iter()
        .filter(|r| !r.aborted)
        .filter_map(|r| {
            response(r).map(|value| DesignRow {
                var_limit: r.var_limit,
                ssban: r.ssban,
                tt: r.tt(),
                response: value,
            })
        })
        .collect()
}

fn regression_rows(model: &str, result: &RegressionResult) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = result
        .terms
        .iter()
        .map(|t| {
            vec![
                model.to_string(),
                t.term.to_string(),
                fmt_f64(t.estimate),
                fmt_f64(t.se),
                fmt_f64(t.t_stat),
                fmt_f64(t.p_value),
                t.stars.to_string(),
            ]
        })
        .collect();
    if let Some(adj) = result.adj_r_squared {
        rows.push(vec![
            model.to_string(),
            "adj_r_squared".to_string(),
            fmt_f64(adj),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    rows
}

pub fn cmd_grid(resolved: &Resolved) -> Result<(), CliError> {
    let ctx = OutputContext::new(resolved)?;
    let plan = plan_from(resolved);
    let records = regime_grid(&plan);
    ctx.write_csv("grid.csv", &GRID_COLUMNS, grid_rows(&records))?;

    let responses: [(&str, fn(&MetricsRecord) -> Option<f64>); 4] = [
        ("liquidity", |r| Some(r.liquidity)),
        ("volatility_pct", |r| Some(r.volatility_pct)),
        ("kurtosis_flipped", |r| r.kurtosis_flipped),
        ("defaults", |r| Some(r.defaults as f64)),
    ];
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (name, response) in responses {
        let design = design_rows(&records, response);
        match fgls(&design) {
            Ok(result) => rows.extend(regression_rows(&format!("fgls:{name}"), &result)),
            Err(e) => eprintln!("grid: skipping fgls:{name}: {e}"),
        }
        match median_regression(&design, REGRESSION_BOOTSTRAP, resolved.master_seed) {
            Ok(result) => rows.extend(regression_rows(&format!("median:{name}"), &result)),
            Err(e) => eprintln!("grid: skipping median:{name}: {e}"),
        }
    }
    ctx.write_csv(
        "regression.csv",
        &["model", "term", "estimate", "se", "t", "p", "stars"],
        rows,
    )?;
    let aborted = records.iter().filter(|r| r.aborted).count();
    eprintln!(
        "grid: {} records ({} aborted), seed {}",
        records.len(),
        aborted,
        resolved.master_seed
    );
    Ok(())
}

fn sweep_rows<'a>(cells: &'a [CellSummary]) -> impl Iterator<Item = Vec<String>> + 'a {
    cells.iter().flat_map(|cell| {
        let label = |flag: Option<bool>| match flag {
            Some(v) => fmt_bool(v),
            None => "all".to_string(),
        };
        [
            ("volatility", &cell.volatility),
            ("kurtosis_flipped", &cell.kurtosis_flipped),
        ]
        .into_iter()
        .map(move |(metric, summary)| {
            vec![
                label(cell.ssban),
                label(cell.var_limit),
                fmt_f64(cell.tax_level),
                metric.to_string(),
                fmt_f64(summary.mean),
                fmt_f64(summary.median),
                fmt_f64(summary.q75),
                fmt_f64(cell.frac_kurtosis_gt_100),
            ]
        })
        .collect::<Vec<_>>()
    })
}

const SWEEP_COLUMNS: [&str; 8] =
    ["ssban", "var", "tax_level", "metric", "mean", "median", "q75", "frac_kurtosis_gt_100"];

pub fn cmd_sweep(resolved: &Resolved) -> Result<(), CliError> {
    let ctx = OutputContext::new(resolved)?;
    let mut plan = ExperimentPlan::sweep(
        resolved.calibration.clone(),
        resolved.n_runs,
        resolved.master_seed,
        resolved.tax_levels.clone(),
    );
    plan.switches = resolved.switches;
    plan.tax_deduction = resolved.tax_deduction;
    let sweep = tobin_sweep(&plan);
    ctx.write_csv("sweep.csv", &SWEEP_COLUMNS, sweep_rows(&sweep.aggregated))?;
    ctx.write_csv("sweep_by_regime.csv", &SWEEP_COLUMNS, sweep_rows(&sweep.by_regime))?;
    let aborted = sweep.records.iter().filter(|r| r.aborted).count();
    eprintln!(
        "sweep: {} runs ({} aborted) over {} tax levels",
        sweep.records.len(),
        aborted,
        plan.tax_levels.len()
    );
    Ok(())
}

pub fn cmd_stylized(resolved: &Resolved, synthetic: Option<usize>) -> Result<(), CliError> {
    let ctx = OutputContext::new(resolved)?;
    let report = match synthetic {
        Some(n) => {
            if n < 32 {
                return Err(CliError::Config("--synthetic needs at least 32 draws".into()));
            }
            let mut rng = stream_rng(resolved.master_seed, 0, StreamPurpose::Synthetic);
            let returns: Vec<f64> = (0..n)
                .map(|_| 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            stylized_report_from_returns(&returns, 20)
                .map_err(|e| CliError::Runtime(e.to_string()))?
        }
        None => {
            let config = RunConfig {
                calibration: resolved.calibration.clone(),
                regime: resolved.regime,
                seed: resolved.master_seed,
                run_index: 0,
                record_per_agent: false,
                tax_deduction: resolved.tax_deduction,
                switches: resolved.switches,
            };
            let result = run(&config);
            if result.aborted {
                return Err(CliError::Runtime(format!(
                    "run aborted: {}",
                    result.abort_reason.as_deref().unwrap_or("unknown")
                )));
            }
            regmkt::metrics::stylized_facts_report(
                &result,
                resolved.switches.return_convention,
                20,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?
        }
    };
    write_stylized(&ctx, &report)
}

fn write_stylized(ctx: &OutputContext, report: &StylizedReport) -> Result<(), CliError> {
    ctx.write_csv(
        "density.csv",
        &["x", "empirical", "normal_ref"],
        report
            .density
            .iter()
            .map(|p| vec![fmt_f64(p.x), fmt_f64(p.empirical), fmt_f64(p.normal_ref)]),
    )?;
    ctx.write_csv(
        "qq.csv",
        &["prob", "empirical", "normal_q", "student_t7_q"],
        report.qq.iter().map(|q| {
            vec![fmt_f64(q.prob), fmt_f64(q.empirical), fmt_f64(q.normal_q), fmt_f64(q.student_t7_q)]
        }),
    )?;
    ctx.write_csv(
        "returns.csv",
        &["t", "return"],
        report
            .returns
            .iter()
            .enumerate()
            .map(|(t, r)| vec![(t + 1).to_string(), fmt_f64(*r)]),
    )?;
    ctx.write_csv(
        "acf.csv",
        &["lag", "acf_returns", "acf_squared_returns", "band"],
        report
            .acf_returns
            .iter()
            .zip(&report.acf_squared)
            .enumerate()
            .map(|(i, (a, sq))| {
                vec![(i + 1).to_string(), fmt_f64(*a), fmt_f64(*sq), fmt_f64(report.band)]
            }),
    )?;
    Ok(())
}
