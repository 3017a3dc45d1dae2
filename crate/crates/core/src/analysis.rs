//! Regressions of per-run metrics on regulatory-regime dummies: ordinary
//! least squares, feasible GLS with cell-wise variance weights, and
//! median regression on the saturated 2x2x2 design with run-level
//! bootstrap standard errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::ContinuousCDF;
use thiserror::Error;

use crate::metrics::quantile_type7;
use crate::stochastic::{stream_rng, StreamPurpose};

/// Term order of the saturated design.
pub const TERM_NAMES: [&str; 8] = [
    "Intercept",
    "VaR",
    "ssban",
    "TT",
    "VaR:ssban",
    "VaR:TT",
    "ssban:TT",
    "VaR:TT:ssban",
];

pub const N_TERMS: usize = 8;

/// One observation: the three regime dummies and the response value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow {
    pub var_limit: bool,
    pub ssban: bool,
    pub tt: bool,
    pub response: f64,
}

impl DesignRow {
    /// Index of this row's cell in the canonical 0..8 enumeration.
    pub fn cell(&self) -> usize {
        (self.var_limit as usize) << 2 | (self.ssban as usize) << 1 | self.tt as usize
    }
}

/// Regressor vector (intercept, main effects, interactions).
pub fn design_vector(var_limit: bool, ssban: bool, tt: bool) -> [f64; N_TERMS] {
    let v = var_limit as u8 as f64;
    let s = ssban as u8 as f64;
    let t = tt as u8 as f64;
    [1.0, v, s, t, v * s, v * t, s * t, v * t * s]
}

/// Dummy combination of canonical cell index `c`.
pub fn cell_flags(c: usize) -> (bool, bool, bool) {
    (c & 4 != 0, c & 2 != 0, c & 1 != 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermEstimate {
    pub term: &'static str,
    pub estimate: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub stars: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub terms: Vec<TermEstimate>,
    /// Present for least-squares fits; median regression reports none.
    pub adj_r_squared: Option<f64>,
    /// Cells whose residual variance was zero and fell back to unit weight.
    pub zero_variance_cells: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("cell {cell} needs at least {needed} runs, got {got}")]
    CellTooSmall { cell: usize, needed: usize, got: usize },
    #[error("empty design")]
    Empty,
}

/// Significance codes: 0 *** 0.001 ** 0.01 * 0.05 . 0.1
pub fn stars(p_value: f64) -> &'static str {
    if !(p_value >= 0.0) {
        ""
    } else if p_value < 0.001 {
        "***"
    } else if p_value < 0.01 {
        "**"
    } else if p_value < 0.05 {
        "*"
    } else if p_value < 0.1 {
        "."
    } else {
        ""
    }
}

fn t_p_value(t_stat: f64, df: f64) -> f64 {
    if !(df >= 1.0) || !t_stat.is_finite() {
        return f64::NAN;
    }
    let dist = statrs::distribution::StudentsT::new(0.0, 1.0, df).expect("valid df");
    2.0 * (1.0 - dist.cdf(t_stat.abs()))
}

fn normal_p_value(t_stat: f64) -> f64 {
    if !t_stat.is_finite() {
        return f64::NAN;
    }
    let dist = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * (1.0 - dist.cdf(t_stat.abs()))
}

fn build_xy(rows: &[DesignRow]) -> (DMatrix<f64>, DVector<f64>) {
    let n = rows.len();
    let x = DMatrix::from_fn(n, N_TERMS, |i, j| {
        design_vector(rows[i].var_limit, rows[i].ssban, rows[i].tt)[j]
    });
    let y = DVector::from_fn(n, |i, _| rows[i].response);
    (x, y)
}

/// Weighted least squares on the saturated design; unit weights give OLS.
fn weighted_fit(
    rows: &[DesignRow],
    weights: &[f64],
    zero_variance_cells: usize,
) -> Result<(RegressionResult, Vec<f64>), AnalysisError> {
    let n = rows.len();
    if n == 0 {
        return Err(AnalysisError::Empty);
    }
    let (x, y) = build_xy(rows);
    let w = DVector::from_column_slice(weights);
    let mut xtwx = DMatrix::zeros(N_TERMS, N_TERMS);
    let mut xtwy = DVector::zeros(N_TERMS);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..N_TERMS {
            xtwy[j] += w[i] * xi[j] * y[i];
            for k in j..N_TERMS {
                xtwx[(j, k)] += w[i] * xi[j] * xi[k];
            }
        }
    }
    for j in 0..N_TERMS {
        for k in 0..j {
            xtwx[(j, k)] = xtwx[(k, j)];
        }
    }
    let chol = nalgebra::linalg::Cholesky::new(xtwx.clone()).ok_or(AnalysisError::RankDeficient)?;
    let beta = chol.solve(&xtwy);
    let fitted = &x * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let wrss: f64 = (0..n).map(|i| w[i] * residuals[i] * residuals[i]).sum();
    let df = n as f64 - N_TERMS as f64;
    let cov_scale = if df >= 1.0 { wrss / df } else { f64::NAN };
    let xtwx_inv = chol.inverse();

    let w_total: f64 = weights.iter().sum();
    let y_wmean: f64 = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / w_total;
    let wsst: f64 = (0..n).map(|i| w[i] * (y[i] - y_wmean) * (y[i] - y_wmean)).sum();
    let adj_r_squared = if wsst > 0.0 && df >= 1.0 {
        let r2 = 1.0 - wrss / wsst;
        Some(1.0 - (1.0 - r2) * (n as f64 - 1.0) / df)
    } else if wsst > 0.0 {
        Some(1.0 - wrss / wsst)
    } else {
        None
    };

    let terms = (0..N_TERMS)
        .map(|j| {
            let estimate = beta[j];
            let se = (cov_scale * xtwx_inv[(j, j)]).sqrt();
            let t_stat = estimate / se;
            let p_value = t_p_value(t_stat, df);
            TermEstimate { term: TERM_NAMES[j], estimate, se, t_stat, p_value, stars: stars(p_value) }
        })
        .collect();
    Ok((RegressionResult { terms, adj_r_squared, zero_variance_cells }, residuals))
}

/// Ordinary least squares; also returns residuals for downstream weighting.
pub fn ols(rows: &[DesignRow]) -> Result<(RegressionResult, Vec<f64>), AnalysisError> {
    weighted_fit(rows, &vec![1.0; rows.len()], 0)
}

/// Feasible GLS: OLS first, then per-cell residual variances as inverse
/// weights. A zero-variance cell falls back to unit weight.
pub fn fgls(rows: &[DesignRow]) -> Result<RegressionResult, AnalysisError> {
    let (_, residuals) = ols(rows)?;
    let mut cell_ss = [0.0f64; 8];
    let mut cell_n = [0usize; 8];
    for (row, e) in rows.iter().zip(&residuals) {
        let c = row.cell();
        cell_ss[c] += e * e;
        cell_n[c] += 1;
    }
    // Variance below rounding noise of the fit counts as zero.
    let scale = rows.iter().map(|r| r.response.abs()).fold(1.0, f64::max);
    let zero_tol = 1e-24 * scale * scale;
    let mut cell_var = [0.0f64; 8];
    let mut zero_variance_cells = 0;
    for c in 0..8 {
        if cell_n[c] == 0 {
            continue;
        }
        if cell_n[c] < 2 {
            return Err(AnalysisError::CellTooSmall { cell: c, needed: 2, got: cell_n[c] });
        }
        cell_var[c] = cell_ss[c] / (cell_n[c] as f64 - 1.0);
        if cell_var[c] <= zero_tol {
            cell_var[c] = 0.0;
            zero_variance_cells += 1;
        }
    }
    let weights: Vec<f64> = rows
        .iter()
        .map(|row| {
            let v = cell_var[row.cell()];
            if v > 0.0 {
                1.0 / v
            } else {
                1.0
            }
        })
        .collect();
    Ok(weighted_fit(rows, &weights, zero_variance_cells)?.0)
}

fn cell_groups(rows: &[DesignRow]) -> Result<[Vec<f64>; 8], AnalysisError> {
    let mut groups: [Vec<f64>; 8] = Default::default();
    for row in rows {
        groups[row.cell()].push(row.response);
    }
    for (c, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(AnalysisError::CellTooSmall { cell: c, needed: 1, got: 0 });
        }
    }
    Ok(groups)
}

/// Solve the 8x8 factorial system mapping per-cell values to term
/// coefficients.
fn solve_factorial(cell_values: &[f64; 8]) -> Vec<f64> {
    let x = DMatrix::from_fn(8, 8, |i, j| {
        let (v, s, t) = cell_flags(i);
        design_vector(v, s, t)[j]
    });
    let b = DVector::from_row_slice(cell_values);
    x.lu().solve(&b).expect("saturated design is invertible").iter().copied().collect()
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7(&sorted, 0.5)
}

/// Median regression on the saturated design. The fit equals per-cell
/// medians, so the coefficients solve the factorial system exactly;
/// standard errors come from resampling runs within cells.
pub fn median_regression(
    rows: &[DesignRow],
    n_bootstrap: usize,
    seed: u64,
) -> Result<RegressionResult, AnalysisError> {
    let groups = cell_groups(rows)?;
    let medians: [f64; 8] = std::array::from_fn(|c| median_of(&groups[c]));
    let estimates = solve_factorial(&medians);

    let mut rng = stream_rng(seed, 0, StreamPurpose::Bootstrap);
    let mut replicate_sums = vec![0.0f64; N_TERMS];
    let mut replicate_sumsq = vec![0.0f64; N_TERMS];
    let mut scratch: Vec<f64> = Vec::new();
    for _ in 0..n_bootstrap {
        let mut boot_medians = [0.0f64; 8];
        for c in 0..8 {
            let g = &groups[c];
            scratch.clear();
            scratch.extend((0..g.len()).map(|_| g[rng.random_range(0..g.len())]));
            boot_medians[c] = median_of(&scratch);
        }
        let b = solve_factorial(&boot_medians);
        for j in 0..N_TERMS {
            replicate_sums[j] += b[j];
            replicate_sumsq[j] += b[j] * b[j];
        }
    }

    let terms = (0..N_TERMS)
        .map(|j| {
            let estimate = estimates[j];
            let bn = n_bootstrap as f64;
            let mean = replicate_sums[j] / bn;
            let var = (replicate_sumsq[j] / bn - mean * mean).max(0.0) * bn / (bn - 1.0);
            let se = var.sqrt();
            let t_stat = estimate / se;
            let p_value = normal_p_value(t_stat);
            TermEstimate { term: TERM_NAMES[j], estimate, se, t_stat, p_value, stars: stars(p_value) }
        })
        .collect();
    Ok(RegressionResult { terms, adj_r_squared: None, zero_variance_cells: 0 })
}
