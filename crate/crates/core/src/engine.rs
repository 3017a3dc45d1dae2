//! The per-timestep simulation loop.
//!
//! Each step updates perceptions, reintroduces agents whose default
//! countdown expired, solves the clearing problem with wealth coupled to
//! the candidate price, commits wealth and holdings, handles defaults,
//! and appends the realized asset return to every active agent's VaR
//! window. A run is the deterministic opening clearing followed by
//! `n_timesteps - 1` stochastic steps.

use std::collections::VecDeque;

use statrs::distribution::ContinuousCDF;

use crate::calibration::{Calibration, RegulatoryRegime, Switches};
use crate::clearing::{clear_market, ClearingAgent, ClearingError, ClearingProblem};
use crate::model::compute_var_with_alpha;
use crate::stochastic::{sample_epsilon_into, stream_rng, NoiseSpec, ShockHasher, StreamPurpose};

/// Relative clearing tolerance used by the engine.
pub const CLEARING_TOL: f64 = 1e-10;

/// Everything needed to reproduce one run bit for bit.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub calibration: Calibration,
    pub regime: RegulatoryRegime,
    pub seed: u64,
    pub run_index: u64,
    /// Store the full timestep-by-agent demand matrix. Liquidity is exact
    /// either way; the matrix is only needed for trade-level output.
    pub record_per_agent: bool,
    /// Deduct tax_level * p_t * |trade| from wealth after clearing.
    /// Off by default: the tax acts through the no-trade threshold.
    pub tax_deduction: bool,
    pub switches: Switches,
}

impl RunConfig {
    pub fn new(calibration: Calibration, regime: RegulatoryRegime, seed: u64, run_index: u64) -> Self {
        RunConfig {
            calibration,
            regime,
            seed,
            run_index,
            record_per_agent: false,
            tax_deduction: false,
            switches: Switches::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStatus {
    Active,
    Defaulted { steps_remaining: u32 },
}

/// One trader's state.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub beta: f64,
    pub wealth: f64,
    pub holdings: f64,
    pub log_perceived: f64,
    pub shorts_allowed: bool,
    pub status: AgentStatus,
    /// Rolling window of recent asset returns for VaR estimation.
    pub return_window: VecDeque<f64>,
    /// Capacity of the window: round(var_window_base / beta), at least 2.
    pub window_len: usize,
}

impl AgentState {
    pub fn is_active(&self) -> bool {
        self.status == AgentStatus::Active
    }
}

/// One simulated trajectory.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Clearing price per recorded timestep (index 0 is the opening price).
    pub prices: Vec<f64>,
    /// Timestep-by-agent holdings, present when requested. Rows hold the
    /// cleared demand of every participant and zero for defaulted agents.
    pub per_agent_demand: Option<Vec<Vec<f64>>>,
    /// Sum over recorded steps of sum_i |D_{i,t} - D_{i,t-1}|.
    pub trade_volume: f64,
    /// (recorded timestep, agent id) for every default.
    pub default_events: Vec<(usize, usize)>,
    pub clearing_failures: u32,
    pub aborted: bool,
    pub abort_reason: Option<String>,
    pub seed: u64,
    pub run_index: u64,
    pub regime: RegulatoryRegime,
    /// Hash of every shock vector the run consumed, for CRN checks.
    pub shock_hash: u64,
}

/// Live simulation state; drive it manually for step-level tests or use
/// [`run`] for a whole trajectory.
pub struct Simulation {
    cal: Calibration,
    regime: RegulatoryRegime,
    switches: Switches,
    tax_deduction: bool,
    pub(crate) agents: Vec<AgentState>,
    /// Last cleared price.
    price: f64,
    /// Standard-normal quantile at the configured VaR confidence level.
    alpha: f64,
    log_v: f64,
    /// Holdings row as last recorded (zeros for defaulted agents).
    prev_row: Vec<f64>,
    // Scratch buffers reused across steps.
    clearing_inputs: Vec<ClearingAgent>,
    active_idx: Vec<usize>,
}

/// Outcome of one committed step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub price: f64,
    /// Holdings per agent after the step (zero for defaulted agents).
    pub holdings: Vec<f64>,
    /// Agents that defaulted in this step.
    pub defaults: Vec<usize>,
    pub traded_volume: f64,
    pub at_discontinuity: bool,
}

impl Simulation {
    /// Initialize agents and solve the opening clearing (wealth fixed at
    /// W_0, no prior holdings, perceptions at their starting value).
    pub fn new(
        cal: &Calibration,
        regime: &RegulatoryRegime,
        switches: &Switches,
        tax_deduction: bool,
    ) -> Result<(Self, StepRecord), ClearingError> {
        let log_v = cal.fundamental_value.ln();
        let lp0 = switches.initial_log_perceived.unwrap_or(log_v);
        let agents: Vec<AgentState> = (0..cal.n_agents)
            .map(|i| {
                let beta = cal.agent_beta(i);
                AgentState {
                    id: i,
                    beta,
                    wealth: cal.initial_wealth,
                    holdings: 0.0,
                    log_perceived: lp0,
                    shorts_allowed: cal.agent_shorts_allowed(i),
                    status: AgentStatus::Active,
                    return_window: VecDeque::with_capacity(cal.var_window_len(beta)),
                    window_len: cal.var_window_len(beta),
                }
            })
            .collect();
        let alpha = statrs::distribution::Normal::new(0.0, 1.0)
            .expect("unit normal")
            .inverse_cdf(cal.var_quantile);
        let mut sim = Simulation {
            cal: cal.clone(),
            regime: *regime,
            switches: *switches,
            tax_deduction,
            agents,
            price: cal.fundamental_value,
            alpha,
            log_v,
            prev_row: vec![0.0; cal.n_agents],
            clearing_inputs: Vec::with_capacity(cal.n_agents),
            active_idx: Vec::with_capacity(cal.n_agents),
        };
        let record = sim.clear_and_commit(false)?;
        Ok((sim, record))
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    /// Advance one timestep with the given shock vector.
    pub fn step(&mut self, eps: &[f64]) -> Result<StepRecord, ClearingError> {
        debug_assert_eq!(eps.len(), self.agents.len());
        let rho = self.cal.rho;
        for (a, &e) in self.agents.iter_mut().zip(eps) {
            a.log_perceived = rho * a.log_perceived + (1.0 - rho) * self.log_v + e;
        }
        for a in self.agents.iter_mut() {
            if let AgentStatus::Defaulted { steps_remaining } = a.status {
                if steps_remaining == 0 {
                    a.status = AgentStatus::Active;
                    a.wealth = self.cal.initial_wealth;
                    a.holdings = 0.0;
                    a.return_window.clear();
                } else {
                    a.status = AgentStatus::Defaulted { steps_remaining: steps_remaining - 1 };
                }
            }
        }
        self.clear_and_commit(true)
    }

    /// Solve the clearing problem for the current state, then commit
    /// wealth, holdings, tax deduction, defaults, and VaR windows.
    ///
    /// `update_wealth` is false only for the opening clearing, which also
    /// ignores the no-trade threshold: the initial allocation must place
    /// all outstanding shares, and the threshold presupposes an existing
    /// position to hold on to.
    fn clear_and_commit(&mut self, update_wealth: bool) -> Result<StepRecord, ClearingError> {
        let regime = if update_wealth {
            self.regime
        } else {
            RegulatoryRegime { tax_level: 0.0, ..self.regime }
        };
        self.clearing_inputs.clear();
        self.active_idx.clear();
        for (i, a) in self.agents.iter().enumerate() {
            if !a.is_active() {
                continue;
            }
            let var_estimate = if regime.var_limit && a.return_window.len() == a.window_len {
                compute_var_with_alpha(a.return_window.iter().copied(), self.alpha)
            } else {
                None
            };
            self.active_idx.push(i);
            self.clearing_inputs.push(ClearingAgent {
                beta: a.beta,
                shorts_allowed: a.shorts_allowed,
                perceived_value: a.log_perceived.exp(),
                prev_wealth: a.wealth,
                prev_demand: a.holdings,
                var_estimate,
                gamma: self.cal.gamma(a.beta, regime.tax_level),
            });
        }
        let flip = matches!(
            self.switches.mispricing_sign,
            crate::calibration::MispricingSign::PriceMinusPerceived
        );
        let problem = ClearingProblem {
            agents: &self.clearing_inputs,
            regime: &regime,
            lambda_max: self.cal.lambda_max,
            n_shares: self.cal.n_shares,
            prev_price: self.price,
            flip_mispricing: flip,
        };
        let solution = clear_market(&problem, CLEARING_TOL)?;
        let new_price = solution.price;
        let prev_price = self.price;

        let mut row = vec![0.0; self.agents.len()];
        for (k, &i) in self.active_idx.iter().enumerate() {
            let a = &mut self.agents[i];
            if update_wealth {
                a.wealth += a.holdings * (new_price - prev_price);
            }
            let new_d = solution.per_agent_demand[k];
            if self.tax_deduction && update_wealth {
                a.wealth -= self.regime.tax_level * new_price * (new_d - a.holdings).abs();
            }
            a.holdings = new_d;
            row[i] = new_d;
        }

        let threshold = self.cal.default_threshold();
        let mut defaults = Vec::new();
        for &i in &self.active_idx {
            let a = &mut self.agents[i];
            if a.wealth < threshold {
                a.status = AgentStatus::Defaulted { steps_remaining: self.cal.default_timeout };
                a.holdings = 0.0;
                a.wealth = 0.0;
                a.return_window.clear();
                defaults.push(i);
            }
        }

        if update_wealth {
            let r = self.switches.return_convention.step_return(prev_price, new_price);
            for a in self.agents.iter_mut().filter(|a| a.is_active()) {
                if a.return_window.len() == a.window_len {
                    a.return_window.pop_front();
                }
                a.return_window.push_back(r);
            }
        }

        let traded: f64 = row
            .iter()
            .zip(&self.prev_row)
            .map(|(new, old)| (new - old).abs())
            .sum();
        self.prev_row.copy_from_slice(&row);
        self.price = new_price;
        Ok(StepRecord {
            price: new_price,
            holdings: row,
            defaults,
            traded_volume: traded,
            at_discontinuity: solution.at_discontinuity,
        })
    }
}

/// Execute one full run. Deterministic for identical configs; aborts with
/// a flagged partial result if clearing ever fails.
pub fn run(config: &RunConfig) -> RunResult {
    let cal = &config.calibration;
    let n_steps = cal.n_timesteps;
    let burn_in = config.switches.burn_in;
    let spec = NoiseSpec { sigma: cal.eps_sigma, corr: cal.eps_corr, n_agents: cal.n_agents };
    let mut rng = stream_rng(config.seed, config.run_index, StreamPurpose::Shocks);
    let mut hasher = ShockHasher::new();
    let mut eps = vec![0.0; cal.n_agents];

    let mut prices = Vec::with_capacity(n_steps);
    let mut matrix: Option<Vec<Vec<f64>>> =
        config.record_per_agent.then(|| Vec::with_capacity(n_steps));
    let mut trade_volume = 0.0;
    let mut default_events = Vec::new();
    let mut aborted = false;
    let mut abort_reason = None;
    let mut clearing_failures = 0;

    let record = |rec: StepRecord,
                      recorded_t: Option<usize>,
                      first_recorded: bool,
                      prices: &mut Vec<f64>,
                      matrix: &mut Option<Vec<Vec<f64>>>,
                      trade_volume: &mut f64,
                      default_events: &mut Vec<(usize, usize)>| {
        let Some(t) = recorded_t else { return };
        prices.push(rec.price);
        if !first_recorded {
            *trade_volume += rec.traded_volume;
        }
        for &id in &rec.defaults {
            default_events.push((t, id));
        }
        if let Some(m) = matrix {
            m.push(rec.holdings);
        }
    };

    let sim_result = Simulation::new(cal, &config.regime, &config.switches, config.tax_deduction);
    let mut sim = match sim_result {
        Ok((sim, opening)) => {
            let recorded_t = (burn_in == 0).then_some(0);
            record(
                opening,
                recorded_t,
                true,
                &mut prices,
                &mut matrix,
                &mut trade_volume,
                &mut default_events,
            );
            Some(sim)
        }
        Err(e) => {
            aborted = true;
            clearing_failures = 1;
            abort_reason = Some(format!("opening clearing failed: {e}"));
            None
        }
    };

    if let Some(sim) = sim.as_mut() {
        let total_steps = burn_in + n_steps;
        for t in 1..total_steps {
            sample_epsilon_into(&spec, &mut rng, &mut eps);
            hasher.update(&eps);
            match sim.step(&eps) {
                Ok(rec) => {
                    let recorded_t = t.checked_sub(burn_in);
                    let first = recorded_t == Some(0);
                    record(
                        rec,
                        recorded_t,
                        first,
                        &mut prices,
                        &mut matrix,
                        &mut trade_volume,
                        &mut default_events,
                    );
                }
                Err(e) => {
                    aborted = true;
                    clearing_failures = 1;
                    abort_reason = Some(format!("clearing failed at step {t}: {e}"));
                    break;
                }
            }
        }
    }

    RunResult {
        prices,
        per_agent_demand: matrix,
        trade_volume,
        default_events,
        clearing_failures,
        aborted,
        abort_reason,
        seed: config.seed,
        run_index: config.run_index,
        regime: config.regime,
        shock_hash: hasher.finish(),
    }
}
