//! Market clearing: find the price at which aggregate demand equals the
//! number of shares outstanding.
//!
//! Wealth is coupled to the candidate price (marking the previous position
//! to market), so demand and price are solved simultaneously. The solver
//! brackets a sign change of excess demand by geometric expansion around
//! the previous price and then runs a Brent-style hybrid of bisection and
//! inverse quadratic interpolation, which tolerates the kinks introduced
//! by the caps and the jumps introduced by the tax threshold.

use thiserror::Error;

use crate::calibration::RegulatoryRegime;
use crate::model::{demand, DemandContext, DemandParams};

/// Hard price bounds for bracket expansion.
pub const PRICE_FLOOR: f64 = 1e-6;
pub const PRICE_CEILING: f64 = 1e6;

/// Per-agent inputs to one clearing solve. Only active agents appear here;
/// defaulted agents contribute zero demand by omission.
#[derive(Debug, Clone, Copy)]
pub struct ClearingAgent {
    pub beta: f64,
    pub shorts_allowed: bool,
    /// Perceived fundamental value, exp(log perception), fixed within a step.
    pub perceived_value: f64,
    /// Wealth after the previous step (W_{t-1}).
    pub prev_wealth: f64,
    /// Holdings after the previous step (D_{t-1}).
    pub prev_demand: f64,
    /// Per-unit VaR estimate; None while warming up or without the overlay.
    pub var_estimate: Option<f64>,
    /// No-trade threshold Gamma_i at the active tax level.
    pub gamma: f64,
}

/// One timestep's clearing problem.
#[derive(Debug, Clone)]
pub struct ClearingProblem<'a> {
    pub agents: &'a [ClearingAgent],
    pub regime: &'a RegulatoryRegime,
    pub lambda_max: f64,
    pub n_shares: f64,
    pub prev_price: f64,
    /// Flip the mispricing sign (sensitivity switch).
    pub flip_mispricing: bool,
}

/// Result of a successful clearing solve.
#[derive(Debug, Clone)]
pub struct ClearingSolution {
    pub price: f64,
    pub per_agent_demand: Vec<f64>,
    /// Aggregate demand minus shares outstanding at `price`.
    pub residual: f64,
    /// Number of excess-demand evaluations spent.
    pub iterations: u32,
    /// True when excess demand jumps across zero at `price` (tax threshold)
    /// instead of crossing it; demands come from the side with the smaller
    /// absolute residual.
    pub at_discontinuity: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClearingError {
    #[error(
        "no sign change of excess demand on [{price_floor}, {price_ceiling}]: \
         excess {excess_at_floor} at floor, {excess_at_ceiling} at ceiling"
    )]
    NoBracket {
        price_floor: f64,
        price_ceiling: f64,
        excess_at_floor: f64,
        excess_at_ceiling: f64,
    },
    #[error("excess demand evaluated to a non-finite value at price {price}")]
    NonFinite { price: f64 },
}

/// Demand of one agent at a candidate price, with wealth marked to market.
/// Agents whose wealth at the candidate price is not positive contribute
/// zero (they will default this step).
pub fn agent_demand_at(problem: &ClearingProblem<'_>, agent: &ClearingAgent, price: f64) -> f64 {
    let wealth = agent.prev_wealth + agent.prev_demand * (price - problem.prev_price);
    if wealth <= 0.0 {
        return 0.0;
    }
    let raw_m = agent.perceived_value - price;
    let m = if problem.flip_mispricing { -raw_m } else { raw_m };
    let params = DemandParams {
        beta: agent.beta,
        shorts_allowed: agent.shorts_allowed,
        lambda_max: problem.lambda_max,
        gamma: agent.gamma,
    };
    let ctx = DemandContext {
        price,
        wealth,
        mispricing: m,
        prev_demand: agent.prev_demand,
        var_estimate: agent.var_estimate,
    };
    demand(&params, &ctx, problem.regime)
}

/// Aggregate demand at `price` minus the shares outstanding.
pub fn aggregate_excess_demand(problem: &ClearingProblem<'_>, price: f64) -> f64 {
    debug_assert!(price > 0.0);
    let total: f64 = problem
        .agents
        .iter()
        .map(|a| agent_demand_at(problem, a, price))
        .sum();
    total - problem.n_shares
}

fn fill_demands(problem: &ClearingProblem<'_>, price: f64) -> Vec<f64> {
    problem
        .agents
        .iter()
        .map(|a| agent_demand_at(problem, a, price))
        .collect()
}

/// Solve the clearing equation to a relative residual of
/// `tolerance * n_shares`, or settle on a tax-threshold jump when excess
/// demand has no exact zero.
pub fn clear_market(
    problem: &ClearingProblem<'_>,
    tolerance: f64,
) -> Result<ClearingSolution, ClearingError> {
    debug_assert!(tolerance > 0.0);
    let res_tol = tolerance * problem.n_shares.abs();
    let mut evals: u32 = 0;
    let mut f = |p: f64| -> Result<f64, ClearingError> {
        evals += 1;
        let v = aggregate_excess_demand(problem, p);
        if !v.is_finite() {
            return Err(ClearingError::NonFinite { price: p });
        }
        Ok(v)
    };

    let p0 = problem.prev_price.clamp(PRICE_FLOOR, PRICE_CEILING);
    let f0 = f(p0)?;
    if f0.abs() <= res_tol {
        let demands = fill_demands(problem, p0);
        return Ok(ClearingSolution {
            price: p0,
            per_agent_demand: demands,
            residual: f0,
            iterations: evals,
            at_discontinuity: false,
        });
    }

    // Geometric bracket expansion; evaluated points kept in ascending price
    // order. A bracket is an adjacent pair with strictly opposite signs
    // outside the residual deadband: a price at which trade executes.
    // Points inside the deadband mark a zero-residual no-trade plateau:
    // with a no-trade threshold active, every agent can be frozen over a
    // whole price interval whose aggregate holdings already equal the
    // shares outstanding. A trading price is preferred whenever one exists
    // in [PRICE_FLOOR, PRICE_CEILING]; otherwise the quote drifts to the
    // nearest plateau edge without a trade.
    let mut pts: Vec<(f64, f64)> = vec![(p0, f0)];
    enum Feature {
        Bracket((f64, f64), (f64, f64)),
        Plateau { flat: (f64, f64), toward: (f64, f64) },
    }
    let feature = 'expand: loop {
        if let Some((_, pair)) = find_bracket(&pts, p0, res_tol) {
            break 'expand Feature::Bracket(pair.0, pair.1);
        }
        let lo = pts.first().unwrap().0;
        let hi = pts.last().unwrap().0;
        let mut grew = false;
        if lo > PRICE_FLOOR {
            let nlo = (lo * 0.5).max(PRICE_FLOOR);
            pts.insert(0, (nlo, f(nlo)?));
            grew = true;
        }
        if hi < PRICE_CEILING {
            let nhi = (hi * 2.0).min(PRICE_CEILING);
            pts.push((nhi, f(nhi)?));
            grew = true;
        }
        if !grew {
            if let Some((_, flat, toward)) = nearest_flat(&pts, p0, res_tol) {
                break 'expand Feature::Plateau { flat, toward };
            }
            return Err(ClearingError::NoBracket {
                price_floor: PRICE_FLOOR,
                price_ceiling: PRICE_CEILING,
                excess_at_floor: pts.first().unwrap().1,
                excess_at_ceiling: pts.last().unwrap().1,
            });
        }
    };

    let bracket = match feature {
        Feature::Bracket(x, y) => (x, y),
        Feature::Plateau { flat, toward } => {
            // Bisect for the plateau edge nearest the previous price: the
            // smallest price move after which the market clears without a
            // trade.
            let (mut outside, mut inside) = (toward.0, flat.0);
            let mut f_inside = flat.1;
            for _ in 0..100 {
                if (inside - outside).abs() <= 1e-12 * inside.abs().max(1e-9) {
                    break;
                }
                let mid = 0.5 * (inside + outside);
                let fm = f(mid)?;
                if fm.abs() <= res_tol {
                    inside = mid;
                    f_inside = fm;
                } else {
                    outside = mid;
                }
            }
            let demands = fill_demands(problem, inside);
            return Ok(ClearingSolution {
                price: inside,
                per_agent_demand: demands,
                residual: f_inside,
                iterations: evals,
                at_discontinuity: false,
            });
        }
    };

    let ((mut a, mut fa), (mut b, mut fb)) = bracket;
    // Keep b the endpoint with the smaller |f|; c tracks the opposite side.
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let (mut d, mut e) = (b - a, b - a);
    const MACHEPS: f64 = f64::EPSILON;
    const MAX_ITER: u32 = 200;

    for _ in 0..MAX_ITER {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * MACHEPS * b.abs() + 0.5e-13;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            break;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation (secant when a == c).
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }

    // b holds the best point; c the opposite-sign side of the final bracket.
    let (price, residual) = if fb.abs() <= fc.abs() { (b, fb) } else { (c, fc) };
    let demands = fill_demands(problem, price);
    Ok(ClearingSolution {
        price,
        per_agent_demand: demands,
        residual,
        iterations: evals,
        at_discontinuity: residual.abs() > res_tol,
    })
}

/// Adjacent pair with strictly opposite signs outside the deadband,
/// closest to the seed point; returns (distance, pair).
#[allow(clippy::type_complexity)]
fn find_bracket(
    pts: &[(f64, f64)],
    seed: f64,
    deadband: f64,
) -> Option<(f64, ((f64, f64), (f64, f64)))> {
    let mut best: Option<(f64, ((f64, f64), (f64, f64)))> = None;
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo.1 > deadband && hi.1 < -deadband || lo.1 < -deadband && hi.1 > deadband {
            let dist = (lo.0 - seed).abs().min((hi.0 - seed).abs());
            if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                best = Some((dist, (lo, hi)));
            }
        }
    }
    best
}

/// Evaluated point inside the residual deadband closest to the seed,
/// together with its non-flat neighbor on the seed side; returns
/// (distance, flat point, neighbor).
#[allow(clippy::type_complexity)]
fn nearest_flat(
    pts: &[(f64, f64)],
    seed: f64,
    deadband: f64,
) -> Option<(f64, (f64, f64), (f64, f64))> {
    let mut best: Option<(f64, (f64, f64), (f64, f64))> = None;
    for (i, p) in pts.iter().enumerate() {
        if p.1.abs() > deadband {
            continue;
        }
        let toward = if p.0 > seed {
            if i == 0 {
                continue;
            }
            pts[i - 1]
        } else {
            if i + 1 >= pts.len() {
                continue;
            }
            pts[i + 1]
        };
        if toward.1.abs() <= deadband {
            // Not the plateau edge nearest the seed; a closer flat point
            // exists on the seed side.
            continue;
        }
        let dist = (p.0 - seed).abs();
        if best.as_ref().is_none_or(|(bd, _, _)| dist < *bd) {
            best = Some((dist, *p, toward));
        }
    }
    best
}
