//! Demand-side mathematics for a single agent: mispricing signal,
//! unconstrained demand, the leverage / VaR / short-sale caps, and the
//! no-trade threshold of the transaction tax.
//!
//! All functions are pure. When several restrictions hit at once, the one
//! with the smallest absolute demand wins; the tax threshold is applied
//! last, on top of the capped demand.

use crate::calibration::RegulatoryRegime;

/// Lower bound on a VaR estimate, keeping the demand cap finite when the
/// estimated loss quantile degenerates to zero or below.
pub const VAR_FLOOR: f64 = 1e-6;

/// Mispricing signal: perceived value minus price. Positive means the
/// asset looks undervalued and the agent wants to buy.
pub fn mispricing(log_perceived: f64, price: f64) -> f64 {
    debug_assert!(price > 0.0);
    log_perceived.exp() - price
}

/// Demand absent any cap: beta * m * W / p.
pub fn unconstrained_demand(m: f64, beta: f64, wealth: f64, price: f64) -> f64 {
    debug_assert!(price > 0.0);
    beta * m * wealth / price
}

/// Holdings interval allowed by the leverage cap:
/// ((1 - lambda_max) * W / p, lambda_max * W / p).
pub fn leverage_bounds(wealth: f64, price: f64, lambda_max: f64) -> (f64, f64) {
    debug_assert!(price > 0.0 && wealth > 0.0);
    ((1.0 - lambda_max) * wealth / price, lambda_max * wealth / price)
}

/// Per-unit value-at-risk from a rolling window of asset returns:
/// max(alpha * sd - mean, VAR_FLOOR), where `alpha` is the standard-normal
/// quantile of the configured confidence level.
///
/// Returns `None` while the window holds fewer than two observations
/// (warm-up); the caller skips the VaR cap for that step.
pub fn compute_var_with_alpha(window: impl Iterator<Item = f64> + Clone, alpha: f64) -> Option<f64> {
    let n = window.clone().count();
    if n < 2 {
        return None;
    }
    let mean = window.clone().sum::<f64>() / n as f64;
    let ss: f64 = window.map(|r| (r - mean) * (r - mean)).sum();
    let sd = (ss / (n as f64 - 1.0)).sqrt();
    Some((alpha * sd - mean).max(VAR_FLOOR))
}

/// As [`compute_var_with_alpha`], but taking the quantile itself.
pub fn compute_var(window: &[f64], var_quantile: f64) -> Option<f64> {
    use statrs::distribution::ContinuousCDF;
    let alpha = statrs::distribution::Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(var_quantile);
    compute_var_with_alpha(window.iter().copied(), alpha)
}

/// Agent-constant inputs to a demand evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DemandParams {
    pub beta: f64,
    pub shorts_allowed: bool,
    pub lambda_max: f64,
    /// No-trade threshold Gamma_i; only read when the regime taxes trades.
    pub gamma: f64,
}

/// Inputs that change with the candidate price.
#[derive(Debug, Clone, Copy)]
pub struct DemandContext {
    /// Candidate clearing price, > 0.
    pub price: f64,
    /// Wealth evaluated at the candidate price, > 0 for an active agent.
    pub wealth: f64,
    /// Mispricing signal at the candidate price.
    pub mispricing: f64,
    /// Holdings carried over from the previous step.
    pub prev_demand: f64,
    /// Per-unit VaR estimate; present iff the VaR overlay applies this step.
    pub var_estimate: Option<f64>,
}

/// Demand of one agent under the given regime.
///
/// The unconstrained demand is clipped by every active restriction, with
/// the minimum absolute value winning when several hit at once. Under a
/// transaction tax the agent keeps its previous position whenever the
/// trade it targets is smaller than Gamma_i. The target is the demand
/// under the leverage and VaR size limits but before the short-sale
/// floor: flooring it would erase the sell side of the signal and lock
/// agents into positions smaller than Gamma_i forever. The retained
/// position stays subject to every cap, so a position that has outgrown
/// a shrunken cap is cut down even inside the no-trade zone.
pub fn demand(params: &DemandParams, ctx: &DemandContext, regime: &RegulatoryRegime) -> f64 {
    let unc = unconstrained_demand(ctx.mispricing, params.beta, ctx.wealth, ctx.price);
    let target = size_limited(unc, params, ctx, regime);
    if regime.tax_active() && (target - ctx.prev_demand).abs() < params.gamma {
        apply_caps(ctx.prev_demand, params, ctx, regime)
    } else {
        apply_caps(target, params, ctx, regime)
    }
}

/// Leverage and VaR caps without the short-sale floor.
fn size_limited(candidate: f64, params: &DemandParams, ctx: &DemandContext, regime: &RegulatoryRegime) -> f64 {
    let (lo, hi) = leverage_bounds(ctx.wealth, ctx.price, params.lambda_max);
    let mut d = candidate.clamp(lo, hi);
    if regime.var_limit {
        if let Some(var) = ctx.var_estimate {
            debug_assert!(var > 0.0);
            let cap = ctx.wealth / (ctx.price * var);
            d = d.clamp(-cap, cap);
        }
    }
    d
}

/// Clip a demand candidate by the leverage bounds, the VaR cap, and the
/// short-sale floor. Every cap is an interval around zero, so sequential
/// clamping realizes the min-|D| combination rule.
fn apply_caps(candidate: f64, params: &DemandParams, ctx: &DemandContext, regime: &RegulatoryRegime) -> f64 {
    let mut d = size_limited(candidate, params, ctx, regime);
    if (regime.ssban || !params.shorts_allowed) && d < 0.0 {
        d = 0.0;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn baseline() -> RegulatoryRegime {
        RegulatoryRegime::baseline()
    }

    fn params(beta: f64) -> DemandParams {
        DemandParams { beta, shorts_allowed: true, lambda_max: 10.0, gamma: 0.0 }
    }

    fn ctx(price: f64, wealth: f64, m: f64) -> DemandContext {
        DemandContext { price, wealth, mispricing: m, prev_demand: 0.0, var_estimate: None }
    }

    #[test]
    fn mispricing_examples() {
        assert_eq!(mispricing(0.0, 1.0), 0.0);
        assert_eq!(mispricing(0.0, 0.5), 0.5);
        assert_relative_eq!(mispricing(1.1f64.ln(), 1.0), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn unconstrained_demand_examples() {
        assert_eq!(unconstrained_demand(0.0, 37.0, 5.0, 2.0), 0.0);
        assert_relative_eq!(unconstrained_demand(0.1, 25.0, 2.0, 1.0), 5.0);
        assert_relative_eq!(unconstrained_demand(-0.05, 10.0, 2.0, 0.5), -2.0);
    }

    #[test]
    fn leverage_bounds_examples() {
        assert_eq!(leverage_bounds(2.0, 1.0, 10.0), (-18.0, 20.0));
        assert_eq!(leverage_bounds(2.0, 1.0, 1.0), (0.0, 2.0));
        assert_eq!(leverage_bounds(2.0, 0.5, 10.0), (-36.0, 40.0));
    }

    /// Inverse standard-normal CDF, Acklam's rational approximation.
    /// Test-only oracle, independent of the statrs implementation used in
    /// production code. Absolute error below 1.2e-9 on (0, 1).
    fn inverse_normal_oracle(p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0);
        const A: [f64; 6] = [
            -3.969683028665376e+01,
            2.209460984245205e+02,
            -2.759285104469687e+02,
            1.383577518672690e+02,
            -3.066479806614716e+01,
            2.506628277459239e+00,
        ];
        const B: [f64; 5] = [
            -5.447609879822406e+01,
            1.615858368580409e+02,
            -1.556989798598866e+02,
            6.680131188771972e+01,
            -1.328068155288572e+01,
        ];
        const C: [f64; 6] = [
            -7.784894002430293e-03,
            -3.223964580411365e-01,
            -2.400758277161838e+00,
            -2.549732539343734e+00,
            4.374664141464968e+00,
            2.938163982698783e+00,
        ];
        const D: [f64; 4] = [
            7.784695709041462e-03,
            3.224671290700398e-01,
            2.445134137142996e+00,
            3.754408661907416e+00,
        ];
        let p_low = 0.02425;
        if p < p_low {
            let q = (-2.0 * p.ln()).sqrt();
            (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
                / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
        } else if p <= 1.0 - p_low {
            let q = p - 0.5;
            let r = q * q;
            (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
                / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
        } else {
            let q = (-2.0 * (1.0 - p).ln()).sqrt();
            -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
                / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
        }
    }

    #[test]
    fn var_two_point_window() {
        // sd of {+0.01, -0.01} is 0.0141421..., alpha at 99% is 2.326348.
        let alpha_oracle = inverse_normal_oracle(0.99);
        assert_relative_eq!(alpha_oracle, 2.326348, epsilon = 1e-5);
        let var = compute_var(&[0.01, -0.01], 0.99).unwrap();
        assert_relative_eq!(var, alpha_oracle * 0.01 * 2f64.sqrt(), epsilon = 1e-7);
        assert_relative_eq!(var, 0.032901, epsilon = 1e-5);
    }

    #[test]
    fn var_degenerate_window_hits_floor() {
        let var = compute_var(&[0.0; 16], 0.99).unwrap();
        assert_eq!(var, VAR_FLOOR);
    }

    #[test]
    fn var_warmup_signal() {
        assert!(compute_var(&[], 0.99).is_none());
        assert!(compute_var(&[0.01], 0.99).is_none());
    }

    #[test]
    fn var_monte_carlo_window() {
        // 500 draws from N(0, 0.02^2): VaR should be near 2.326 * 0.02.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let window: Vec<f64> = (0..500)
            .map(|_| 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let var = compute_var(&window, 0.99).unwrap();
        assert_relative_eq!(var, 2.326 * 0.02, max_relative = 0.15);
    }

    #[test]
    fn demand_below_all_caps() {
        let d = demand(&params(25.0), &ctx(1.0, 2.0, 0.1), &baseline());
        assert_relative_eq!(d, 5.0);
    }

    #[test]
    fn demand_hits_leverage_cap() {
        // Unconstrained 25 exceeds lambda_max * W / p = 20; m > m_crit = 0.4.
        let d = demand(&params(25.0), &ctx(1.0, 2.0, 0.5), &baseline());
        assert_relative_eq!(d, 20.0);
    }

    #[test]
    fn demand_short_cap() {
        let d = demand(&params(25.0), &ctx(1.0, 2.0, -1.0), &baseline());
        assert_relative_eq!(d, -18.0);
    }

    #[test]
    fn ban_floors_negative_demand() {
        let regime = RegulatoryRegime { ssban: true, ..RegulatoryRegime::baseline() };
        let d = demand(&params(25.0), &ctx(1.0, 2.0, -0.2), &regime);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn no_short_agent_behaves_like_banned() {
        let p = DemandParams { shorts_allowed: false, ..params(25.0) };
        let d = demand(&p, &ctx(1.0, 2.0, -0.2), &baseline());
        assert_eq!(d, 0.0);
    }

    #[test]
    fn var_cap_wins_by_min_abs() {
        let regime = RegulatoryRegime { var_limit: true, ..RegulatoryRegime::baseline() };
        // VaR 0.1: cap W/(p*VaR) = 20 ties with the leverage cap.
        let mut c = ctx(1.0, 2.0, 0.5);
        c.var_estimate = Some(0.1);
        assert_relative_eq!(demand(&params(25.0), &c, &regime), 20.0);
        // VaR 0.2: cap 10 is the tightest restriction.
        c.var_estimate = Some(0.2);
        assert_relative_eq!(demand(&params(25.0), &c, &regime), 10.0);
    }

    #[test]
    fn tax_threshold_keeps_previous_position() {
        let regime = RegulatoryRegime { tax_level: 0.003, ..RegulatoryRegime::baseline() };
        let p = DemandParams { beta: 14.0, shorts_allowed: true, lambda_max: 10.0, gamma: 0.3 };
        // D* = 5.2 vs previous 5: |delta| = 0.2 < 0.3, keep 5.
        let mut c = ctx(1.0, 2.0, 5.2 / 28.0);
        c.prev_demand = 5.0;
        assert_relative_eq!(demand(&p, &c, &regime), 5.0);
        // D* = 5.5: |delta| = 0.5 >= 0.3, trade through.
        c.mispricing = 5.5 / 28.0;
        assert_relative_eq!(demand(&p, &c, &regime), 5.5, epsilon = 1e-12);
    }

    /// Independent combination oracle: apply every active restriction to a
    /// candidate separately and keep the value with the smallest absolute
    /// magnitude. The tax threshold swaps the candidate for the previous
    /// position, which stays subject to the caps like any other candidate.
    fn min_abs_capped(cand: f64, p: &DemandParams, c: &DemandContext, regime: &RegulatoryRegime) -> f64 {
        let mut candidates = vec![cand];
        let (lo, hi) = ((1.0 - p.lambda_max) * c.wealth / c.price, p.lambda_max * c.wealth / c.price);
        candidates.push(cand.clamp(lo, hi));
        if regime.var_limit {
            if let Some(v) = c.var_estimate {
                let cap = c.wealth / (c.price * v);
                candidates.push(cand.clamp(-cap, cap));
            }
        }
        if (regime.ssban || !p.shorts_allowed) && cand < 0.0 {
            candidates.push(0.0);
        }
        candidates
            .into_iter()
            .min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap()
    }

    fn demand_oracle(p: &DemandParams, c: &DemandContext, regime: &RegulatoryRegime) -> f64 {
        let unc = p.beta * c.mispricing * c.wealth / c.price;
        let (lo, hi) = ((1.0 - p.lambda_max) * c.wealth / c.price, p.lambda_max * c.wealth / c.price);
        let mut target = unc.clamp(lo, hi);
        if regime.var_limit {
            if let Some(v) = c.var_estimate {
                let cap = c.wealth / (c.price * v);
                target = target.clamp(-cap, cap);
            }
        }
        if regime.tax_active() && (target - c.prev_demand).abs() < p.gamma {
            min_abs_capped(c.prev_demand, p, c, regime)
        } else {
            min_abs_capped(target, p, c, regime)
        }
    }

    #[test]
    fn combination_rule_matches_min_abs_oracle() {
        let ms = [-1.2, -0.45, -0.1, 0.0, 0.07, 0.3, 0.9];
        let betas = [10.0, 25.0, 50.0];
        let wealths = [0.5, 2.0];
        let prices = [0.5, 1.0, 2.0];
        let vars = [0.05, 0.25];
        let prevs = [-4.0, 0.0, 3.0];
        for ssban in [false, true] {
            for var_limit in [false, true] {
                for tax in [0.0, 0.003] {
                    let regime = RegulatoryRegime { ssban, var_limit, tax_level: tax };
                    for &beta in &betas {
                        for &w in &wealths {
                            for &price in &prices {
                                for &m in &ms {
                                    for &v in &vars {
                                        for &prev in &prevs {
                                            for shorts in [false, true] {
                                                let p = DemandParams {
                                                    beta,
                                                    shorts_allowed: shorts,
                                                    lambda_max: 10.0,
                                                    gamma: beta / 0.14 * tax,
                                                };
                                                let c = DemandContext {
                                                    price,
                                                    wealth: w,
                                                    mispricing: m,
                                                    prev_demand: prev,
                                                    var_estimate: var_limit.then_some(v),
                                                };
                                                let got = demand(&p, &c, &regime);
                                                let want = demand_oracle(&p, &c, &regime);
                                                assert_eq!(got, want,
                                                    "regime {regime:?} beta {beta} w {w} p {price} m {m} var {v} prev {prev} shorts {shorts}");
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reduces_to_plain_demand_without_overlays() {
        // tax 0, no ban, no VaR: equals clamp(beta * m, 1-lambda, lambda) * W / p.
        for &m in &[-2.0, -0.39, -0.1, 0.0, 0.2, 0.41, 3.0] {
            for &beta in &[10.0, 30.0, 50.0] {
                for &w in &[0.3, 2.0, 7.0] {
                    for &price in &[0.2, 1.0, 5.0] {
                        let got = demand(&params(beta), &ctx(price, w, m), &baseline());
                        let want = (beta * m).clamp(1.0 - 10.0, 10.0) * w / price;
                        approx::assert_relative_eq!(got, want, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn any_regime() -> impl Strategy<Value = RegulatoryRegime> {
            (any::<bool>(), any::<bool>(), prop_oneof![Just(0.0), 0.0005..0.05f64]).prop_map(
                |(ssban, var_limit, tax_level)| RegulatoryRegime { ssban, var_limit, tax_level },
            )
        }

        proptest! {
            /// Without a ban, zero previous position and no tax history
            /// effect: demand keeps the sign of the mispricing signal and is
            /// non-decreasing in it.
            #[test]
            fn sign_and_monotonicity_in_mispricing(
                beta in 10.0..50.0f64,
                w in 0.1..5.0f64,
                price in 0.1..5.0f64,
                m in -1.0..1.0f64,
                dm in 0.0..0.5f64,
                var in 0.02..0.5f64,
                var_on in any::<bool>(),
            ) {
                let regime = RegulatoryRegime { ssban: false, var_limit: var_on, tax_level: 0.0 };
                let p = DemandParams { beta, shorts_allowed: true, lambda_max: 10.0, gamma: 0.0 };
                let c = DemandContext {
                    price, wealth: w, mispricing: m, prev_demand: 0.0,
                    var_estimate: var_on.then_some(var),
                };
                let d = demand(&p, &c, &regime);
                if m >= 0.0 { prop_assert!(d >= 0.0); } else { prop_assert!(d <= 0.0); }
                let c2 = DemandContext { mispricing: m + dm, ..c };
                prop_assert!(demand(&p, &c2, &regime) >= d - 1e-12);
            }

            /// Monotonicity in m survives the tax threshold.
            #[test]
            fn monotone_in_mispricing_with_tax(
                beta in 10.0..50.0f64,
                w in 0.1..5.0f64,
                price in 0.1..5.0f64,
                m in -1.0..1.0f64,
                dm in 0.0..0.5f64,
                prev in -10.0..10.0f64,
                tax in 0.0005..0.05f64,
            ) {
                let regime = RegulatoryRegime { ssban: false, var_limit: false, tax_level: tax };
                let p = DemandParams { beta, shorts_allowed: true, lambda_max: 10.0, gamma: beta / 0.14 * tax };
                let c = DemandContext { price, wealth: w, mispricing: m, prev_demand: prev, var_estimate: None };
                let c2 = DemandContext { mispricing: m + dm, ..c };
                prop_assert!(demand(&p, &c2, &regime) >= demand(&p, &c, &regime) - 1e-12);
            }

            /// The result never exceeds any active cap; absent tax
            /// retention it also never exceeds the unconstrained demand,
            /// and a retained position inside the caps comes back exactly.
            #[test]
            fn cap_dominance(
                beta in 10.0..50.0f64,
                w in 0.1..5.0f64,
                price in 0.1..5.0f64,
                m in -2.0..2.0f64,
                prev in -10.0..10.0f64,
                var in 0.02..0.5f64,
                regime in any_regime(),
                shorts in any::<bool>(),
            ) {
                let p = DemandParams { beta, shorts_allowed: shorts, lambda_max: 10.0, gamma: beta / 0.14 * regime.tax_level };
                let c = DemandContext {
                    price, wealth: w, mispricing: m, prev_demand: prev,
                    var_estimate: regime.var_limit.then_some(var),
                };
                let d = demand(&p, &c, &regime);
                let tol = 1e-12;
                // Every cap binds the outcome unconditionally.
                if d >= 0.0 {
                    prop_assert!(d <= 10.0 * w / price + tol);
                } else {
                    prop_assert!(-d <= 9.0 * w / price + tol);
                }
                if regime.var_limit {
                    // Portfolio VaR never exceeds wealth.
                    prop_assert!(d.abs() * price * var <= w + tol);
                }
                if regime.ssban { prop_assert!(d >= 0.0); }
                // Without retention the magnitude is capped by the
                // unconstrained demand as well.
                let unc = beta * m * w / price;
                let mut target = unc.clamp(-9.0 * w / price, 10.0 * w / price);
                if regime.var_limit {
                    target = target.clamp(-w / (price * var), w / (price * var));
                }
                let retained = regime.tax_active() && (target - prev).abs() < p.gamma;
                if !retained {
                    prop_assert!(d.abs() <= unc.abs() + tol);
                } else {
                    // Caps only ever shrink the retained position, and a
                    // position inside every cap is kept exactly.
                    prop_assert!(d.abs() <= prev.abs() + tol);
                    let lev_ok = prev >= -9.0 * w / price && prev <= 10.0 * w / price;
                    let var_ok = !regime.var_limit || prev.abs() * price * var <= w;
                    let ban_ok = !(regime.ssban || !shorts) || prev >= 0.0;
                    if lev_ok && var_ok && ban_ok {
                        prop_assert_eq!(d, prev);
                    }
                }
            }

            /// A ban keeps newly set demand non-negative for any input.
            #[test]
            fn ban_is_a_zero_floor(
                beta in 10.0..50.0f64,
                w in 0.1..5.0f64,
                price in 0.1..5.0f64,
                m in -3.0..3.0f64,
                var in 0.02..0.5f64,
                var_on in any::<bool>(),
            ) {
                let regime = RegulatoryRegime { ssban: true, var_limit: var_on, tax_level: 0.0 };
                let p = DemandParams { beta, shorts_allowed: true, lambda_max: 10.0, gamma: 0.0 };
                let c = DemandContext {
                    price, wealth: w, mispricing: m, prev_demand: 0.0,
                    var_estimate: var_on.then_some(var),
                };
                prop_assert!(demand(&p, &c, &regime) >= 0.0);
            }
        }
    }
}
