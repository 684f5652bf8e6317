//! Per-period solution and stepping of the heterogeneous economy.
//!
//! Given a state, the unknowns of a period are the market return `R` and the
//! price level `p_x`. Firm returns follow the single-factor pricing rule,
//! household returns are portfolio averages of firm returns, the aggregate
//! saving rate is the income-weighted mean of individual rates, and `R`
//! satisfies the accumulation identity (aggregate net assets grow by
//! aggregate saving) and the market-return identity simultaneously.
//! The pair is found by damped fixed-point iteration with a bisection
//! fallback on `R`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::economy::{ensure_valid, market_weights, Aggregates, EconomyState, Portfolio};
use crate::error::{Error, Result};
use crate::exogenous::{assemble_state, ExogenousPath};
use crate::numeric::{self, sum_map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriceMode {
    /// Wages are paid at the current period's price level.
    #[default]
    Simultaneous,
    /// Wages are paid at last period's price level.
    Lagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub damping: f64,
    pub price_mode: PriceMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            relative_tolerance: 1e-10,
            damping: 0.5,
            price_mode: PriceMode::Simultaneous,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.relative_tolerance > 0.0) {
            return Err(Error::InvalidParameter("relative_tolerance must be > 0".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    FixedPoint,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub method: SolveMethod,
    pub iterations: usize,
    /// `|sum_i s_i y_i - A R| / A` at the returned solution.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodSolution {
    pub period: usize,
    pub loan_rate: f64,
    pub market_return: f64,
    pub price_level: f64,
    pub firm_returns: Vec<f64>,
    pub household_returns: Vec<f64>,
    /// `y_i = a_i r_i + w_i + d_i (r_i - loan_rate)`.
    pub incomes: Vec<f64>,
    pub aggregate_saving_rate: f64,
    pub aggregates: Aggregates,
    pub leverage: f64,
    pub diagnostics: SolveDiagnostics,
}

/// `z_j = loan_rate + beta_j (R - loan_rate)`.
pub fn firm_returns(market_return: f64, loan_rate: f64, betas: &[f64]) -> Vec<f64> {
    betas
        .iter()
        .map(|b| loan_rate + b * (market_return - loan_rate))
        .collect()
}

/// `r = V z`.
pub fn household_returns(weights: &Array2<f64>, firm_returns: &[f64]) -> Result<Vec<f64>> {
    if weights.ncols() != firm_returns.len() {
        return Err(Error::DimensionMismatch {
            what: "portfolio columns",
            expected: firm_returns.len(),
            got: weights.ncols(),
        });
    }
    Ok(weights
        .rows()
        .into_iter()
        .map(|row| {
            let mut acc = numeric::Accumulator::default();
            for (w, z) in row.iter().zip(firm_returns) {
                acc.add(w * z);
            }
            acc.value()
        })
        .collect())
}

fn portfolio_returns(state: &EconomyState, z: &[f64]) -> Result<Vec<f64>> {
    match &state.households.portfolio {
        Portfolio::Market => {
            let m = market_weights(&state.firms.equity_values);
            Ok(vec![numeric::dot(&m, z); state.households.len()])
        }
        Portfolio::Dense(v) => household_returns(v, z),
    }
}

const DEGENERATE_TOL: f64 = 1e-12;

/// The market return for which the saving identity and the market-return
/// identity hold together:
/// `R = s (W - D r) / (A (1 - s (1 + D / A)))`.
pub fn macro_return_closed_form(
    saving_rate: f64,
    wages: f64,
    debt: f64,
    assets: f64,
    loan_rate: f64,
) -> Result<f64> {
    let leverage = debt / assets;
    let denom = 1.0 - saving_rate * (1.0 + leverage);
    if denom.abs() < DEGENERATE_TOL || !denom.is_finite() {
        return Err(Error::Degenerate {
            context: "closed-form market return",
            value: denom,
        });
    }
    Ok(saving_rate * (wages - debt * loan_rate) / (assets * denom))
}

/// Price level that makes budget consumption equal the value of real purchases.
///
/// `household_returns` are the realized portfolio returns. With
/// `lagged_price = Some(p)` wages are paid at `p`; otherwise at the solved
/// level.
pub fn price_level(
    state: &EconomyState,
    household_returns: &[f64],
    loan_rate: f64,
    lagged_price: Option<f64>,
) -> Result<f64> {
    let h = &state.households;
    if household_returns.len() != h.len() {
        return Err(Error::DimensionMismatch {
            what: "household returns",
            expected: h.len(),
            got: household_returns.len(),
        });
    }
    let property = sum_map(h.len(), |i| {
        let r = household_returns[i];
        (1.0 - h.saving_rates[i]) * (h.net_assets[i] * r + h.debts[i] * (r - loan_rate))
    });
    let wage_real = sum_map(h.len(), |i| (1.0 - h.saving_rates[i]) * h.relative_wages[i]);
    let real_c = state.goods.real_consumption();
    solve_price(property, wage_real, real_c, lagged_price)
}

fn solve_price(property: f64, wage_real: f64, real_c: f64, lagged: Option<f64>) -> Result<f64> {
    let p = match lagged {
        Some(prev) => {
            if real_c.abs() < DEGENERATE_TOL {
                return Err(Error::Degenerate {
                    context: "price level (real consumption)",
                    value: real_c,
                });
            }
            (property + prev * wage_real) / real_c
        }
        None => {
            let denom = real_c - wage_real;
            if denom.abs() < DEGENERATE_TOL * real_c.abs().max(1.0) {
                return Err(Error::Degenerate {
                    context: "price level",
                    value: denom,
                });
            }
            property / denom
        }
    };
    if !(p > 0.0) {
        return Err(Error::NonPositivePrice(p));
    }
    Ok(p)
}

/// Aggregate coefficients of a period. Every income and saving sum is affine
/// in `(R, p)` once the portfolio betas are known.
struct Kernel {
    loan_rate: f64,
    assets: f64,
    debt: f64,
    wages_real: f64,
    real_c: f64,
    // sums with weight s_i, without, and with (1 - s_i)
    s_gb: f64,
    s_g: f64,
    s_d: f64,
    s_w: f64,
    gb: f64,
    g: f64,
    c_w: f64,
    lagged_price: Option<f64>,
}

struct Evaluation {
    price: f64,
    saving: f64,
    income: f64,
}

impl Kernel {
    fn new(state: &EconomyState, loan_rate: f64, mode: PriceMode) -> Self {
        let h = &state.households;
        let n = h.len();
        let b = h.portfolio.betas(n, &state.firms);
        let s = &h.saving_rates;
        let gross = |i: usize| h.net_assets[i] + h.debts[i];
        Kernel {
            loan_rate,
            assets: state.net_assets_total(),
            debt: state.debt_total(),
            wages_real: numeric::sum(&h.relative_wages),
            real_c: state.goods.real_consumption(),
            s_gb: sum_map(n, |i| s[i] * gross(i) * b[i]),
            s_g: sum_map(n, |i| s[i] * gross(i)),
            s_d: sum_map(n, |i| s[i] * h.debts[i]),
            s_w: sum_map(n, |i| s[i] * h.relative_wages[i]),
            gb: sum_map(n, |i| gross(i) * b[i]),
            g: sum_map(n, |i| gross(i)),
            c_w: sum_map(n, |i| (1.0 - s[i]) * h.relative_wages[i]),
            lagged_price: match mode {
                PriceMode::Lagged => Some(state.price_level),
                PriceMode::Simultaneous => None,
            },
        }
    }

    /// Property income (excluding wages) with weights `s`, or total.
    fn property(&self, r: f64, weighted: bool) -> f64 {
        let rb = self.loan_rate;
        if weighted {
            (r - rb) * self.s_gb + rb * self.s_g - rb * self.s_d
        } else {
            (r - rb) * self.gb + rb * self.g - rb * self.debt
        }
    }

    fn price(&self, r: f64) -> Result<f64> {
        let total = self.property(r, false);
        let saved = self.property(r, true);
        solve_price(total - saved, self.c_w, self.real_c, self.lagged_price)
    }

    fn wage_price(&self, price: f64) -> f64 {
        self.lagged_price.unwrap_or(price)
    }

    fn evaluate_at(&self, r: f64, price: f64) -> Evaluation {
        let pw = self.wage_price(price);
        Evaluation {
            price,
            saving: self.property(r, true) + pw * self.s_w,
            income: self.property(r, false) + pw * self.wages_real,
        }
    }

    /// Saving gap `sum s_i y_i - A R` with `p` taken from the price equation.
    fn gap(&self, r: f64) -> Result<f64> {
        let price = self.price_unchecked(r);
        let e = self.evaluate_at(r, price);
        Ok(e.saving - self.assets * r)
    }

    /// Like `price` but without the positivity check, for bracketing.
    fn price_unchecked(&self, r: f64) -> f64 {
        let total = self.property(r, false);
        let saved = self.property(r, true);
        let c = total - saved;
        match self.lagged_price {
            Some(prev) => (c + prev * self.c_w) / self.real_c,
            None => c / (self.real_c - self.c_w),
        }
    }

    /// One undamped fixed-point map `R -> closed form(s_t(R, p(R)), W(p(R)))`.
    fn map(&self, r: f64) -> Result<(f64, f64)> {
        let price = self.price(r)?;
        let e = self.evaluate_at(r, price);
        if e.income.abs() < f64::MIN_POSITIVE {
            return Err(Error::Degenerate {
                context: "aggregate income",
                value: e.income,
            });
        }
        let s_t = e.saving / e.income;
        let wages = self.wage_price(price) * self.wages_real;
        let next = macro_return_closed_form(s_t, wages, self.debt, self.assets, self.loan_rate)?;
        Ok((next, e.price))
    }
}

fn fixed_point(k: &Kernel, r0: f64, cfg: &SolverConfig) -> Result<(f64, usize)> {
    let mut r = r0;
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.max_iterations {
        let (mapped, _) = k.map(r)?;
        let next = (1.0 - cfg.damping) * r + cfg.damping * mapped;
        if !next.is_finite() {
            break;
        }
        residual = (mapped - r).abs() / r.abs().max(1.0);
        r = next;
        if residual <= cfg.relative_tolerance {
            return Ok((r, it));
        }
    }
    Err(Error::NonConvergence {
        solver: "fixed-point iteration",
        iterations: cfg.max_iterations,
        residual,
    })
}

fn bisection(k: &Kernel, cfg: &SolverConfig) -> Result<(f64, usize)> {
    let (mut lo, mut hi) = (-0.9_f64, 10.0_f64);
    let mut g_lo = k.gap(lo)?;
    let mut g_hi = k.gap(hi)?;
    let mut expansions = 0;
    while g_lo.signum() == g_hi.signum() && expansions < 60 {
        lo = -1.0 + (lo + 1.0) * 0.5;
        hi *= 2.0;
        g_lo = k.gap(lo)?;
        g_hi = k.gap(hi)?;
        expansions += 1;
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::NonConvergence {
            solver: "bisection bracket",
            iterations: expansions,
            residual: g_lo.abs().min(g_hi.abs()) / k.assets,
        });
    }
    let mut iterations = 0;
    while iterations < 10_000 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let g_mid = k.gap(mid)?;
        if g_mid == 0.0 {
            return Ok((mid, iterations));
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= cfg.relative_tolerance * mid.abs().max(1.0) * 1e-3 {
            break;
        }
    }
    Ok((0.5 * (lo + hi), iterations))
}

/// Secant steps on the (affine) saving gap; only accepted while they shrink it.
fn polish(k: &Kernel, mut r: f64) -> f64 {
    for _ in 0..3 {
        let h = 1e-6 * r.abs().max(1e-3);
        let (g0, g1) = match (k.gap(r), k.gap(r + h)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return r,
        };
        if g1 == g0 || g0 == 0.0 {
            return r;
        }
        let cand = r - g0 * h / (g1 - g0);
        match k.gap(cand) {
            Ok(gc) if gc.abs() < g0.abs() => r = cand,
            _ => return r,
        }
    }
    r
}

/// Solves the period's joint fixed point for `(R, p_x)`.
pub fn solve_period(state: &EconomyState, loan_rate: f64, config: &SolverConfig) -> Result<PeriodSolution> {
    config.validate()?;
    if !(loan_rate > -1.0) {
        return Err(Error::InvalidParameter(format!("loan rate {loan_rate} must exceed -1")));
    }
    let kernel = Kernel::new(state, loan_rate, config.price_mode);
    if !(kernel.assets > 0.0) {
        return Err(Error::InvalidParameter("aggregate net assets must be positive".into()));
    }

    let start = {
        let wages = kernel.wage_price(state.price_level) * kernel.wages_real;
        let mean_s = kernel.s_g / kernel.g.max(f64::MIN_POSITIVE);
        macro_return_closed_form(mean_s, wages, kernel.debt, kernel.assets, loan_rate).unwrap_or(loan_rate)
    };

    let (r, method, iterations) = match fixed_point(&kernel, start, config) {
        Ok((r, it)) => (r, SolveMethod::FixedPoint, it),
        Err(_) => {
            let (r, it) = bisection(&kernel, config)?;
            (r, SolveMethod::Bisection, it)
        }
    };
    let market_return = polish(&kernel, r);
    let price = kernel.price(market_return)?;

    // Full vectors at the solution.
    let z = firm_returns(market_return, loan_rate, &state.firms.betas);
    let returns = portfolio_returns(state, &z)?;
    let h = &state.households;
    let wage_price = kernel.wage_price(price);
    let incomes: Vec<f64> = (0..h.len())
        .map(|i| {
            let r = returns[i];
            h.net_assets[i] * r + wage_price * h.relative_wages[i] + h.debts[i] * (r - loan_rate)
        })
        .collect();
    let saving = sum_map(h.len(), |i| h.saving_rates[i] * incomes[i]);
    let income = numeric::sum(&incomes);
    let aggregate_saving_rate = saving / income;
    let residual = (saving - kernel.assets * market_return).abs() / kernel.assets;
    if !(residual <= config.relative_tolerance) {
        return Err(Error::NonConvergence {
            solver: "period solve",
            iterations,
            residual,
        });
    }

    let aggregates = Aggregates {
        consumption: price * kernel.real_c,
        net_assets: kernel.assets,
        wages: wage_price * kernel.wages_real,
        debt: kernel.debt,
    };
    Ok(PeriodSolution {
        period: state.period,
        loan_rate,
        market_return,
        price_level: price,
        firm_returns: z,
        household_returns: returns,
        incomes,
        aggregate_saving_rate,
        aggregates,
        leverage: kernel.debt / kernel.assets,
        diagnostics: SolveDiagnostics {
            method,
            iterations,
            residual,
        },
    })
}

/// Identity residuals of a completed step, all relative to `A_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepResiduals {
    /// `A_{t+1} - A_t` against `s_t [A_t R + W_t + D_t (R - r)]`.
    pub saving_identity: f64,
    /// Firm-side `A_{t+1}` against `A_t (1 + R)`.
    pub return_identity: f64,
    /// Household against firm side total wealth after the step.
    pub dual_aggregation: f64,
    /// `sum_j (A_j / A) z_j` against `R`.
    pub market_aggregation: f64,
}

/// New stocks after a solved period: `(net assets, equity values)`.
pub fn advance_stocks(state: &EconomyState, solution: &PeriodSolution) -> (Vec<f64>, Vec<f64>) {
    let h = &state.households;
    let assets = (0..h.len())
        .map(|i| h.net_assets[i] + h.saving_rates[i] * solution.incomes[i])
        .collect();
    let equity = state
        .firms
        .equity_values
        .iter()
        .zip(&solution.firm_returns)
        .map(|(a, z)| a * (1.0 + z))
        .collect();
    (assets, equity)
}

pub fn step_residuals(state: &EconomyState, solution: &PeriodSolution, next: &EconomyState) -> StepResiduals {
    let a = state.net_assets_total();
    let r = solution.market_return;
    let agg = &solution.aggregates;
    let household_next = next.net_assets_total();
    let firm_next = next.firms.total_equity();
    let predicted = solution.aggregate_saving_rate
        * (a * r + agg.wages + agg.debt * (r - solution.loan_rate));
    let market = numeric::dot(&state.firms.equity_values, &solution.firm_returns) / state.firms.total_equity();
    StepResiduals {
        saving_identity: ((household_next - a) - predicted).abs() / a,
        return_identity: (firm_next - a * (1.0 + r)).abs() / a,
        dual_aggregation: next.dual_aggregation_residual(),
        market_aggregation: (market - r).abs(),
    }
}

/// Advances one period: solves period `t`, accumulates stocks and assembles
/// the state for `t + 1` from the path.
pub fn step(
    state: &EconomyState,
    path: &ExogenousPath,
    config: &SolverConfig,
) -> Result<(EconomyState, PeriodSolution, StepResiduals)> {
    let t = state.period;
    let inner = || -> Result<_> {
        let loan_rate = path.record(t)?.loan_rate;
        let solution = solve_period(state, loan_rate, config)?;
        let (assets, equity) = advance_stocks(state, &solution);
        let next_record = path.record(t + 1)?;
        let next = assemble_state(
            t + 1,
            assets,
            equity,
            &next_record,
            solution.price_level,
            path.clear_portfolios,
        )?;
        ensure_valid(&next)?;
        let residuals = step_residuals(state, &solution, &next);
        Ok((next, solution, residuals))
    };
    inner().map_err(|e| e.at_period(t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodRecord {
    pub solution: PeriodSolution,
    pub residuals: StepResiduals,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// States `0..=T`.
    pub states: Vec<EconomyState>,
    /// Solutions and residuals for periods `0..T`.
    pub periods: Vec<PeriodRecord>,
}

/// Runs `periods` steps, handing each completed step to `observe` instead of
/// retaining states. Returns the final state.
pub fn run_with<F>(
    initial: &EconomyState,
    path: &ExogenousPath,
    periods: usize,
    config: &SolverConfig,
    mut observe: F,
) -> Result<EconomyState>
where
    F: FnMut(&EconomyState, &PeriodRecord, &EconomyState) -> Result<()>,
{
    config.validate()?;
    if let Some(h) = path.horizon() {
        // period t needs records t and t + 1
        if h < initial.period + periods + 1 && periods > 0 {
            return Err(Error::InsufficientData(format!(
                "exogenous path covers {h} periods, run needs {}",
                initial.period + periods + 1
            )));
        }
    }
    ensure_valid(initial).map_err(|e| e.at_period(initial.period))?;
    let mut state = initial.clone();
    for _ in 0..periods {
        let (next, solution, residuals) = step(&state, path, config)?;
        let record = PeriodRecord { solution, residuals };
        observe(&state, &record, &next)?;
        state = next;
    }
    Ok(state)
}

pub fn run(
    initial: &EconomyState,
    path: &ExogenousPath,
    periods: usize,
    config: &SolverConfig,
) -> Result<RunResult> {
    let mut states = vec![initial.clone()];
    let mut records = Vec::with_capacity(periods);
    run_with(initial, path, periods, config, |_, rec, next| {
        states.push(next.clone());
        records.push(rec.clone());
        Ok(())
    })?;
    Ok(RunResult {
        states,
        periods: records,
    })
}
