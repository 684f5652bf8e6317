//! Time-indexed exogenous inputs and assembly of a period's state from them.

use std::sync::Arc;

use log::debug;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::economy::{
    market_weights, EconomyState, FirmBlock, GoodsBlock, HouseholdBlock, Portfolio,
};
use crate::error::{Error, Result};
use crate::numeric::{self, sum_map};

/// A value that is either fixed for every period or tabulated per period.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule<T> {
    Constant(T),
    Table(Vec<T>),
}

impl<T> Schedule<T> {
    pub fn at(&self, period: usize) -> Result<&T> {
        match self {
            Schedule::Constant(v) => Ok(v),
            Schedule::Table(rows) => rows.get(period).ok_or_else(|| {
                Error::InsufficientData(format!(
                    "exogenous table has {} periods, period {period} requested",
                    rows.len()
                ))
            }),
        }
    }

    /// Number of periods covered, `None` when unbounded.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            Schedule::Constant(_) => None,
            Schedule::Table(rows) => Some(rows.len()),
        }
    }
}

impl<T> From<T> for Schedule<T> {
    fn from(v: T) -> Self {
        Schedule::Constant(v)
    }
}

/// Seeded additive Gaussian noise redrawn each period, clamped to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub sd: f64,
    pub seed: u64,
    pub min: f64,
    pub max: f64,
}

impl Perturbation {
    fn rng(&self, period: usize) -> ChaCha8Rng {
        let mix = (period as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ChaCha8Rng::seed_from_u64(self.seed ^ mix)
    }

    fn apply(&self, period: usize, xs: &[f64]) -> Vec<f64> {
        let mut rng = self.rng(period);
        xs.iter()
            .map(|&x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                (x + self.sd * e).clamp(self.min, self.max)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorSchedule {
    pub values: Schedule<Vec<f64>>,
    pub perturb: Option<Perturbation>,
}

impl VectorSchedule {
    pub fn at(&self, period: usize) -> Result<Vec<f64>> {
        let base = self.values.at(period)?;
        Ok(match &self.perturb {
            Some(p) => p.apply(period, base),
            None => base.clone(),
        })
    }
}

impl From<Vec<f64>> for VectorSchedule {
    fn from(v: Vec<f64>) -> Self {
        VectorSchedule {
            values: Schedule::Constant(v),
            perturb: None,
        }
    }
}

/// Exogenous inputs for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousRecord {
    pub loan_rate: f64,
    pub saving_rates: Vec<f64>,
    pub leverage_ratios: Vec<f64>,
    pub relative_wages: Vec<f64>,
    pub betas: Vec<f64>,
    pub portfolio: Portfolio,
    pub relative_prices: Vec<f64>,
    pub purchase_quantities: Arc<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousPath {
    pub loan_rate: Schedule<f64>,
    pub loan_rate_perturb: Option<Perturbation>,
    pub saving_rates: VectorSchedule,
    pub leverage_ratios: VectorSchedule,
    pub relative_wages: VectorSchedule,
    pub betas: VectorSchedule,
    pub portfolio: Schedule<Portfolio>,
    pub relative_prices: Schedule<Vec<f64>>,
    pub purchase_quantities: Schedule<Arc<Array2<f64>>>,
    /// Rebalance explicit portfolio weights so households jointly hold the
    /// market portfolio.
    pub clear_portfolios: bool,
}

impl ExogenousPath {
    /// A path that repeats `record` forever.
    pub fn constant(record: ExogenousRecord) -> Self {
        ExogenousPath {
            loan_rate: Schedule::Constant(record.loan_rate),
            loan_rate_perturb: None,
            saving_rates: record.saving_rates.into(),
            leverage_ratios: record.leverage_ratios.into(),
            relative_wages: record.relative_wages.into(),
            betas: record.betas.into(),
            portfolio: Schedule::Constant(record.portfolio),
            relative_prices: Schedule::Constant(record.relative_prices),
            purchase_quantities: Schedule::Constant(record.purchase_quantities),
            clear_portfolios: true,
        }
    }

    /// Smallest table length over all fields, `None` if every field is constant.
    pub fn horizon(&self) -> Option<usize> {
        [
            self.loan_rate.horizon(),
            self.saving_rates.values.horizon(),
            self.leverage_ratios.values.horizon(),
            self.relative_wages.values.horizon(),
            self.betas.values.horizon(),
            self.portfolio.horizon(),
            self.relative_prices.horizon(),
            self.purchase_quantities.horizon(),
        ]
        .into_iter()
        .flatten()
        .min()
    }

    pub fn record(&self, period: usize) -> Result<ExogenousRecord> {
        let mut loan_rate = *self.loan_rate.at(period)?;
        if let Some(p) = &self.loan_rate_perturb {
            loan_rate = p.apply(period, &[loan_rate])[0];
        }
        if !(loan_rate > -1.0) {
            return Err(Error::InvalidParameter(format!(
                "loan rate {loan_rate} must exceed -1 (period {period})"
            )));
        }
        Ok(ExogenousRecord {
            loan_rate,
            saving_rates: self.saving_rates.at(period)?,
            leverage_ratios: self.leverage_ratios.at(period)?,
            relative_wages: self.relative_wages.at(period)?,
            betas: self.betas.at(period)?,
            portfolio: self.portfolio.at(period)?.clone(),
            relative_prices: self.relative_prices.at(period)?.clone(),
            purchase_quantities: self.purchase_quantities.at(period)?.clone(),
        })
    }
}

/// Rescales betas so their equity-weighted mean is exactly one.
///
/// Returns the rescaled betas and the factor they were divided by.
pub fn normalize_betas(betas: &[f64], equity: &[f64]) -> Result<(Vec<f64>, f64)> {
    if betas.len() != equity.len() {
        return Err(Error::DimensionMismatch {
            what: "firm betas",
            expected: equity.len(),
            got: betas.len(),
        });
    }
    let factor = numeric::dot(betas, equity) / numeric::sum(equity);
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "value-weighted mean beta {factor} cannot be normalized to 1"
        )));
    }
    Ok((betas.iter().map(|b| b / factor).collect(), factor))
}

const CLEARING_TOL: f64 = 1e-13;
const CLEARING_MAX_ITER: usize = 10_000;

/// Iterative proportional fitting of portfolio weights.
///
/// Rows stay probability vectors; column scale factors are adjusted until the
/// gross-wealth-weighted aggregate holding equals `market` on every firm.
pub fn clear_portfolio(target: &Array2<f64>, gross: &[f64], market: &[f64]) -> Result<Array2<f64>> {
    let (n, f) = target.dim();
    if gross.len() != n || market.len() != f {
        return Err(Error::DimensionMismatch {
            what: "portfolio clearing",
            expected: n,
            got: gross.len(),
        });
    }
    let total = numeric::sum(gross);
    let mut v = target.clone();
    let mut residual = f64::INFINITY;
    for iter in 0..CLEARING_MAX_ITER {
        let held: Vec<f64> = (0..f)
            .map(|j| sum_map(n, |i| gross[i] * v[[i, j]]) / total)
            .collect();
        residual = held
            .iter()
            .zip(market)
            .map(|(h, m)| (h - m).abs())
            .fold(0.0, f64::max);
        if residual <= CLEARING_TOL {
            debug!("portfolio clearing converged in {iter} sweeps");
            return Ok(v);
        }
        let scale: Vec<f64> = held
            .iter()
            .zip(market)
            .map(|(&h, &m)| if h > 0.0 { m / h } else { 0.0 })
            .collect();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let mut acc = numeric::Accumulator::default();
            for (w, s) in row.iter_mut().zip(&scale) {
                *w *= s;
                acc.add(*w);
            }
            let t = acc.value();
            if t > 0.0 {
                row.mapv_inplace(|w| w / t);
            }
        }
    }
    Err(Error::NonConvergence {
        solver: "portfolio clearing",
        iterations: CLEARING_MAX_ITER,
        residual,
    })
}

/// Builds the state for `period` from endogenous stocks and exogenous inputs.
///
/// Betas are normalized against the given equity values, debts follow the
/// leverage ratios and explicit portfolios are cleared against the market
/// when `clear_portfolios` is set.
pub fn assemble_state(
    period: usize,
    net_assets: Vec<f64>,
    equity_values: Vec<f64>,
    record: &ExogenousRecord,
    price_level: f64,
    clear_portfolios: bool,
) -> Result<EconomyState> {
    let (betas, factor) = normalize_betas(&record.betas, &equity_values)?;
    if (factor - 1.0).abs() > 1e-12 {
        debug!("period {period}: betas rescaled by 1/{factor}");
    }
    let mut households = HouseholdBlock::new(
        net_assets,
        record.saving_rates.clone(),
        record.leverage_ratios.clone(),
        record.relative_wages.clone(),
        Portfolio::Market,
    )?;
    households.portfolio = match &record.portfolio {
        Portfolio::Dense(target) if clear_portfolios => {
            let gross: Vec<f64> = (0..households.len())
                .map(|i| households.gross_wealth(i))
                .collect();
            let market = market_weights(&equity_values);
            Portfolio::dense(clear_portfolio(target, &gross, &market)?)
        }
        other => other.clone(),
    };
    let firms = FirmBlock::new(equity_values, betas)?;
    let goods = GoodsBlock::new(
        record.relative_prices.clone(),
        (*record.purchase_quantities).clone(),
    )?;
    EconomyState::new(period, households, firms, goods, price_level)
}
