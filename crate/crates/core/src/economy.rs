//! State containers and the aggregation identities shared by every module.
//!
//! Household and firm data are parallel flat vectors indexed by agent; a state
//! is an immutable value and stepping produces a new one.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{self, sum, sum_map};

pub const PORTFOLIO_ROW_TOL: f64 = 1e-12;
pub const BETA_NORMALIZATION_TOL: f64 = 1e-9;
pub const DUAL_AGGREGATION_TOL: f64 = 1e-9;
pub const PORTFOLIO_CLEARING_TOL: f64 = 1e-9;

/// Household portfolio weights over firms.
///
/// `Market` means every household holds the value-weighted market portfolio
/// and is stored implicitly. `Dense` is a household x firm matrix whose rows
/// are probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Portfolio {
    Market,
    Dense(Arc<Array2<f64>>),
}

impl Portfolio {
    pub fn dense(weights: Array2<f64>) -> Self {
        Portfolio::Dense(Arc::new(weights))
    }

    /// Weight of household `i` on every firm.
    pub fn row(&self, i: usize, firms: &FirmBlock) -> Vec<f64> {
        match self {
            Portfolio::Market => market_weights(&firms.equity_values),
            Portfolio::Dense(v) => v.row(i).to_vec(),
        }
    }

    /// Portfolio beta `b_i = sum_j w_ij beta_j` for every household.
    pub fn betas(&self, n_households: usize, firms: &FirmBlock) -> Vec<f64> {
        match self {
            Portfolio::Market => {
                let m = market_weights(&firms.equity_values);
                vec![numeric::dot(&m, &firms.betas); n_households]
            }
            Portfolio::Dense(v) => {
                use rayon::prelude::*;
                let beta = &firms.betas;
                let rows: Vec<_> = v.axis_iter(Axis(0)).collect();
                rows.par_iter()
                    .map(|row| {
                        let mut acc = numeric::Accumulator::default();
                        for (w, b) in row.iter().zip(beta) {
                            acc.add(w * b);
                        }
                        acc.value()
                    })
                    .collect()
            }
        }
    }
}

pub(crate) fn market_weights(equity: &[f64]) -> Vec<f64> {
    let total = sum(equity);
    equity.iter().map(|a| a / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdBlock {
    pub net_assets: Vec<f64>,
    pub saving_rates: Vec<f64>,
    pub leverage_ratios: Vec<f64>,
    /// Labor income in units of the numeraire good.
    pub relative_wages: Vec<f64>,
    pub portfolio: Portfolio,
    pub debts: Vec<f64>,
}

impl HouseholdBlock {
    /// Builds the block with `debts = leverage_ratios * net_assets`.
    pub fn new(
        net_assets: Vec<f64>,
        saving_rates: Vec<f64>,
        leverage_ratios: Vec<f64>,
        relative_wages: Vec<f64>,
        portfolio: Portfolio,
    ) -> Result<Self> {
        let n = net_assets.len();
        for (what, len) in [
            ("saving_rates", saving_rates.len()),
            ("leverage_ratios", leverage_ratios.len()),
            ("relative_wages", relative_wages.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        if let Portfolio::Dense(v) = &portfolio {
            if v.nrows() != n {
                return Err(Error::DimensionMismatch {
                    what: "portfolio rows",
                    expected: n,
                    got: v.nrows(),
                });
            }
        }
        let debts = leverage_ratios
            .iter()
            .zip(&net_assets)
            .map(|(m, a)| m * a)
            .collect();
        Ok(Self {
            net_assets,
            saving_rates,
            leverage_ratios,
            relative_wages,
            portfolio,
            debts,
        })
    }

    pub fn len(&self) -> usize {
        self.net_assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net_assets.is_empty()
    }

    /// Invested gross position `a_i + d_i`.
    pub fn gross_wealth(&self, i: usize) -> f64 {
        self.net_assets[i] + self.debts[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirmBlock {
    pub equity_values: Vec<f64>,
    pub betas: Vec<f64>,
}

impl FirmBlock {
    pub fn new(equity_values: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if equity_values.len() != betas.len() {
            return Err(Error::DimensionMismatch {
                what: "firm betas",
                expected: equity_values.len(),
                got: betas.len(),
            });
        }
        Ok(Self {
            equity_values,
            betas,
        })
    }

    /// Firm values implied by households' gross holdings, scaled so that
    /// total equity equals total household net assets.
    pub fn from_household_claims(households: &HouseholdBlock, betas: Vec<f64>) -> Result<Self> {
        let v = match &households.portfolio {
            Portfolio::Dense(v) => v,
            Portfolio::Market => {
                return Err(Error::InvalidParameter(
                    "firm values from claims need explicit portfolio weights".into(),
                ))
            }
        };
        if v.ncols() != betas.len() {
            return Err(Error::DimensionMismatch {
                what: "firm betas",
                expected: v.ncols(),
                got: betas.len(),
            });
        }
        let n = households.len();
        let gross_total = sum_map(n, |i| households.gross_wealth(i));
        let net_total = sum(&households.net_assets);
        let equity = (0..v.ncols())
            .map(|j| sum_map(n, |i| households.gross_wealth(i) * v[[i, j]]) * net_total / gross_total)
            .collect();
        Ok(Self {
            equity_values: equity,
            betas,
        })
    }

    pub fn len(&self) -> usize {
        self.equity_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equity_values.is_empty()
    }

    pub fn total_equity(&self) -> f64 {
        sum(&self.equity_values)
    }

    /// Equity-value-weighted mean beta.
    pub fn weighted_beta(&self) -> f64 {
        numeric::dot(&self.equity_values, &self.betas) / self.total_equity()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoodsBlock {
    /// Prices relative to the numeraire; entry 0 is the numeraire.
    pub relative_prices: Vec<f64>,
    /// household x good real purchase quantities.
    pub purchase_quantities: Array2<f64>,
}

impl GoodsBlock {
    pub fn new(relative_prices: Vec<f64>, purchase_quantities: Array2<f64>) -> Result<Self> {
        if purchase_quantities.ncols() != relative_prices.len() {
            return Err(Error::DimensionMismatch {
                what: "purchase quantity columns",
                expected: relative_prices.len(),
                got: purchase_quantities.ncols(),
            });
        }
        Ok(Self {
            relative_prices,
            purchase_quantities,
        })
    }

    /// Real consumption of household `i` in numeraire units.
    pub fn real_consumption_of(&self, i: usize) -> f64 {
        let row = self.purchase_quantities.row(i);
        let mut acc = numeric::Accumulator::default();
        for (q, p) in row.iter().zip(&self.relative_prices) {
            acc.add(q * p);
        }
        acc.value()
    }

    /// Aggregate real consumption `sum_i sum_j q_ij p_j / p_x`.
    pub fn real_consumption(&self) -> f64 {
        sum_map(self.purchase_quantities.nrows(), |i| self.real_consumption_of(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EconomyState {
    pub period: usize,
    pub households: HouseholdBlock,
    pub firms: FirmBlock,
    pub goods: GoodsBlock,
    pub price_level: f64,
}

impl EconomyState {
    pub fn new(
        period: usize,
        households: HouseholdBlock,
        firms: FirmBlock,
        goods: GoodsBlock,
        price_level: f64,
    ) -> Result<Self> {
        if goods.purchase_quantities.nrows() != households.len() {
            return Err(Error::DimensionMismatch {
                what: "purchase quantity rows",
                expected: households.len(),
                got: goods.purchase_quantities.nrows(),
            });
        }
        if let Portfolio::Dense(v) = &households.portfolio {
            if v.ncols() != firms.len() {
                return Err(Error::DimensionMismatch {
                    what: "portfolio columns",
                    expected: firms.len(),
                    got: v.ncols(),
                });
            }
        }
        Ok(Self {
            period,
            households,
            firms,
            goods,
            price_level,
        })
    }

    pub fn net_assets_total(&self) -> f64 {
        sum(&self.households.net_assets)
    }

    pub fn debt_total(&self) -> f64 {
        sum(&self.households.debts)
    }

    /// `|sum a_i - sum A_j| / sum A_j`.
    pub fn dual_aggregation_residual(&self) -> f64 {
        let firm = self.firms.total_equity();
        (self.net_assets_total() - firm).abs() / firm.abs()
    }
}

impl Default for EconomyState {
    /// One household owning one firm through the market portfolio.
    fn default() -> Self {
        let households = HouseholdBlock::new(
            vec![100.0],
            vec![0.5],
            vec![0.2],
            vec![10.0],
            Portfolio::Market,
        )
        .expect("consistent dimensions");
        let firms = FirmBlock::new(vec![100.0], vec![1.0]).expect("consistent dimensions");
        let goods = GoodsBlock::new(vec![1.0], Array2::from_elem((1, 1), 10.0))
            .expect("consistent dimensions");
        EconomyState::new(0, households, firms, goods, 1.0).expect("consistent dimensions")
    }
}

/// Aggregate money magnitudes for one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregates {
    pub consumption: f64,
    pub net_assets: f64,
    pub wages: f64,
    pub debt: f64,
}

/// Column sums `(C_t, A_t, W_t, D_t)` at price level `price_level`.
///
/// Total wealth is computed from both the household and the firm side and the
/// two must agree.
pub fn aggregate(state: &EconomyState, price_level: f64) -> Result<Aggregates> {
    let household = state.net_assets_total();
    let firm = state.firms.total_equity();
    let residual = (household - firm).abs() / firm.abs().max(f64::MIN_POSITIVE);
    if residual > DUAL_AGGREGATION_TOL {
        return Err(Error::AggregationMismatch {
            household,
            firm,
            residual,
        });
    }
    Ok(Aggregates {
        consumption: price_level * state.goods.real_consumption(),
        net_assets: household,
        wages: price_level * sum(&state.households.relative_wages),
        debt: state.debt_total(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Invariant {
    Dimensions,
    SavingRateRange,
    LeverageRange,
    PortfolioRowSum,
    PortfolioNonNegative,
    PortfolioClearing,
    DebtIdentity,
    EquityPositive,
    BetaNormalization,
    NumerairePrice,
    RelativePricePositive,
    PurchaseNonNegative,
    DualAggregation,
    PriceLevelPositive,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub invariant: Invariant,
    pub index: Option<usize>,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{:?}[{}] residual {:e}", self.invariant, i, self.residual),
            None => write!(f, "{:?} residual {:e}", self.invariant, self.residual),
        }
    }
}

/// Every invariant violation in `state`; empty when the state is consistent.
pub fn validate(state: &EconomyState) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |invariant, index, residual| {
        out.push(Violation {
            invariant,
            index,
            residual,
        })
    };
    let h = &state.households;
    let n = h.len();
    let f = state.firms.len();

    if n == 0 || f == 0 {
        push(Invariant::Dimensions, None, 0.0);
        return out;
    }

    for (i, &s) in h.saving_rates.iter().enumerate() {
        if !(0.0..1.0).contains(&s) {
            push(Invariant::SavingRateRange, Some(i), s);
        }
    }
    for (i, &m) in h.leverage_ratios.iter().enumerate() {
        if !(0.0..1.0).contains(&m) {
            push(Invariant::LeverageRange, Some(i), m);
        }
    }
    for i in 0..n {
        let a = h.net_assets[i];
        let w = h.relative_wages[i];
        if !a.is_finite() || !w.is_finite() {
            push(Invariant::NonFinite, Some(i), f64::NAN);
        }
        let expected = h.leverage_ratios[i] * a;
        let r = (h.debts[i] - expected).abs();
        if r > 4.0 * f64::EPSILON * expected.abs() {
            push(Invariant::DebtIdentity, Some(i), r);
        }
    }

    if let Portfolio::Dense(v) = &h.portfolio {
        for (i, row) in v.axis_iter(Axis(0)).enumerate() {
            let mut acc = numeric::Accumulator::default();
            let mut negative = false;
            for &w in row.iter() {
                acc.add(w);
                negative |= w < 0.0;
            }
            let r = acc.value() - 1.0;
            if r.abs() > PORTFOLIO_ROW_TOL {
                push(Invariant::PortfolioRowSum, Some(i), r);
            }
            if negative {
                push(Invariant::PortfolioNonNegative, Some(i), row.iter().cloned().fold(0.0, f64::min));
            }
        }
        if state.firms.equity_values.iter().all(|&a| a > 0.0) {
            let m = market_weights(&state.firms.equity_values);
            let gross = sum_map(n, |i| h.gross_wealth(i));
            for (j, &mj) in m.iter().enumerate() {
                let held = sum_map(n, |i| h.gross_wealth(i) * v[[i, j]]) / gross;
                let r = held - mj;
                if r.abs() > PORTFOLIO_CLEARING_TOL {
                    push(Invariant::PortfolioClearing, Some(j), r);
                }
            }
        }
    }

    let mut equity_ok = true;
    for (j, &a) in state.firms.equity_values.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            equity_ok = false;
            push(Invariant::EquityPositive, Some(j), a);
        }
    }
    if equity_ok {
        let r = state.firms.weighted_beta() - 1.0;
        if !(r.abs() <= BETA_NORMALIZATION_TOL) {
            push(Invariant::BetaNormalization, None, r);
        }
    }

    let g = &state.goods;
    if let Some(&p0) = g.relative_prices.first() {
        if p0 != 1.0 {
            push(Invariant::NumerairePrice, Some(0), p0 - 1.0);
        }
    }
    for (j, &p) in g.relative_prices.iter().enumerate() {
        if !(p > 0.0) {
            push(Invariant::RelativePricePositive, Some(j), p);
        }
    }
    for ((i, _), &q) in g.purchase_quantities.indexed_iter() {
        if !(q >= 0.0) {
            push(Invariant::PurchaseNonNegative, Some(i), q);
        }
    }

    if equity_ok {
        let r = state.dual_aggregation_residual();
        if !(r <= DUAL_AGGREGATION_TOL) {
            push(Invariant::DualAggregation, None, r);
        }
    }
    if !(state.price_level > 0.0) {
        push(Invariant::PriceLevelPositive, None, state.price_level);
    }
    out
}

/// `validate` as a `Result`.
pub fn ensure_valid(state: &EconomyState) -> Result<()> {
    let v = validate(state);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> EconomyState {
        let h = HouseholdBlock::new(
            vec![60.0, 40.0],
            vec![0.3, 0.2],
            vec![0.1, 0.1],
            vec![5.0, 5.0],
            Portfolio::Market,
        )
        .unwrap();
        let firms = FirmBlock::new(vec![70.0, 30.0], vec![1.0, 1.0]).unwrap();
        let goods = GoodsBlock::new(vec![1.0], Array2::from_elem((2, 1), 5.0)).unwrap();
        EconomyState::new(0, h, firms, goods, 1.0).unwrap()
    }

    #[test]
    fn single_agent_sums() {
        let mut state = EconomyState::default();
        state.households = HouseholdBlock::new(
            vec![100.0],
            vec![0.5],
            vec![0.2],
            vec![10.0],
            Portfolio::Market,
        )
        .unwrap();
        let agg = aggregate(&state, 1.0).unwrap();
        assert_eq!(agg.net_assets, 100.0);
        assert_eq!(agg.wages, 10.0);
        assert_eq!(agg.debt, 20.0);
        assert_eq!(agg.consumption, 10.0);
    }

    #[test]
    fn two_sided_total_wealth() {
        let s = two_by_two();
        let agg = aggregate(&s, 1.0).unwrap();
        assert_eq!(agg.net_assets, 100.0);
        assert_eq!(s.firms.total_equity(), 100.0);
    }

    #[test]
    fn mismatch_is_an_error() {
        let mut s = two_by_two();
        s.firms.equity_values[0] = 75.0;
        assert!(matches!(
            aggregate(&s, 1.0),
            Err(Error::AggregationMismatch { .. })
        ));
    }

    #[test]
    fn claims_construction_agrees_at_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let f = 20;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let mut v = Array2::<f64>::zeros((n, f));
        for i in 0..n {
            let row: Vec<f64> = (0..f).map(|_| rng.random_range(0.0..1.0)).collect();
            let t: f64 = row.iter().sum();
            for j in 0..f {
                v[[i, j]] = row[j] / t;
            }
        }
        let h = HouseholdBlock::new(a, vec![0.2; n], mu, vec![1.0; n], Portfolio::dense(v)).unwrap();
        let firms = FirmBlock::from_household_claims(&h, vec![1.0; f]).unwrap();
        let goods = GoodsBlock::new(vec![1.0], Array2::from_elem((n, 1), 1.0)).unwrap();
        let s = EconomyState::new(0, h, firms, goods, 1.0).unwrap();
        assert!(s.dual_aggregation_residual() < 1e-12);
        assert!(validate(&s).is_empty(), "{:?}", validate(&s));
    }

    #[test]
    fn default_state_is_consistent() {
        assert!(validate(&EconomyState::default()).is_empty());
    }

    #[test]
    fn short_portfolio_row_is_named() {
        let mut s = two_by_two();
        s.households.portfolio = Portfolio::dense(array![[0.7, 0.3], [0.6, 0.3]]);
        let v = validate(&s);
        let rows: Vec<_> = v
            .iter()
            .filter(|x| x.invariant == Invariant::PortfolioRowSum)
            .collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].index, Some(1));
        assert!((rows[0].residual + 0.1).abs() < 1e-12);
    }

    #[test]
    fn beta_mean_off_by_five_percent() {
        let mut s = two_by_two();
        s.firms.betas = vec![1.05, 1.05];
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, Invariant::BetaNormalization);
        assert!((v[0].residual - 0.05).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_rates() {
        let mut s = two_by_two();
        s.households.saving_rates[1] = 1.0;
        s.households.leverage_ratios[0] = 1.2;
        s.households.debts[0] = 1.2 * 60.0;
        let kinds: Vec<_> = validate(&s).into_iter().map(|v| v.invariant).collect();
        assert!(kinds.contains(&Invariant::SavingRateRange));
        assert!(kinds.contains(&Invariant::LeverageRange));
    }
}
