//! Simulation of a heterogeneous-household economy where aggregate saving
//! links returns, wages and the income distribution.
//!
//! The crate is organised by model layer:
//!
//! * [`economy`] and [`exogenous`]: state containers, invariants and inputs.
//! * [`micro_sim`]: per-period solution and stepping of the full economy.
//! * [`partition`] and [`asymptotic`]: household groups and their long-run
//!   wealth dynamics.
//! * [`ge`]: a two-period equilibrium with storable capital goods.
//! * [`empirical`]: quarterly data transformations and the premium regression.

pub mod asymptotic;
pub mod config;
pub mod economy;
pub mod empirical;
pub mod error;
pub mod exogenous;
pub mod ge;
pub mod micro_sim;
pub mod numeric;
pub mod partition;

pub use asymptotic::{
    evolve_groups, fit_power_law, fit_rank_loglog, predicted_loglog_slope, prop2_ratio, steady_state_return,
    FitRange, GroupSetup, GroupTrajectory, ReturnSource, SavingSchedule, TailFit,
};
pub use config::{EconomyConfig, SimulationConfig, VectorSpec};
pub use economy::{
    aggregate, ensure_valid, validate, Aggregates, EconomyState, FirmBlock, GoodsBlock, HouseholdBlock, Invariant,
    Portfolio, Violation,
};
pub use empirical::{derive_columns, generate_synthetic, load_series, regress, QuarterlySeries, RegressionReport};
pub use error::{Error, ErrorKind, Result};
pub use exogenous::{ExogenousPath, ExogenousRecord, Schedule};
pub use ge::{arbitrage_gap, solve_ge, GEParams, GESolution};
pub use micro_sim::{
    firm_returns, household_returns, macro_return_closed_form, price_level, run, run_with, solve_period, step,
    PeriodSolution, PriceMode, RunResult, SolverConfig,
};
pub use numeric::SimpleOls;
pub use partition::{group_saving_rate, market_portfolio, partition_households, Partition};
