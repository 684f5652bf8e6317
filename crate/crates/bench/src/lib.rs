//! Shared inputs for the benchmarks.

use std::collections::BTreeMap;
use std::path::Path;

use incomedist_core::{EconomyState, ExogenousPath, SimulationConfig};

/// Builds an economy with `households` households and `firms` firms that
/// clears at a positive price level.
pub fn economy(households: usize, firms: usize, seed: u64) -> (EconomyState, ExogenousPath) {
    let text = format!(
        r#"
periods = 1
[economy]
households = {households}
firms = {firms}
net_assets = {{ distribution = "lognormal", mu = 1.0, sigma = 1.0 }}
saving_rates = {{ distribution = "uniform", low = 0.1, high = 0.4 }}
leverage_ratios = {{ distribution = "uniform", low = 0.0, high = 0.3 }}
relative_wages = {{ distribution = "uniform", low = 0.5, high = 1.5 }}
betas = {{ distribution = "uniform", low = 0.5, high = 1.5 }}
portfolio = {{ rule = "dirichlet", concentration = 1.0 }}
purchase_quantities = 0.5
loan_rate = 0.03
"#
    );
    let cfg = SimulationConfig::from_toml(&text).expect("valid economy");
    cfg.economy
        .build(seed, &BTreeMap::new(), Path::new("."))
        .expect("economy builds")
}
