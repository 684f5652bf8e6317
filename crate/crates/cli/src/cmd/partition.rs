use std::collections::BTreeMap;

use incomedist_core::config::PerturbSpec;
use incomedist_core::micro_sim::{solve_period, SolverConfig};
use incomedist_core::partition::relabel_by_saving_rate;
use incomedist_core::{market_portfolio, partition_households, EconomyConfig};
use serde::Deserialize;
use serde_json::json;

use crate::error::Result;
use crate::output::Table;
use crate::{Context, Outcome};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionConfig {
    groups: usize,
    epsilon: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    solver: SolverConfig,
    economy: EconomyConfig,
}

pub fn run(ctx: &Context) -> Result<Outcome> {
    let mut cfg: PartitionConfig = toml::from_str(ctx.require_config()?)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let (state, path) = cfg.economy.build(cfg.seed, &BTreeMap::<String, PerturbSpec>::new(), &ctx.base_dir)?;
    let solution = solve_period(&state, path.record(state.period)?.loan_rate, &cfg.solver)?;
    let raw = partition_households(&state, cfg.groups, cfg.epsilon, cfg.seed)?;
    let (p, rates) = relabel_by_saving_rate(&raw, &state, &solution)?;

    let mut table = Table::new(&["household_id", "group_id"]);
    for (i, g) in p.assignment.iter().enumerate() {
        table.push(vec![(i + 1).into(), (g + 1).into()]);
    }
    let summary = json!({
        "households": state.households.len(),
        "groups": p.groups(),
        "epsilon": cfg.epsilon,
        "max_distance": p.max_distance(),
        "swaps": p.swaps,
        "sizes": p.sizes(),
        "distances": p.distances,
        "saving_rates": rates,
        "group_wealth": p.group_wealth,
        "market_portfolio": market_portfolio(&state.firms)?,
        "group_portfolios": p.group_portfolios,
    });

    let mut out = Outcome::default();
    out.artifacts.table("assignment", &table, ctx.format)?;
    out.artifacts.json("summary.json", &summary)?;
    out.seed = Some(cfg.seed);
    out.iterations.record(solution.diagnostics.iterations);
    out.parameters = json!({ "groups": cfg.groups, "epsilon": cfg.epsilon, "solver": cfg.solver });
    Ok(out)
}
