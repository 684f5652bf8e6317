use std::collections::BTreeSet;

use incomedist_core::micro_sim::{run_with, PeriodSolution};
use incomedist_core::{EconomyState, SimulationConfig};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::output::{Cell, Table};
use crate::{Context, Outcome};

const MACRO: [&str; 13] = [
    "t",
    "R",
    "p_x",
    "A_t",
    "W_t",
    "D_t",
    "C_t",
    "s_t",
    "iterations",
    "saving_identity",
    "return_identity",
    "dual_aggregation",
    "market_aggregation",
];

const SNAPSHOT: [&str; 9] = ["household_id", "a", "d", "s", "mu", "w_rel", "gross", "r", "y"];

fn snapshot(state: &EconomyState, solution: Option<&PeriodSolution>) -> Table {
    let h = &state.households;
    let mut t = Table::new(&SNAPSHOT);
    for i in 0..h.len() {
        t.push(vec![
            Cell::from(i + 1),
            h.net_assets[i].into(),
            h.debts[i].into(),
            h.saving_rates[i].into(),
            h.leverage_ratios[i].into(),
            h.relative_wages[i].into(),
            h.gross_wealth(i).into(),
            solution.map(|s| s.household_returns[i]).into(),
            solution.map(|s| s.incomes[i]).into(),
        ]);
    }
    t
}

pub fn run(ctx: &Context) -> Result<Outcome> {
    let mut cfg = SimulationConfig::from_toml(ctx.require_config()?)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let (initial, path) = cfg.economy.build(cfg.seed, &cfg.perturb, &ctx.base_dir)?;
    if let Some(&bad) = cfg.snapshots.iter().find(|&&t| t > cfg.periods) {
        return Err(CliError::Usage(format!(
            "snapshot period {bad} is beyond the {} simulated periods",
            cfg.periods
        )));
    }
    let wanted: BTreeSet<usize> = cfg.snapshots.iter().copied().collect();

    let mut out = Outcome::default();
    let mut series = Table::new(&MACRO);
    let mut snaps = Vec::new();
    let mut worst = [0.0_f64; 4];
    let last = run_with(&initial, &path, cfg.periods, &cfg.solver, |state, record, _next| {
        let s = &record.solution;
        let r = &record.residuals;
        out.iterations.record(s.diagnostics.iterations);
        for (w, x) in worst
            .iter_mut()
            .zip([r.saving_identity, r.return_identity, r.dual_aggregation, r.market_aggregation])
        {
            *w = w.max(x);
        }
        series.push(vec![
            state.period.into(),
            s.market_return.into(),
            s.price_level.into(),
            s.aggregates.net_assets.into(),
            s.aggregates.wages.into(),
            s.aggregates.debt.into(),
            s.aggregates.consumption.into(),
            s.aggregate_saving_rate.into(),
            s.diagnostics.iterations.into(),
            r.saving_identity.into(),
            r.return_identity.into(),
            r.dual_aggregation.into(),
            r.market_aggregation.into(),
        ]);
        if wanted.contains(&state.period) {
            snaps.push((state.period, snapshot(state, Some(s))));
        }
        Ok(())
    })?;
    if wanted.contains(&last.period) {
        snaps.push((last.period, snapshot(&last, None)));
    }

    out.artifacts.table("macro", &series, ctx.format)?;
    for (t, table) in &snaps {
        out.artifacts.table(&format!("snapshot_t{t:06}"), table, ctx.format)?;
    }
    out.seed = Some(cfg.seed);
    out.parameters = json!({
        "households": initial.households.len(),
        "firms": initial.firms.len(),
        "periods": cfg.periods,
        "solver": cfg.solver,
        "max_residuals": {
            "saving_identity": worst[0],
            "return_identity": worst[1],
            "dual_aggregation": worst[2],
            "market_aggregation": worst[3],
        },
    });
    Ok(out)
}
