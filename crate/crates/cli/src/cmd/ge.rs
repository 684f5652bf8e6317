use std::fmt::Write as _;

use incomedist_core::ge::{budget_residuals, residuals, GESolverOptions, PERIOD_FIELDS};
use incomedist_core::{arbitrage_gap, solve_ge, GEParams, GESolution};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::Result;
use crate::output::Table;
use crate::{Context, Outcome};

#[derive(Debug, Clone, Deserialize)]
struct GeConfig {
    #[serde(flatten)]
    params: GEParams,
    #[serde(default)]
    solver: GESolverOptions,
}

fn table_text(sol: &GESolution, delta: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:>22} {:>22}", "", "t = 1", "t = 2");
    let [a, b] = [sol.periods[0].to_array(), sol.periods[1].to_array()];
    for (k, name) in PERIOD_FIELDS.iter().enumerate() {
        let _ = writeln!(s, "{name:<6} {:>22.15e} {:>22.15e}", a[k], b[k]);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "delta         {delta:.15e}");
    let _ = writeln!(s, "max residual  {:.3e}", sol.max_residual);
    let _ = writeln!(s, "rank          {}", sol.rank);
    let _ = writeln!(s, "boundary      {}", sol.boundary);
    s
}

pub fn run(ctx: &Context) -> Result<Outcome> {
    let cfg: GeConfig = toml::from_str(ctx.require_config()?)?;
    let sol = solve_ge(&cfg.params, &cfg.solver)?;
    let gap = arbitrage_gap(&sol);
    let values: Map<String, Value> = GESolution::labels()
        .into_iter()
        .zip(sol.values())
        .map(|(k, v)| (k, json!(v)))
        .collect();
    let summary = json!({
        "values": values,
        "delta": gap.gap,
        "price_ratio_k1": gap.ratio_k1,
        "price_ratio_k2": gap.ratio_k2,
        "max_residual": sol.max_residual,
        "residuals": residuals(&cfg.params, &sol.values()).to_vec(),
        "budget_residuals": budget_residuals(&cfg.params, &sol),
        "rank": sol.rank,
        "boundary": sol.boundary,
        "start": sol.start,
        "iterations": sol.iterations,
    });
    let mut table = Table::new(&["variable", "t1", "t2"]);
    let [a, b] = [sol.periods[0].to_array(), sol.periods[1].to_array()];
    for (k, name) in PERIOD_FIELDS.iter().enumerate() {
        table.push(vec![name.to_string().into(), a[k].into(), b[k].into()]);
    }

    let mut out = Outcome::default();
    out.artifacts.json("solution.json", &summary)?;
    out.artifacts.table("values", &table, ctx.format)?;
    out.artifacts.add("table.txt", table_text(&sol, gap.gap).into_bytes());
    out.iterations.record(sol.iterations);
    out.parameters = json!({ "params": cfg.params, "solver": cfg.solver });
    Ok(out)
}
