use std::path::PathBuf;

use incomedist_core::empirical::{figure_data, ColumnMap, SeriesSource, SyntheticParams};
use incomedist_core::{derive_columns, generate_synthetic, load_series, regress, QuarterlySeries};
use serde::Deserialize;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::output::{Cell, Table};
use crate::{Context, Outcome};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSpec {
    dir: PathBuf,
    /// Defaults to `<dir>/<column>.csv` for every mapped column.
    #[serde(default)]
    series: Vec<SeriesSource>,
}

#[derive(Debug, Clone, Deserialize)]
struct SyntheticSpec {
    #[serde(default)]
    seed: u64,
    #[serde(flatten)]
    params: SyntheticParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmpiricalConfig {
    data: Option<DataSpec>,
    synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    columns: ColumnMap,
}

const DERIVED: [&str; 15] = [
    "quarter",
    "A",
    "DY",
    "Y",
    "SP",
    "loan_rate",
    "PC",
    "G",
    "D",
    "s",
    "g",
    "R_q",
    "R",
    "MKTPT_PREMIUM",
    "NEW_SERIES",
];

pub fn run(ctx: &Context) -> Result<Outcome> {
    let cfg: EmpiricalConfig = toml::from_str(ctx.require_config()?)?;
    let map = &cfg.columns;
    let mut out = Outcome::default();
    let mut gaps = Vec::new();
    let series: QuarterlySeries = match (&cfg.data, &cfg.synthetic) {
        (Some(data), None) => {
            let dir = ctx.base_dir.join(&data.dir);
            let sources: Vec<SeriesSource> = if data.series.is_empty() {
                [
                    &map.net_worth,
                    &map.debt_to_gdp,
                    &map.gdp,
                    &map.stock_index,
                    &map.loan_rate_percent,
                    &map.consumption,
                    &map.government,
                ]
                .into_iter()
                .map(|name| SeriesSource {
                    name: name.clone(),
                    path: dir.join(format!("{name}.csv")),
                    date_column: "date".into(),
                    value_column: "value".into(),
                    scale: 1.0,
                })
                .collect()
            } else {
                data.series
                    .iter()
                    .map(|s| SeriesSource {
                        path: dir.join(&s.path),
                        ..s.clone()
                    })
                    .collect()
            };
            let panel = load_series(&sources)?;
            gaps = panel.gaps.clone();
            QuarterlySeries::from_panel(&panel, map)?
        }
        (None, Some(syn)) => {
            let seed = ctx.seed.unwrap_or(syn.seed);
            out.seed = Some(seed);
            generate_synthetic(seed, &syn.params)?
        }
        _ => return Err(CliError::Usage("config needs exactly one of [data] or [synthetic]".into())),
    };
    let d = derive_columns(&series)?;
    let report = regress(&d)?;

    let mut table = Table::new(&DERIVED);
    for t in 0..series.len() {
        table.push(vec![
            series.quarters[t].to_string().into(),
            series.net_worth[t].into(),
            series.debt_to_gdp[t].into(),
            series.gdp[t].into(),
            series.stock_index[t].into(),
            d.loan_rate[t].into(),
            series.consumption[t].into(),
            series.government[t].into(),
            d.debt[t].into(),
            d.saving_rate[t].into(),
            d.growth[t].into(),
            d.quarterly_return[t].into(),
            d.annual_return[t].into(),
            d.premium[t].into(),
            d.new_series[t].into(),
        ]);
    }
    let mut figure = Table::new(&["date", "actual", "theoretical"]);
    for (q, actual, theory) in figure_data(&d) {
        figure.push(vec![Cell::Text(q.to_string()), actual.into(), theory.into()]);
    }

    out.artifacts.table("derived", &table, ctx.format)?;
    out.artifacts.table("figure", &figure, ctx.format)?;
    out.artifacts.json("report.json", &json!({ "regression": report, "gaps": gaps }))?;
    out.parameters = json!({ "quarters": series.len(), "columns": map });
    Ok(out)
}
