use incomedist_core::asymptotic::{sweep, SweepGrid};
use incomedist_core::{
    evolve_groups, fit_power_law, fit_rank_loglog, predicted_loglog_slope, prop2_ratio, steady_state_return, FitRange,
    GroupSetup, ReturnSource, SavingSchedule, Schedule,
};
use serde::Deserialize;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::output::{Cell, Table};
use crate::{Context, Outcome};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PerGroup {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerGroup {
    fn resolve(&self, m: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerGroup::Scalar(x) => Ok(vec![*x; m]),
            PerGroup::List(v) if v.len() == m => Ok(v.clone()),
            PerGroup::List(v) => Err(CliError::Usage(format!("{what} has {} entries for {m} groups", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ReturnSpec {
    Constant(f64),
    Path(Vec<f64>),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSpec {
    groups: usize,
    slope: Option<f64>,
    intercept: Option<f64>,
    saving_rates: Option<Vec<f64>>,
    periods: usize,
    leverage: f64,
    loan_rate: f64,
    #[serde(default = "unit")]
    initial_wealth: PerGroup,
    #[serde(default = "zero")]
    wages: PerGroup,
    #[serde(default = "yes")]
    wage_term: bool,
    #[serde(default = "closure")]
    market_return: ReturnSpec,
    #[serde(default = "threshold")]
    wage_threshold: f64,
    #[serde(default = "all")]
    fit: FitRange,
}

fn unit() -> PerGroup {
    PerGroup::Scalar(1.0)
}
fn zero() -> PerGroup {
    PerGroup::Scalar(0.0)
}
fn yes() -> bool {
    true
}
fn closure() -> ReturnSpec {
    ReturnSpec::Named("closure".into())
}
fn threshold() -> f64 {
    1e-3
}
fn all() -> FitRange {
    FitRange::All
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AsymptConfig {
    run: Option<RunSpec>,
    sweep: Option<SweepGrid>,
}

const TRAJ: [&str; 8] = ["t", "group", "s", "A", "D", "gamma", "W_over_A", "R"];

const SWEEP: [&str; 13] = [
    "slope",
    "intercept",
    "leverage",
    "loan_rate",
    "groups",
    "periods",
    "final_top_share",
    "final_return",
    "steady_state_return",
    "predicted_slope",
    "fitted_slope",
    "wage_ratio_first_below",
    "error",
];

fn single(spec: &RunSpec, ctx: &Context) -> Result<Outcome> {
    let m = spec.groups;
    let schedule = match (spec.slope, spec.intercept, &spec.saving_rates) {
        (Some(a), Some(b), None) => SavingSchedule::linear(a, b, m)?,
        (None, None, Some(s)) => {
            if s.len() != m {
                return Err(CliError::Usage(format!("saving_rates has {} entries for {m} groups", s.len())));
            }
            SavingSchedule::Explicit(Schedule::Constant(s.clone()))
        }
        _ => {
            return Err(CliError::Usage(
                "give either slope and intercept or saving_rates".into(),
            ))
        }
    };
    let source = match &spec.market_return {
        ReturnSpec::Constant(r) => ReturnSource::External(Schedule::Constant(*r)),
        ReturnSpec::Path(p) => ReturnSource::External(Schedule::Table(p.clone())),
        ReturnSpec::Named(n) if n == "closure" => ReturnSource::Closure,
        ReturnSpec::Named(n) => {
            return Err(CliError::Usage(format!(
                "market_return must be a number, a list or \"closure\", got \"{n}\""
            )))
        }
    };
    let setup = GroupSetup {
        initial_wealth: spec.initial_wealth.resolve(m, "initial_wealth")?,
        wages: Schedule::Constant(spec.wages.resolve(m, "wages")?),
        leverage: Schedule::Constant(spec.leverage),
        loan_rate: Schedule::Constant(spec.loan_rate),
        wage_term: spec.wage_term,
    };
    let ev = evolve_groups(&setup, &schedule, &source, spec.periods)?;

    let mut traj = Table::new(&TRAJ);
    for t in 0..=spec.periods {
        for g in &ev.groups {
            let stepped = t < spec.periods;
            traj.push(vec![
                t.into(),
                (g.group + 1).into(),
                stepped.then(|| g.saving_rates[t]).into(),
                g.wealth[t].into(),
                g.debt[t].into(),
                g.shares[t].into(),
                stepped.then(|| g.wages[t] / g.wealth[t]).into(),
                stepped.then(|| ev.returns[t]).into(),
            ]);
        }
    }

    let rates = schedule.rates(0)?;
    let top = (0..m).max_by(|&a, &b| rates[a].total_cmp(&rates[b]).then(b.cmp(&a))).unwrap_or(0);
    let steady = steady_state_return(rates[top], spec.leverage, spec.loan_rate).ok();
    let predicted = match schedule {
        SavingSchedule::Linear { .. } => Some(predicted_loglog_slope(
            &schedule,
            &Schedule::Table(ev.returns.clone()),
            &setup.leverage,
            &setup.loan_rate,
            spec.periods,
        )?),
        SavingSchedule::Explicit(_) => None,
    };
    let final_wealth = ev.final_wealth();
    let ratio = prop2_ratio(&ev.groups[top], spec.wage_threshold);
    let tail_monotone = ratio.first_below.map(|k| ratio.ratio[k..].windows(2).all(|w| w[1] <= w[0]));
    let summary = json!({
        "groups": m,
        "periods": spec.periods,
        "saving_rates": rates,
        "final_wealth": final_wealth,
        "final_shares": ev.groups.iter().map(|g| *g.shares.last().unwrap()).collect::<Vec<_>>(),
        "final_return": ev.returns.last(),
        "top_group": top + 1,
        "steady_state_return": steady,
        "predicted_loglog_slope": predicted,
        "rank_loglog_fit": fit_rank_loglog(&final_wealth).ok(),
        "power_law_fit": fit_power_law(&final_wealth, spec.fit).ok(),
        "wage_ratio": {
            "threshold": ratio.threshold,
            "first_below": ratio.first_below,
            "final": ratio.ratio.last(),
            "monotone_after_first_below": tail_monotone,
        },
    });

    let mut out = Outcome::default();
    out.artifacts.table("trajectories", &traj, ctx.format)?;
    out.artifacts.json("summary.json", &summary)?;
    out.parameters = json!({ "mode": "run", "groups": m, "periods": spec.periods });
    Ok(out)
}

fn grid(grid: &SweepGrid, ctx: &Context) -> Result<Outcome> {
    if grid.is_empty() {
        return Err(CliError::Usage("sweep grid has no points".into()));
    }
    let points = sweep(grid);
    let mut table = Table::new(&SWEEP);
    for p in &points {
        table.push(vec![
            p.slope.into(),
            p.intercept.into(),
            p.leverage.into(),
            p.loan_rate.into(),
            p.groups.into(),
            p.periods.into(),
            p.final_top_share.into(),
            p.final_return.into(),
            p.steady_state_return.into(),
            p.predicted_slope.into(),
            p.fitted_slope.into(),
            p.wage_ratio_first_below.map_or(Cell::Empty, Cell::from),
            p.error.clone().map_or(Cell::Empty, Cell::Text),
        ]);
    }
    let mut out = Outcome::default();
    out.artifacts.table("sweep", &table, ctx.format)?;
    out.parameters = json!({
        "mode": "sweep",
        "points": points.len(),
        "failed": points.iter().filter(|p| p.error.is_some()).count(),
    });
    Ok(out)
}

pub fn run(ctx: &Context) -> Result<Outcome> {
    let cfg: AsymptConfig = toml::from_str(ctx.require_config()?)?;
    match (&cfg.run, &cfg.sweep) {
        (Some(r), None) => single(r, ctx),
        (None, Some(g)) => grid(g, ctx),
        _ => Err(CliError::Usage("config needs exactly one of [run] or [sweep]".into())),
    }
}
