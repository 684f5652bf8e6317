use std::path::Path;

use incomedist_core::ge::GESolverOptions;
use incomedist_core::micro_sim::{self, solve_period, SolverConfig};
use incomedist_core::{
    arbitrage_gap, derive_columns, evolve_groups, generate_synthetic, macro_return_closed_form, market_portfolio,
    partition_households, regress, solve_ge, steady_state_return, Error, GEParams, GroupSetup, ReturnSource,
    SavingSchedule, Schedule, SimulationConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::{Context, Outcome};

const ECONOMY: &str = r#"
periods = 40

[economy]
households = 400
firms = 12
net_assets = { distribution = "lognormal", mu = 3.0, sigma = 0.6 }
saving_rates = { distribution = "uniform", low = 0.1, high = 0.4 }
leverage_ratios = { distribution = "uniform", low = 0.0, high = 0.3 }
relative_wages = { distribution = "uniform", low = 0.5, high = 1.5 }
betas = { distribution = "uniform", low = 0.6, high = 1.4 }
portfolio = { rule = "dirichlet", concentration = 1.0 }
purchase_quantities = 0.8
loan_rate = 0.03
"#;

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> std::result::Result<(bool, String), Error>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn economy(seed: u64, uniform_s: Option<f64>) -> std::result::Result<SimulationConfig, Error> {
    let text = match uniform_s {
        Some(s) => ECONOMY.replace(
            r#"saving_rates = { distribution = "uniform", low = 0.1, high = 0.4 }"#,
            &format!("saving_rates = {s}"),
        ),
        None => ECONOMY.to_string(),
    };
    let mut cfg = SimulationConfig::from_toml(&text)?;
    cfg.seed = seed;
    Ok(cfg)
}

fn identities(seed: u64) -> std::result::Result<(bool, String), Error> {
    let cfg = economy(seed, None)?;
    let (state, path) = cfg.economy.build(cfg.seed, &cfg.perturb, Path::new("."))?;
    let res = micro_sim::run(&state, &path, cfg.periods, &cfg.solver)?;
    let worst = res
        .periods
        .iter()
        .map(|p| {
            let r = &p.residuals;
            r.saving_identity.max(r.return_identity).max(r.dual_aggregation).max(r.market_aggregation)
        })
        .fold(0.0_f64, f64::max);
    Ok((worst <= 1e-9, format!("max relative residual {worst:e} over {} periods", cfg.periods)))
}

fn closed_form(seed: u64) -> std::result::Result<(bool, String), Error> {
    let mut worst = 0.0_f64;
    for k in 0..10 {
        let s = 0.1 + 0.03 * k as f64;
        let cfg = economy(seed.wrapping_add(k), Some(s))?;
        let (state, path) = cfg.economy.build(cfg.seed, &cfg.perturb, Path::new("."))?;
        let rate = path.record(0)?.loan_rate;
        let sol = solve_period(&state, rate, &SolverConfig::default())?;
        let w = sol.price_level * state.households.relative_wages.iter().sum::<f64>();
        let oracle = macro_return_closed_form(s, w, state.debt_total(), state.net_assets_total(), rate)?;
        worst = worst.max((sol.market_return - oracle).abs());
    }
    Ok((worst <= 1e-12, format!("max |R - closed form| {worst:e}")))
}

fn steady_state() -> std::result::Result<(bool, String), Error> {
    let r = steady_state_return(0.8, 0.5, 0.04)?.market_return;
    let setup = GroupSetup {
        initial_wealth: vec![0.9, 0.1],
        wages: Schedule::Constant(vec![0.0, 0.0]),
        leverage: Schedule::Constant(0.5),
        loan_rate: Schedule::Constant(0.04),
        wage_term: false,
    };
    let ev = evolve_groups(
        &setup,
        &SavingSchedule::Explicit(Schedule::Constant(vec![0.8, 0.4])),
        &ReturnSource::Closure,
        500,
    )?;
    let last = *ev.returns.last().unwrap_or(&f64::NAN);
    let ok = (r - 0.08).abs() < 1e-12 && (last - r).abs() < 1e-8;
    Ok((ok, format!("R* = {r}, R_500 = {last}")))
}

fn partition(seed: u64) -> std::result::Result<(bool, String), Error> {
    let cfg = economy(seed, None)?;
    let (state, _) = cfg.economy.build(cfg.seed, &cfg.perturb, Path::new("."))?;
    let p = match partition_households(&state, 4, 0.05, seed) {
        Ok(p) => p,
        Err(Error::EpsilonUnreachable { partition, .. }) => *partition,
        Err(e) => return Err(e),
    };
    let market = market_portfolio(&state.firms)?;
    let total: f64 = p.group_wealth.iter().sum();
    let worst = (0..market.len())
        .map(|f| {
            let mix: f64 = (0..p.groups()).map(|g| p.group_wealth[g] / total * p.group_portfolios[g][f]).sum();
            (mix - market[f]).abs()
        })
        .fold(0.0_f64, f64::max);
    let covered = p.sizes().iter().sum::<usize>() == state.households.len() && p.sizes().iter().all(|s| *s > 0);
    Ok((covered && worst < 1e-12, format!("aggregation error {worst:e}, sizes {:?}", p.sizes())))
}

fn ge() -> std::result::Result<(bool, String), Error> {
    let opts = GESolverOptions::default();
    let asym = solve_ge(&GEParams::default(), &opts)?;
    let sym = solve_ge(
        &GEParams {
            alpha: 0.25,
            beta: 0.25,
            c2: 1.2,
            c3: 1.2,
            ..GEParams::default()
        },
        &opts,
    )?;
    let d = arbitrage_gap(&sym).gap;
    let ok = asym.max_residual < 1e-10 && d.abs() < 1e-10;
    Ok((ok, format!("benchmark residual {:e}, symmetric delta {d:e}", asym.max_residual)))
}

fn empirical(seed: u64) -> std::result::Result<(bool, String), Error> {
    let mut worst = 0.0_f64;
    for k in 0..3 {
        let series = generate_synthetic(seed.wrapping_add(k), &Default::default())?;
        let d = derive_columns(&series)?;
        for (a, b) in d.premium.iter().zip(&d.new_series) {
            if let (Some(a), Some(b)) = (a, b) {
                worst = worst.max((a - b).abs());
            }
        }
        let r = regress(&d)?;
        worst = worst.max((r.ols.slope - 1.0).abs()).max(r.ols.intercept.abs());
    }
    Ok((worst < 1e-9, format!("max inversion error {worst:e}")))
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SelftestConfig {
    #[serde(default)]
    seed: u64,
}

pub fn run(ctx: &Context) -> Result<Outcome> {
    let cfg: SelftestConfig = match &ctx.config {
        Some(text) => toml::from_str(text)?,
        None => SelftestConfig::default(),
    };
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let checks = vec![
        check("micro_sim identities", || identities(seed)),
        check("closed-form oracle", || closed_form(seed)),
        check("steady state", steady_state),
        check("partition aggregation", || partition(seed)),
        check("general equilibrium", ge),
        check("empirical inversion", || empirical(seed)),
    ];
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let mut out = Outcome::default();
    out.seed = Some(seed);
    out.artifacts.json("selftest.json", &checks)?;
    out.parameters = json!({ "checks": checks.len(), "failed": failed });
    if failed > 0 {
        out.failure = Some(CliError::Validation(format!("{failed} selftest check(s) failed")));
    }
    Ok(out)
}
