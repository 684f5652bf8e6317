//! TOML description of an initial economy and its exogenous path.
//!
//! Every vector field accepts a scalar (broadcast), an inline array, a CSV
//! column `{ csv = "file.csv", column = "a" }` (one row per agent) or a
//! generator `{ distribution = "lognormal", mu = 0.0, sigma = 1.0 }`.
//! Generators without an explicit `seed` derive one from the run seed and
//! the field name, so adding a field never reshuffles the others.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Pareto, Uniform};
use serde::Deserialize;

use crate::economy::{EconomyState, FirmBlock, HouseholdBlock, Portfolio};
use crate::error::{Error, Result};
use crate::exogenous::{assemble_state, ExogenousPath, Perturbation, Schedule, VectorSchedule};
use crate::micro_sim::SolverConfig;
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "distribution", rename_all = "lowercase", deny_unknown_fields)]
pub enum Generator {
    Constant {
        value: f64,
        seed: Option<u64>,
    },
    Uniform {
        low: f64,
        high: f64,
        seed: Option<u64>,
    },
    Normal {
        mean: f64,
        sd: f64,
        seed: Option<u64>,
        #[serde(default)]
        clamp: Option<[f64; 2]>,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
        seed: Option<u64>,
    },
    Pareto {
        scale: f64,
        shape: f64,
        seed: Option<u64>,
    },
}

impl Generator {
    fn seed(&self) -> Option<u64> {
        match self {
            Generator::Constant { seed, .. }
            | Generator::Uniform { seed, .. }
            | Generator::Normal { seed, .. }
            | Generator::Lognormal { seed, .. }
            | Generator::Pareto { seed, .. } => *seed,
        }
    }

    fn draw(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bad = |e: &dyn std::fmt::Display| Error::InvalidParameter(format!("generator: {e}"));
        Ok(match self {
            Generator::Constant { value, .. } => vec![*value; n],
            Generator::Uniform { low, high, .. } => {
                let d = Uniform::new(*low, *high).map_err(|e| bad(&e))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Generator::Normal { mean, sd, clamp, .. } => {
                let d = Normal::new(*mean, *sd).map_err(|e| bad(&e))?;
                (0..n)
                    .map(|_| {
                        let x: f64 = d.sample(&mut rng);
                        clamp.map_or(x, |[lo, hi]| x.clamp(lo, hi))
                    })
                    .collect()
            }
            Generator::Lognormal { mu, sigma, .. } => {
                let d = LogNormal::new(*mu, *sigma).map_err(|e| bad(&e))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Generator::Pareto { scale, shape, .. } => {
                let d = Pareto::new(*scale, *shape).map_err(|e| bad(&e))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Inline(Vec<f64>),
    Csv { csv: PathBuf, column: String },
    Generate(Generator),
}

/// FNV-1a, used to give each field its own stream.
pub fn field_seed(base: u64, field: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in field.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Parse(format!("{}: no column '{column}'", path.display())))?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(idx).unwrap_or("");
        out.push(raw.parse().map_err(|_| {
            Error::Parse(format!("{} row {}: bad number '{raw}'", path.display(), row + 2))
        })?);
    }
    Ok(out)
}

impl VectorSpec {
    pub fn resolve(&self, n: usize, field: &str, seed: u64, base_dir: &Path) -> Result<Vec<f64>> {
        let v = match self {
            VectorSpec::Scalar(x) => vec![*x; n],
            VectorSpec::Inline(v) => v.clone(),
            VectorSpec::Csv { csv, column } => read_csv_column(&base_dir.join(csv), column)?,
            VectorSpec::Generate(g) => g.draw(n, g.seed().unwrap_or_else(|| field_seed(seed, field)))?,
        };
        if v.len() != n {
            return Err(Error::InvalidParameter(format!(
                "field '{field}' has {} entries, expected {n}",
                v.len()
            )));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("field '{field}' entry {i} is not finite")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum PortfolioSpec {
    /// Every household holds the market portfolio.
    #[default]
    Market,
    /// Independent Dirichlet rows.
    Dirichlet {
        #[serde(default = "one")]
        concentration: f64,
        seed: Option<u64>,
    },
    /// CSV with one row per household and one column per firm.
    Csv { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

/// `k` iid Dirichlet rows of dimension `f`, built from Gamma draws.
pub fn dirichlet_rows(n: usize, f: usize, concentration: f64, seed: u64) -> Result<Array2<f64>> {
    let g = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidParameter(format!("dirichlet: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::zeros((n, f));
    for mut row in m.rows_mut() {
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = g.sample(&mut rng);
            total += *x;
        }
        row.mapv_inplace(|x| x / total);
    }
    Ok(m)
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut count = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!(
                "{} row {}: {} columns, expected {cols}",
                path.display(),
                r + 1,
                rec.len()
            )));
        }
        for x in rec.iter() {
            data.push(
                x.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("{} row {}: bad number '{x}'", path.display(), r + 1)))?,
            );
        }
        count += 1;
    }
    if count != rows {
        return Err(Error::Parse(format!("{}: {count} rows, expected {rows}", path.display())));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum QuantitySpec {
    /// Same spec for every good.
    All(VectorSpec),
    PerGood(Vec<VectorSpec>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LoanRateSpec {
    Constant(f64),
    Table(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub sd: f64,
    #[serde(default = "neg_inf")]
    pub min: f64,
    #[serde(default = "pos_inf")]
    pub max: f64,
    pub seed: Option<u64>,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyConfig {
    pub households: usize,
    pub firms: usize,
    #[serde(default = "one_usize")]
    pub goods: usize,
    pub net_assets: VectorSpec,
    pub saving_rates: VectorSpec,
    #[serde(default = "zero_spec")]
    pub leverage_ratios: VectorSpec,
    pub relative_wages: VectorSpec,
    #[serde(default = "one_spec")]
    pub betas: VectorSpec,
    /// Firm values before scaling to total net assets. Ignored for explicit
    /// portfolios, where values follow from household claims.
    #[serde(default = "one_spec")]
    pub equity: VectorSpec,
    #[serde(default)]
    pub portfolio: PortfolioSpec,
    #[serde(default = "yes")]
    pub clear_portfolios: bool,
    #[serde(default = "one_spec")]
    pub relative_prices: VectorSpec,
    pub purchase_quantities: QuantitySpec,
    pub loan_rate: LoanRateSpec,
    #[serde(default = "one")]
    pub price_level: f64,
}

fn one_usize() -> usize {
    1
}
fn zero_spec() -> VectorSpec {
    VectorSpec::Scalar(0.0)
}
fn one_spec() -> VectorSpec {
    VectorSpec::Scalar(1.0)
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub seed: u64,
    pub periods: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    pub economy: EconomyConfig,
    /// Per-period noise on exogenous fields, keyed by field name.
    #[serde(default)]
    pub perturb: BTreeMap<String, PerturbSpec>,
    /// Periods at which full household snapshots are written.
    #[serde(default)]
    pub snapshots: Vec<usize>,
}

const PERTURBABLE: [&str; 5] = ["loan_rate", "saving_rates", "leverage_ratios", "relative_wages", "betas"];

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

impl EconomyConfig {
    /// Initial state and exogenous path. Relative paths resolve against `base_dir`.
    pub fn build(
        &self,
        seed: u64,
        perturb: &BTreeMap<String, PerturbSpec>,
        base_dir: &Path,
    ) -> Result<(EconomyState, ExogenousPath)> {
        let (n, f, g) = (self.households, self.firms, self.goods);
        if n == 0 || f == 0 || g == 0 {
            return Err(Error::InvalidParameter("households, firms and goods must be positive".into()));
        }
        if let Some(k) = perturb.keys().find(|k| !PERTURBABLE.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!(
                "cannot perturb '{k}'; allowed: {}",
                PERTURBABLE.join(", ")
            )));
        }
        let vec = |spec: &VectorSpec, len: usize, name: &str| spec.resolve(len, name, seed, base_dir);
        let net_assets = vec(&self.net_assets, n, "net_assets")?;
        let saving_rates = vec(&self.saving_rates, n, "saving_rates")?;
        let leverage = vec(&self.leverage_ratios, n, "leverage_ratios")?;
        let wages = vec(&self.relative_wages, n, "relative_wages")?;
        let betas = vec(&self.betas, f, "betas")?;
        let prices = vec(&self.relative_prices, g, "relative_prices")?;

        let columns: Vec<Vec<f64>> = match &self.purchase_quantities {
            QuantitySpec::All(spec) => (0..g)
                .map(|j| vec(spec, n, &format!("purchase_quantities.{j}")))
                .collect::<Result<_>>()?,
            QuantitySpec::PerGood(specs) => {
                if specs.len() != g {
                    return Err(Error::InvalidParameter(format!(
                        "purchase_quantities lists {} goods, expected {g}",
                        specs.len()
                    )));
                }
                specs
                    .iter()
                    .enumerate()
                    .map(|(j, s)| vec(s, n, &format!("purchase_quantities.{j}")))
                    .collect::<Result<_>>()?
            }
        };
        let quantities = Array2::from_shape_fn((n, g), |(i, j)| columns[j][i]);

        let portfolio = match &self.portfolio {
            PortfolioSpec::Market => Portfolio::Market,
            PortfolioSpec::Dirichlet { concentration, seed: s } => Portfolio::dense(dirichlet_rows(
                n,
                f,
                *concentration,
                s.unwrap_or_else(|| field_seed(seed, "portfolio")),
            )?),
            PortfolioSpec::Csv { path } => Portfolio::dense(read_matrix(&base_dir.join(path), n, f)?),
        };

        let households = HouseholdBlock::new(
            net_assets.clone(),
            saving_rates.clone(),
            leverage.clone(),
            wages.clone(),
            portfolio.clone(),
        )?;
        let equity = match &portfolio {
            Portfolio::Dense(_) => FirmBlock::from_household_claims(&households, betas.clone())?.equity_values,
            Portfolio::Market => {
                let raw = vec(&self.equity, f, "equity")?;
                let scale = numeric::sum(&net_assets) / numeric::sum(&raw);
                raw.iter().map(|a| a * scale).collect()
            }
        };

        let perturbation = |name: &str| {
            perturb.get(name).map(|p| Perturbation {
                sd: p.sd,
                seed: p.seed.unwrap_or_else(|| field_seed(seed, &format!("perturb.{name}"))),
                min: p.min,
                max: p.max,
            })
        };
        let schedule = |v: Vec<f64>, name: &str| VectorSchedule {
            values: Schedule::Constant(v),
            perturb: perturbation(name),
        };
        let path = ExogenousPath {
            loan_rate: match &self.loan_rate {
                LoanRateSpec::Constant(r) => Schedule::Constant(*r),
                LoanRateSpec::Table(t) => Schedule::Table(t.clone()),
            },
            loan_rate_perturb: perturbation("loan_rate"),
            saving_rates: schedule(saving_rates, "saving_rates"),
            leverage_ratios: schedule(leverage, "leverage_ratios"),
            relative_wages: schedule(wages, "relative_wages"),
            betas: schedule(betas, "betas"),
            portfolio: Schedule::Constant(portfolio),
            relative_prices: Schedule::Constant(prices),
            purchase_quantities: Schedule::Constant(Arc::new(quantities)),
            clear_portfolios: self.clear_portfolios,
        };
        let record = path.record(0)?;
        let state = assemble_state(0, net_assets, equity, &record, self.price_level, self.clear_portfolios)?;
        Ok((state, path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::validate;

    const SMALL: &str = r#"
periods = 5
seed = 11

[economy]
households = 50
firms = 4
goods = 2
net_assets = { distribution = "lognormal", mu = 3.0, sigma = 0.5 }
saving_rates = { distribution = "uniform", low = 0.1, high = 0.4 }
leverage_ratios = 0.2
relative_wages = { distribution = "uniform", low = 1.0, high = 3.0 }
betas = [0.8, 1.0, 1.1, 1.3]
portfolio = { rule = "dirichlet", concentration = 2.0 }
relative_prices = [1.0, 2.0]
purchase_quantities = 1.0
loan_rate = 0.03

[perturb.saving_rates]
sd = 0.01
min = 0.0
max = 0.9
"#;

    #[test]
    fn builds_valid_state() {
        let cfg = SimulationConfig::from_toml(SMALL).unwrap();
        let (state, path) = cfg.economy.build(cfg.seed, &cfg.perturb, Path::new(".")).unwrap();
        assert!(validate(&state).is_empty(), "{:?}", validate(&state));
        assert_eq!(state.goods.purchase_quantities.dim(), (50, 2));
        assert!(path.saving_rates.perturb.is_some());
        assert!(state.dual_aggregation_residual() < 1e-12);
    }

    #[test]
    fn seeds_are_per_field() {
        let cfg = SimulationConfig::from_toml(SMALL).unwrap();
        let a = cfg.economy.build(1, &cfg.perturb, Path::new(".")).unwrap().0;
        let b = cfg.economy.build(1, &cfg.perturb, Path::new(".")).unwrap().0;
        let c = cfg.economy.build(2, &cfg.perturb, Path::new(".")).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a.households.net_assets, c.households.net_assets);
        assert_ne!(a.households.net_assets, a.households.relative_wages);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let text = SMALL.replace("betas = [0.8, 1.0, 1.1, 1.3]", "betas = [0.8, 1.0]");
        let cfg = SimulationConfig::from_toml(&text).unwrap();
        let err = cfg.economy.build(0, &cfg.perturb, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("betas"));
    }

    #[test]
    fn unknown_perturbation_field() {
        let text = SMALL.replace("[perturb.saving_rates]", "[perturb.portfolio]");
        let cfg = SimulationConfig::from_toml(&text).unwrap();
        assert!(cfg.economy.build(0, &cfg.perturb, Path::new(".")).is_err());
    }
}
