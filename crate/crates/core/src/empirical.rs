//! Quarterly macro panel, the theoretical market premium implied by the
//! aggregate saving identity, and its regression against the realized premium.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{simple_ols, SimpleOls};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Quarter {
    pub year: i32,
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::Parse(format!("quarter {q} outside 1..=4")));
        }
        Ok(Self { year, q })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            q: ((date.month0() / 3) + 1) as u8,
        }
    }

    /// Quarters since year 0, usable for lag arithmetic.
    pub fn index(&self) -> i64 {
        self.year as i64 * 4 + (self.q as i64 - 1)
    }

    pub fn from_index(i: i64) -> Self {
        Self {
            year: i.div_euclid(4) as i32,
            q: (i.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(&self, k: i64) -> Self {
        Self::from_index(self.index() + k)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let up = t.to_ascii_uppercase();
        if let Some((y, q)) = up.split_once('Q') {
            let y = y.trim_end_matches(['-', ' ', ':']);
            let year = y.parse::<i32>().map_err(|_| Error::Parse(format!("bad quarter '{s}'")))?;
            let q = q.parse::<u8>().map_err(|_| Error::Parse(format!("bad quarter '{s}'")))?;
            return Quarter::new(year, q);
        }
        Ok(Quarter::of(parse_date(t)?))
    }
}

impl TryFrom<String> for Quarter {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Quarter> for String {
    fn from(q: Quarter) -> String {
        q.to_string()
    }
}

/// Accepts `YYYY-MM-DD`, `YYYY/MM/DD`, `YYYY-MM` and `YYYYQn`.
fn parse_date(s: &str) -> Result<NaiveDate> {
    for fmt in ["%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Ok(d);
        }
    }
    if let Some((y, m)) = s.split_once('-') {
        if let (Ok(y), Ok(m)) = (y.parse::<i32>(), m.parse::<u32>()) {
            if let Some(d) = NaiveDate::from_ymd_opt(y, m, 1) {
                return Ok(d);
            }
        }
    }
    if s.to_ascii_uppercase().contains('Q') {
        let q: Quarter = s.parse()?;
        return Ok(NaiveDate::from_ymd_opt(q.year, (q.q as u32 - 1) * 3 + 1, 1).expect("valid quarter start"));
    }
    Err(Error::Parse(format!("unrecognized date '{s}'")))
}

fn quarter_end(q: Quarter) -> NaiveDate {
    let next = q.offset(1);
    NaiveDate::from_ymd_opt(next.year, (next.q as u32 - 1) * 3 + 1, 1)
        .and_then(|d| d.pred_opt())
        .expect("valid quarter end")
}

/// One input column: a CSV file with a date column and a value column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSource {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    #[serde(default = "default_value_column")]
    pub value_column: String,
    /// Multiplier applied to every value, for unit conversion.
    #[serde(default = "one")]
    pub scale: f64,
}

fn default_date_column() -> String {
    "date".into()
}
fn default_value_column() -> String {
    "value".into()
}
fn one() -> f64 {
    1.0
}

/// A quarter whose value was carried from an observation in an earlier quarter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gap {
    pub series: String,
    pub quarter: Quarter,
    pub carried_from: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub quarters: Vec<Quarter>,
    pub columns: BTreeMap<String, Vec<f64>>,
    pub gaps: Vec<Gap>,
}

impl Panel {
    pub fn len(&self) -> usize {
        self.quarters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quarters.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::InvalidParameter(format!("panel has no column '{name}'")))
    }
}

struct Observations {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

fn read_observations(src: &SeriesSource) -> Result<Observations> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&src.path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("{}: missing column '{name}'", src.path.display())))
    };
    let (di, vi) = (find(&src.date_column)?, find(&src.value_column)?);
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(vi).unwrap_or("");
        // FRED marks missing values with '.'
        if raw.is_empty() || raw == "." || raw.eq_ignore_ascii_case("na") {
            continue;
        }
        let date = parse_date(rec.get(di).unwrap_or("")).map_err(|e| {
            Error::Parse(format!("{} row {}: {e}", src.path.display(), row + 2))
        })?;
        let value: f64 = raw
            .parse()
            .map_err(|_| Error::Parse(format!("{} row {}: bad value '{raw}'", src.path.display(), row + 2)))?;
        if let Some(last) = dates.last() {
            if date <= *last {
                return Err(Error::Parse(format!(
                    "{} row {}: dates are not increasing ({date} after {last})",
                    src.path.display(),
                    row + 2
                )));
            }
        }
        dates.push(date);
        values.push(value * src.scale);
    }
    if dates.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no observations", src.path.display())));
    }
    Ok(Observations { dates, values })
}

/// Value for each quarter from the first to the last observed: the last
/// observation at or before the quarter end.
fn to_quarterly(name: &str, obs: &Observations) -> (BTreeMap<Quarter, f64>, Vec<Gap>) {
    let first = Quarter::of(obs.dates[0]);
    let last = Quarter::of(*obs.dates.last().unwrap());
    let mut out = BTreeMap::new();
    let mut gaps = Vec::new();
    let mut k = 0;
    for qi in first.index()..=last.index() {
        let q = Quarter::from_index(qi);
        let end = quarter_end(q);
        while k + 1 < obs.dates.len() && obs.dates[k + 1] <= end {
            k += 1;
        }
        let date = obs.dates[k];
        if Quarter::of(date) != q {
            gaps.push(Gap {
                series: name.to_string(),
                quarter: q,
                carried_from: date,
            });
        }
        out.insert(q, obs.values[k]);
    }
    (out, gaps)
}

/// Loads every source and aligns them on their common quarters.
pub fn load_series(sources: &[SeriesSource]) -> Result<Panel> {
    if sources.is_empty() {
        return Err(Error::InvalidParameter("no input series".into()));
    }
    let mut per = Vec::with_capacity(sources.len());
    let mut gaps = Vec::new();
    for src in sources {
        let obs = read_observations(src)?;
        let (q, g) = to_quarterly(&src.name, &obs);
        gaps.extend(g);
        per.push((src.name.clone(), q));
    }
    let mut common: BTreeSet<Quarter> = per[0].1.keys().copied().collect();
    for (_, m) in &per[1..] {
        common.retain(|q| m.contains_key(q));
    }
    if common.is_empty() {
        return Err(Error::InsufficientData("input series share no quarter".into()));
    }
    let quarters: Vec<Quarter> = common.into_iter().collect();
    let columns = per
        .into_iter()
        .map(|(name, m)| (name, quarters.iter().map(|q| m[q]).collect()))
        .collect();
    gaps.retain(|g| quarters.binary_search(&g.quarter).is_ok());
    Ok(Panel {
        quarters,
        columns,
        gaps,
    })
}

/// Which panel columns carry the base variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub net_worth: String,
    pub debt_to_gdp: String,
    pub gdp: String,
    pub stock_index: String,
    /// Loan rate in percent per annum.
    pub loan_rate_percent: String,
    pub consumption: String,
    pub government: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            net_worth: "A".into(),
            debt_to_gdp: "DY".into(),
            gdp: "Y".into(),
            stock_index: "SP".into(),
            loan_rate_percent: "AAA".into(),
            consumption: "PC".into(),
            government: "G".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuarterlySeries {
    pub quarters: Vec<Quarter>,
    pub net_worth: Vec<f64>,
    pub debt_to_gdp: Vec<f64>,
    pub gdp: Vec<f64>,
    pub stock_index: Vec<f64>,
    pub loan_rate_percent: Vec<f64>,
    pub consumption: Vec<f64>,
    pub government: Vec<f64>,
}

impl QuarterlySeries {
    pub fn from_panel(panel: &Panel, map: &ColumnMap) -> Result<Self> {
        let col = |n: &str| panel.column(n).map(|c| c.to_vec());
        let s = Self {
            quarters: panel.quarters.clone(),
            net_worth: col(&map.net_worth)?,
            debt_to_gdp: col(&map.debt_to_gdp)?,
            gdp: col(&map.gdp)?,
            stock_index: col(&map.stock_index)?,
            loan_rate_percent: col(&map.loan_rate_percent)?,
            consumption: col(&map.consumption)?,
            government: col(&map.government)?,
        };
        if let Some(i) = s.gdp.iter().position(|y| !(*y > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "GDP must be positive, row {} ({})",
                i, s.quarters[i]
            )));
        }
        if s.stock_index.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("stock index must be positive".into()));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.quarters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quarters.is_empty()
    }

    /// Writes one `date,value` CSV per variable into `dir`, using the column
    /// map's names as file stems.
    pub fn write_csvs(&self, dir: &Path, map: &ColumnMap) -> Result<Vec<SeriesSource>> {
        std::fs::create_dir_all(dir)?;
        let cols: [(&String, &Vec<f64>); 7] = [
            (&map.net_worth, &self.net_worth),
            (&map.debt_to_gdp, &self.debt_to_gdp),
            (&map.gdp, &self.gdp),
            (&map.stock_index, &self.stock_index),
            (&map.loan_rate_percent, &self.loan_rate_percent),
            (&map.consumption, &self.consumption),
            (&map.government, &self.government),
        ];
        let mut out = Vec::new();
        for (name, values) in cols {
            let path = dir.join(format!("{name}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["date", "value"])?;
            for (q, v) in self.quarters.iter().zip(values) {
                let start = NaiveDate::from_ymd_opt(q.year, (q.q as u32 - 1) * 3 + 1, 1).unwrap();
                w.write_record([start.to_string(), v.to_string()])?;
            }
            w.flush()?;
            out.push(SeriesSource {
                name: name.clone(),
                path,
                date_column: default_date_column(),
                value_column: default_value_column(),
                scale: 1.0,
            });
        }
        Ok(out)
    }
}

/// Transformed columns; `None` where a lag is unavailable or a denominator vanishes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Derived {
    pub quarters: Vec<Quarter>,
    pub debt: Vec<f64>,
    pub saving_rate: Vec<f64>,
    pub loan_rate: Vec<f64>,
    pub growth: Vec<Option<f64>>,
    pub quarterly_return: Vec<Option<f64>>,
    pub annual_return: Vec<Option<f64>>,
    pub premium: Vec<Option<f64>>,
    pub new_series: Vec<Option<f64>>,
}

fn lag_lookup(quarters: &[Quarter]) -> impl Fn(usize, i64) -> Option<usize> + '_ {
    let index: BTreeMap<i64, usize> = quarters.iter().enumerate().map(|(i, q)| (q.index(), i)).collect();
    move |row, k| index.get(&(quarters[row].index() - k)).copied()
}

pub fn derive_columns(series: &QuarterlySeries) -> Result<Derived> {
    let n = series.len();
    let lag = lag_lookup(&series.quarters);
    let debt: Vec<f64> = (0..n).map(|t| series.debt_to_gdp[t] * series.gdp[t]).collect();
    let saving_rate: Vec<f64> = (0..n).map(|t| 1.0 - series.consumption[t] / series.gdp[t]).collect();
    if let Some(t) = saving_rate.iter().position(|s| !(*s > 0.0 && *s < 1.0)) {
        log::warn!("saving rate {} outside (0, 1) at {}", saving_rate[t], series.quarters[t]);
    }
    let loan_rate: Vec<f64> = series.loan_rate_percent.iter().map(|r| r / 100.0).collect();
    let growth = (0..n)
        .map(|t| lag(t, 4).map(|l| (series.gdp[t] - series.gdp[l]) / series.gdp[l]))
        .collect();
    let quarterly_return: Vec<Option<f64>> = (0..n)
        .map(|t| {
            lag(t, 1).map(|l| (series.stock_index[t] - series.stock_index[l]) / series.stock_index[l])
        })
        .collect();
    let annual_return: Vec<Option<f64>> = (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += quarterly_return[lag(t, k)?]?;
            }
            Some(acc)
        })
        .collect();
    let premium = (0..n).map(|t| annual_return[t].map(|r| r - loan_rate[t])).collect();
    let mut d = Derived {
        quarters: series.quarters.clone(),
        debt,
        saving_rate,
        loan_rate,
        growth,
        quarterly_return,
        annual_return,
        premium,
        new_series: vec![None; n],
    };
    d.new_series = new_series(series, &d);
    Ok(d)
}

/// Theoretical premium from the saving identity four quarters back:
/// `[-s + s G/Y + (A_t/Y_t)(1 + g_t) - A/Y] / ((D/Y) s)` with unsubscripted
/// terms at `t - 4`.
pub fn new_series(series: &QuarterlySeries, derived: &Derived) -> Vec<Option<f64>> {
    let lag = lag_lookup(&series.quarters);
    (0..series.len())
        .map(|t| {
            let l = lag(t, 4)?;
            let g = derived.growth[t]?;
            let s = derived.saving_rate[l];
            let y = series.gdp[l];
            let denom = derived.debt[l] / y * s;
            if denom == 0.0 || !denom.is_finite() {
                return None;
            }
            let num = -s + s * (series.government[l] / y) + series.net_worth[t] / series.gdp[t] * (1.0 + g)
                - series.net_worth[l] / y;
            Some(num / denom)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    #[serde(flatten)]
    pub ols: SimpleOls,
    pub first: Quarter,
    pub last: Quarter,
}

/// OLS of the realized premium on the theoretical one over rows where both exist.
pub fn regress(derived: &Derived) -> Result<RegressionReport> {
    let rows: Vec<usize> = (0..derived.quarters.len())
        .filter(|&t| derived.premium[t].is_some() && derived.new_series[t].is_some())
        .collect();
    if rows.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs 3 defined rows, got {}",
            rows.len()
        )));
    }
    let x: Vec<f64> = rows.iter().map(|&t| derived.new_series[t].unwrap()).collect();
    let y: Vec<f64> = rows.iter().map(|&t| derived.premium[t].unwrap()).collect();
    Ok(RegressionReport {
        ols: simple_ols(&x, &y)?,
        first: derived.quarters[rows[0]],
        last: derived.quarters[*rows.last().unwrap()],
    })
}

/// `(quarter, actual premium, theoretical premium)` rows.
pub fn figure_data(derived: &Derived) -> Vec<(Quarter, f64, f64)> {
    (0..derived.quarters.len())
        .filter_map(|t| Some((derived.quarters[t], derived.premium[t]?, derived.new_series[t]?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub quarters: usize,
    pub start: Quarter,
    pub gdp0: f64,
    /// Quarterly GDP growth.
    pub gdp_growth: f64,
    pub saving_rate: f64,
    pub debt_to_gdp: f64,
    pub government_share: f64,
    /// Annual loan rate as a fraction.
    pub loan_rate: f64,
    pub stock_index0: f64,
    /// Mean and standard deviation of quarterly log index changes.
    pub stock_drift: f64,
    pub stock_volatility: f64,
    pub wealth_to_gdp: f64,
    /// Set the loan rate equal to the realized annual return.
    pub zero_premium: bool,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            quarters: 60,
            start: Quarter { year: 1964, q: 4 },
            gdp0: 1000.0,
            gdp_growth: 0.01,
            saving_rate: 0.2,
            debt_to_gdp: 1.5,
            government_share: 0.2,
            loan_rate: 0.05,
            stock_index0: 100.0,
            stock_drift: 0.02,
            stock_volatility: 0.06,
            wealth_to_gdp: 4.0,
            zero_premium: false,
        }
    }
}

/// Panel that satisfies the saving identity exactly:
/// `A_t = A_{t-4} + s_{t-4} [(Y - G)_{t-4} + D_{t-4} (R_t - r_t)]`.
pub fn generate_synthetic(seed: u64, params: &SyntheticParams) -> Result<QuarterlySeries> {
    let p = params;
    if !(p.saving_rate > 0.0 && p.saving_rate < 1.0) {
        return Err(Error::InvalidParameter("saving rate must lie in (0, 1)".into()));
    }
    if !(p.debt_to_gdp > 0.0 && p.gdp0 > 0.0 && p.stock_index0 > 0.0 && p.wealth_to_gdp > 0.0) {
        return Err(Error::InvalidParameter("debt, GDP, index and wealth must be positive".into()));
    }
    if !(p.stock_volatility >= 0.0) {
        return Err(Error::InvalidParameter("volatility must be nonnegative".into()));
    }
    if p.quarters < 8 {
        return Err(Error::InvalidParameter("need at least 8 quarters".into()));
    }
    let n = p.quarters;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(p.stock_drift, p.stock_volatility)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let quarters: Vec<Quarter> = (0..n).map(|t| p.start.offset(t as i64)).collect();
    let gdp: Vec<f64> = (0..n).map(|t| p.gdp0 * (1.0 + p.gdp_growth).powi(t as i32)).collect();
    let mut stock_index = vec![p.stock_index0; n];
    for t in 1..n {
        stock_index[t] = stock_index[t - 1] * noise.sample(&mut rng).exp();
    }
    let s = p.saving_rate;
    let consumption: Vec<f64> = gdp.iter().map(|y| (1.0 - s) * y).collect();
    let government: Vec<f64> = gdp.iter().map(|y| p.government_share * y).collect();
    let debt_to_gdp = vec![p.debt_to_gdp; n];

    // Use the same arithmetic the transformations will apply.
    let sr = |t: usize| 1.0 - consumption[t] / gdp[t];
    let rq = |t: usize| (stock_index[t] - stock_index[t - 1]) / stock_index[t - 1];
    let annual = |t: usize| rq(t) + rq(t - 1) + rq(t - 2) + rq(t - 3);
    let mut loan_rate_percent = vec![p.loan_rate * 100.0; n];
    if p.zero_premium {
        for t in 4..n {
            loan_rate_percent[t] = annual(t) * 100.0;
        }
    }
    let mut net_worth = vec![0.0; n];
    for t in 0..n {
        if t < 4 {
            net_worth[t] = p.wealth_to_gdp * gdp[t];
            continue;
        }
        let l = t - 4;
        let premium = annual(t) - loan_rate_percent[t] / 100.0;
        let debt = debt_to_gdp[l] * gdp[l];
        net_worth[t] = net_worth[l] + sr(l) * ((gdp[l] - government[l]) + debt * premium);
    }
    if net_worth.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParameter("parameters imply nonpositive net worth".into()));
    }
    Ok(QuarterlySeries {
        quarters,
        net_worth,
        debt_to_gdp,
        gdp,
        stock_index,
        loan_rate_percent,
        consumption,
        government,
    })
}
