//! Group-level wealth dynamics, the stationary market return, and log-log
//! diagnostics of the resulting wealth distribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exogenous::Schedule;
use crate::numeric::{self, simple_ols};

const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub market_return: f64,
    /// `R* <= 0`, outside the economically meaningful region.
    pub nonpositive: bool,
}

/// `R* = s mu r / (s (1 + mu) - 1)`, the return at which a group with saving
/// rate `s` keeps a constant wealth share.
pub fn steady_state_return(saving_rate: f64, leverage: f64, loan_rate: f64) -> Result<SteadyState> {
    let denom = saving_rate * (1.0 + leverage) - 1.0;
    if denom.abs() < DEGENERATE_TOL {
        return Err(Error::Degenerate {
            context: "steady-state return",
            value: denom,
        });
    }
    let r = saving_rate * leverage * loan_rate / denom;
    if r <= 0.0 {
        log::warn!("steady-state return {r} is not positive");
    }
    Ok(SteadyState {
        market_return: r,
        nonpositive: r <= 0.0,
    })
}

/// Saving rates per group and period.
#[derive(Debug, Clone, PartialEq)]
pub enum SavingSchedule {
    /// `s_i = a_k i + b_k` for groups `i = 1..=groups`.
    Linear {
        slopes: Schedule<f64>,
        intercepts: Schedule<f64>,
        groups: usize,
    },
    Explicit(Schedule<Vec<f64>>),
}

impl SavingSchedule {
    pub fn linear(slope: f64, intercept: f64, groups: usize) -> Result<Self> {
        let s = SavingSchedule::Linear {
            slopes: Schedule::Constant(slope),
            intercepts: Schedule::Constant(intercept),
            groups,
        };
        s.rates(0)?;
        Ok(s)
    }

    pub fn uniform(rate: f64, groups: usize) -> Self {
        SavingSchedule::Explicit(Schedule::Constant(vec![rate; groups]))
    }

    pub fn groups(&self) -> usize {
        match self {
            SavingSchedule::Linear { groups, .. } => *groups,
            SavingSchedule::Explicit(s) => match s {
                Schedule::Constant(v) => v.len(),
                Schedule::Table(t) => t.first().map_or(0, |v| v.len()),
            },
        }
    }

    pub fn coefficients(&self, period: usize) -> Result<(f64, f64)> {
        match self {
            SavingSchedule::Linear {
                slopes, intercepts, ..
            } => Ok((*slopes.at(period)?, *intercepts.at(period)?)),
            SavingSchedule::Explicit(_) => Err(Error::InvalidParameter(
                "explicit saving schedules have no linear coefficients".into(),
            )),
        }
    }

    /// Rates in group order. Linear schedules must satisfy
    /// `1 > s_1 > s_2 > ... > s_M > 0`; explicit ones only `0 <= s < 1`.
    pub fn rates(&self, period: usize) -> Result<Vec<f64>> {
        let rates = match self {
            SavingSchedule::Linear { groups, .. } => {
                let (a, b) = self.coefficients(period)?;
                if !(a < 0.0 && b > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "linear schedule needs slope < 0 and intercept > 0, got a={a}, b={b}"
                    )));
                }
                let r: Vec<f64> = (1..=*groups).map(|i| a * i as f64 + b).collect();
                if !(r[0] < 1.0 && r[r.len() - 1] > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "saving rates {:?} leave (0, 1) at period {period}",
                        r
                    )));
                }
                r
            }
            SavingSchedule::Explicit(s) => {
                let r = s.at(period)?.clone();
                if let Some(bad) = r.iter().find(|x| !(**x >= 0.0 && **x < 1.0)) {
                    return Err(Error::InvalidParameter(format!("saving rate {bad} outside [0, 1)")));
                }
                r
            }
        };
        if rates.len() < 1 {
            return Err(Error::InvalidParameter("at least one group is required".into()));
        }
        Ok(rates)
    }
}

/// Where the market return comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ReturnSource {
    /// Supplied path, e.g. from a micro simulation. Entry `t` is `R_{t+1}`.
    External(Schedule<f64>),
    /// Each period's `R` makes group wealth add up to `A (1 + R)`.
    Closure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSetup {
    pub initial_wealth: Vec<f64>,
    /// Group labor income `W_{k,t}` (money).
    pub wages: Schedule<Vec<f64>>,
    pub leverage: Schedule<f64>,
    pub loan_rate: Schedule<f64>,
    /// Keep `s_k W_k` in the wealth recursion. Off gives the asymptotic form.
    pub wage_term: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTrajectory {
    pub group: usize,
    pub saving_rates: Vec<f64>,
    /// Length `T + 1`.
    pub wealth: Vec<f64>,
    pub debt: Vec<f64>,
    pub shares: Vec<f64>,
    /// Length `T`: wages and returns of the periods actually stepped.
    pub wages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evolution {
    pub groups: Vec<GroupTrajectory>,
    /// `R_{t+1}` for `t = 0..T`.
    pub returns: Vec<f64>,
    /// `X_t = R_{t+1} + mu_t (R_{t+1} - r_{t+1})`.
    pub effective_returns: Vec<f64>,
}

impl Evolution {
    pub fn periods(&self) -> usize {
        self.returns.len()
    }

    pub fn final_wealth(&self) -> Vec<f64> {
        self.groups.iter().map(|g| *g.wealth.last().unwrap()).collect()
    }

    pub fn share_path(&self, group: usize) -> &[f64] {
        &self.groups[group].shares
    }
}

/// Closure return: `R = (sum s W - mu r sum s A) / (A - (1 + mu) sum s A)`.
pub fn closure_return(wealth: &[f64], wages: &[f64], rates: &[f64], leverage: f64, loan_rate: f64) -> Result<f64> {
    let total = numeric::sum(wealth);
    let s_a = numeric::dot(rates, wealth);
    let s_w = numeric::dot(rates, wages);
    let denom = total - (1.0 + leverage) * s_a;
    if denom.abs() < DEGENERATE_TOL * total.abs().max(1.0) {
        return Err(Error::NonConvergence {
            solver: "aggregate closure",
            iterations: 0,
            residual: denom,
        });
    }
    Ok((s_w - leverage * loan_rate * s_a) / denom)
}

pub fn evolve_groups(
    setup: &GroupSetup,
    schedule: &SavingSchedule,
    source: &ReturnSource,
    periods: usize,
) -> Result<Evolution> {
    let m = setup.initial_wealth.len();
    if m == 0 || schedule.groups() != m {
        return Err(Error::DimensionMismatch {
            what: "group saving rates",
            expected: m,
            got: schedule.groups(),
        });
    }
    if setup.initial_wealth.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParameter("initial group wealth must be positive".into()));
    }
    let mut wealth = setup.initial_wealth.clone();
    let mut groups: Vec<GroupTrajectory> = (0..m)
        .map(|k| GroupTrajectory {
            group: k,
            saving_rates: Vec::with_capacity(periods),
            wealth: Vec::with_capacity(periods + 1),
            debt: Vec::with_capacity(periods + 1),
            shares: Vec::with_capacity(periods + 1),
            wages: Vec::with_capacity(periods),
            returns: Vec::with_capacity(periods),
        })
        .collect();
    let mut returns = Vec::with_capacity(periods);
    let mut effective = Vec::with_capacity(periods);

    let record = |groups: &mut Vec<GroupTrajectory>, wealth: &[f64], mu: f64| {
        let total = numeric::sum(wealth);
        for (k, g) in groups.iter_mut().enumerate() {
            g.wealth.push(wealth[k]);
            g.debt.push(mu * wealth[k]);
            g.shares.push(wealth[k] / total);
        }
    };
    record(&mut groups, &wealth, *setup.leverage.at(0)?);

    for t in 0..periods {
        let rates = schedule.rates(t)?;
        let mu = *setup.leverage.at(t)?;
        let loan = *setup.loan_rate.at(t)?;
        let raw_wages = setup.wages.at(t)?;
        if raw_wages.len() != m {
            return Err(Error::DimensionMismatch {
                what: "group wages",
                expected: m,
                got: raw_wages.len(),
            });
        }
        let wages: Vec<f64> = if setup.wage_term { raw_wages.clone() } else { vec![0.0; m] };
        let r = match source {
            ReturnSource::External(path) => *path.at(t)?,
            ReturnSource::Closure => closure_return(&wealth, &wages, &rates, mu, loan).map_err(|e| e.at_period(t))?,
        };
        let x = r + mu * (r - loan);
        for k in 0..m {
            wealth[k] = wealth[k] * (1.0 + rates[k] * x) + rates[k] * wages[k];
            groups[k].saving_rates.push(rates[k]);
            groups[k].wages.push(raw_wages[k]);
            groups[k].returns.push(r);
        }
        if wealth.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonConvergence {
                solver: "group recursion",
                iterations: t + 1,
                residual: f64::NAN,
            });
        }
        returns.push(r);
        effective.push(x);
        let mu_next = setup.leverage.at(t + 1).copied().unwrap_or(mu);
        record(&mut groups, &wealth, mu_next);
    }
    Ok(Evolution {
        groups,
        returns,
        effective_returns: effective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WageRatio {
    /// `W_t / A_t` for every stepped period.
    pub ratio: Vec<f64>,
    pub threshold: f64,
    pub first_below: Option<usize>,
}

pub fn prop2_ratio(trajectory: &GroupTrajectory, threshold: f64) -> WageRatio {
    let ratio: Vec<f64> = trajectory
        .wages
        .iter()
        .zip(&trajectory.wealth)
        .map(|(w, a)| w / a)
        .collect();
    let first_below = ratio.iter().position(|r| *r < threshold);
    WageRatio {
        ratio,
        threshold,
        first_below,
    }
}

/// First-order prediction of the slope of `ln A_i(T)` across group labels:
/// the sum over `k = 0..T` (exclusive) of `a_k X_k / (1 + (a_k + b_k) X_k)`.
pub fn predicted_loglog_slope(
    schedule: &SavingSchedule,
    returns: &Schedule<f64>,
    leverage: &Schedule<f64>,
    loan_rate: &Schedule<f64>,
    periods: usize,
) -> Result<f64> {
    let mut acc = numeric::Accumulator::default();
    for k in 0..periods {
        let (a, b) = schedule.coefficients(k)?;
        let r = *returns.at(k)?;
        let x = r + leverage.at(k)? * (r - loan_rate.at(k)?);
        acc.add(a * x / (1.0 + (a + b) * x));
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum FitRange {
    All,
    /// Largest fraction `q` of the observations.
    TopFraction(f64),
    /// Observations at or above a wealth level.
    MinValue(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub observations: usize,
    pub range: FitRange,
}

const MIN_FIT_OBS: usize = 10;

fn wrap(fit: numeric::SimpleOls, range: FitRange) -> TailFit {
    TailFit {
        exponent: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        observations: fit.n,
        range,
    }
}

/// OLS of `ln(rank / n)` on `ln(wealth)` where rank 1 is the largest.
pub fn fit_power_law(wealths: &[f64], range: FitRange) -> Result<TailFit> {
    let mut sorted: Vec<f64> = wealths.iter().copied().filter(|w| *w > 0.0 && w.is_finite()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let keep = match range {
        FitRange::All => sorted.len(),
        FitRange::TopFraction(q) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidParameter(format!("top fraction {q} outside (0, 1]")));
            }
            (q * n).ceil() as usize
        }
        FitRange::MinValue(x) => sorted.iter().take_while(|w| **w >= x).count(),
    };
    if keep < MIN_FIT_OBS {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs {MIN_FIT_OBS} positive observations in range, got {keep}"
        )));
    }
    let x: Vec<f64> = sorted[..keep].iter().map(|w| w.ln()).collect();
    let y: Vec<f64> = (1..=keep).map(|r| (r as f64 / n).ln()).collect();
    Ok(wrap(simple_ols(&x, &y)?, range))
}

/// OLS of `ln A_i` on `ln i` for values listed by label `i = 1, 2, ...`.
pub fn fit_rank_loglog(values: &[f64]) -> Result<TailFit> {
    if values.len() < MIN_FIT_OBS {
        return Err(Error::InsufficientData(format!(
            "log-log fit needs {MIN_FIT_OBS} observations, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidParameter(format!("log-log fit needs positive values, got {v}")));
    }
    let x: Vec<f64> = (1..=values.len()).map(|i| (i as f64).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Ok(wrap(simple_ols(&x, &y)?, FitRange::All))
}

/// Grid over schedule and environment parameters; every combination is one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub leverage: Vec<f64>,
    pub loan_rates: Vec<f64>,
    pub groups: Vec<usize>,
    pub periods: Vec<usize>,
    /// Initial wage-to-wealth ratio of every group.
    #[serde(default)]
    pub wage_ratio: f64,
    #[serde(default = "default_wage_term")]
    pub wage_term: bool,
}

fn default_wage_term() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub slope: f64,
    pub intercept: f64,
    pub leverage: f64,
    pub loan_rate: f64,
    pub groups: usize,
    pub periods: usize,
    pub final_top_share: f64,
    pub final_return: f64,
    pub steady_state_return: Option<f64>,
    pub predicted_slope: f64,
    pub fitted_slope: Option<f64>,
    pub wage_ratio_first_below: Option<usize>,
    pub error: Option<String>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        [
            self.slopes.len(),
            self.intercepts.len(),
            self.leverage.len(),
            self.loan_rates.len(),
            self.groups.len(),
            self.periods.len(),
        ]
        .iter()
        .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn points(&self) -> Vec<(f64, f64, f64, f64, usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for &a in &self.slopes {
            for &b in &self.intercepts {
                for &mu in &self.leverage {
                    for &r in &self.loan_rates {
                        for &m in &self.groups {
                            for &t in &self.periods {
                                out.push((a, b, mu, r, m, t));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Runs every grid point under the aggregate closure, in parallel. Failures
/// are reported per point rather than aborting the sweep.
pub fn sweep(grid: &SweepGrid) -> Vec<SweepPoint> {
    grid.points()
        .into_par_iter()
        .map(|(a, b, mu, loan, m, t)| {
            let mut point = SweepPoint {
                slope: a,
                intercept: b,
                leverage: mu,
                loan_rate: loan,
                groups: m,
                periods: t,
                final_top_share: f64::NAN,
                final_return: f64::NAN,
                steady_state_return: None,
                predicted_slope: f64::NAN,
                fitted_slope: None,
                wage_ratio_first_below: None,
                error: None,
            };
            let outcome = (|| -> Result<()> {
                let schedule = SavingSchedule::linear(a, b, m)?;
                let wealth = vec![1.0; m];
                let setup = GroupSetup {
                    wages: Schedule::Constant(vec![grid.wage_ratio; m]),
                    initial_wealth: wealth,
                    leverage: Schedule::Constant(mu),
                    loan_rate: Schedule::Constant(loan),
                    wage_term: grid.wage_term,
                };
                let ev = evolve_groups(&setup, &schedule, &ReturnSource::Closure, t)?;
                point.final_top_share = *ev.groups[0].shares.last().unwrap();
                point.final_return = ev.returns.last().copied().unwrap_or(f64::NAN);
                point.steady_state_return = steady_state_return(a + b, mu, loan).ok().map(|s| s.market_return);
                point.predicted_slope = predicted_loglog_slope(
                    &schedule,
                    &Schedule::Table(ev.returns.clone()),
                    &setup.leverage,
                    &setup.loan_rate,
                    t,
                )?;
                point.fitted_slope = fit_rank_loglog(&ev.final_wealth()).ok().map(|f| f.exponent);
                point.wage_ratio_first_below = prop2_ratio(&ev.groups[0], 1e-3).first_below;
                Ok(())
            })();
            if let Err(e) = outcome {
                point.error = Some(e.to_string());
            }
            point
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_state_examples() {
        let s = steady_state_return(0.8, 0.5, 0.04).unwrap();
        assert!((s.market_return - 0.08).abs() < 1e-15);
        assert!(!s.nonpositive);
        assert_eq!(steady_state_return(0.8, 0.0, 0.04).unwrap().market_return, 0.0);
        assert_eq!(steady_state_return(0.3, 0.7, 0.0).unwrap().market_return, 0.0);
        assert!(steady_state_return(0.5, 1.0, 0.04).is_err());
        assert!(steady_state_return(0.5, 0.2, 0.04).unwrap().nonpositive);
    }

    #[test]
    fn flat_schedule_has_zero_slope() {
        let s = SavingSchedule::Linear {
            slopes: Schedule::Constant(0.0),
            intercepts: Schedule::Constant(0.5),
            groups: 3,
        };
        let c = Schedule::Constant(0.1);
        let slope = predicted_loglog_slope(&s, &c, &Schedule::Constant(0.0), &c, 50).unwrap();
        assert_eq!(slope, 0.0);
    }

    #[test]
    fn slope_is_linear_in_horizon() {
        let s = SavingSchedule::linear(-0.05, 0.9, 10).unwrap();
        let r = Schedule::Constant(0.08);
        let mu = Schedule::Constant(0.5);
        let lr = Schedule::Constant(0.04);
        let s50 = predicted_loglog_slope(&s, &r, &mu, &lr, 50).unwrap();
        let s100 = predicted_loglog_slope(&s, &r, &mu, &lr, 100).unwrap();
        assert!((s100 - 2.0 * s50).abs() < 1e-13);
        let one = -0.05 * 0.1 / (1.0 + 0.85 * 0.1);
        assert!((s100 - 100.0 * one).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_linear_schedule() {
        assert!(SavingSchedule::linear(0.01, 0.5, 3).is_err());
        assert!(SavingSchedule::linear(-0.1, 0.5, 6).is_err());
        assert!(SavingSchedule::linear(-0.1, 1.15, 3).is_err());
    }

    #[test]
    fn zero_wages_give_zero_ratio() {
        let setup = GroupSetup {
            initial_wealth: vec![1.0, 2.0],
            wages: Schedule::Constant(vec![0.0, 0.0]),
            leverage: Schedule::Constant(0.5),
            loan_rate: Schedule::Constant(0.04),
            wage_term: true,
        };
        let ev = evolve_groups(
            &setup,
            &SavingSchedule::uniform(0.7, 2),
            &ReturnSource::External(Schedule::Constant(0.05)),
            20,
        )
        .unwrap();
        let w = prop2_ratio(&ev.groups[0], 1e-3);
        assert!(w.ratio.iter().all(|r| *r == 0.0));
        assert_eq!(w.first_below, Some(0));
    }

    #[test]
    fn too_few_points_to_fit() {
        assert!(matches!(
            fit_power_law(&[1.0; 9], FitRange::All),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(fit_rank_loglog(&[1.0; 5]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sweep_reports_each_point() {
        let grid = SweepGrid {
            slopes: vec![-0.05, -0.1],
            intercepts: vec![0.9],
            leverage: vec![0.5],
            loan_rates: vec![0.04],
            groups: vec![5],
            periods: vec![50],
            wage_ratio: 0.01,
            wage_term: true,
        };
        let out = sweep(&grid);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|p| p.error.is_none()));
    }
}
