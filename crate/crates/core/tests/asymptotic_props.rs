mod oracles;

use incomedist_core::asymptotic::{
    closure_return, evolve_groups, fit_power_law, fit_rank_loglog, predicted_loglog_slope, steady_state_return,
    FitRange, GroupSetup, ReturnSource, SavingSchedule,
};
use incomedist_core::Schedule;
use proptest::prelude::*;

fn setup(wealth: Vec<f64>, wages: Vec<f64>, mu: f64, loan: f64, wage_term: bool) -> GroupSetup {
    GroupSetup {
        initial_wealth: wealth,
        wages: Schedule::Constant(wages),
        leverage: Schedule::Constant(mu),
        loan_rate: Schedule::Constant(loan),
        wage_term,
    }
}

#[test]
fn closure_converges_to_top_saver_steady_state() {
    let (s, mu, r) = ([0.8, 0.4], 0.5, 0.04);
    let target = oracles::steady_state_bisection(s[0], mu, r);
    assert!((target - 0.08).abs() < 1e-12);
    let ev = evolve_groups(
        &setup(vec![0.9, 0.1], vec![0.0, 0.0], mu, r, false),
        &SavingSchedule::Explicit(Schedule::Constant(s.to_vec())),
        &ReturnSource::Closure,
        500,
    )
    .unwrap();
    let last = *ev.returns.last().unwrap();
    assert!((last - target).abs() < 1e-8, "{last}");
    assert!(ev.share_path(0).last().unwrap() > &0.999_999);
}

#[test]
fn closure_keeps_aggregate_identity() {
    let ev = evolve_groups(
        &setup(vec![1.0, 2.0, 0.5, 3.0], vec![0.1, 0.05, 0.2, 0.02], 0.3, 0.03, true),
        &SavingSchedule::linear(-0.1, 0.7, 4).unwrap(),
        &ReturnSource::Closure,
        200,
    )
    .unwrap();
    for t in 0..ev.periods() {
        let before: f64 = ev.groups.iter().map(|g| g.wealth[t]).sum();
        let after: f64 = ev.groups.iter().map(|g| g.wealth[t + 1]).sum();
        assert!((after / (before * (1.0 + ev.returns[t])) - 1.0).abs() < 1e-12, "period {t}");
    }
}

#[test]
fn uniform_saving_without_wages_keeps_shares() {
    let ev = evolve_groups(
        &setup(vec![1.0, 4.0, 2.0], vec![0.0; 3], 0.5, 0.04, false),
        &SavingSchedule::uniform(0.3, 3),
        &ReturnSource::External(Schedule::Constant(0.06)),
        300,
    )
    .unwrap();
    for g in &ev.groups {
        for s in &g.shares {
            assert!((s - g.shares[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn external_constant_return_grows_geometrically() {
    let rates = [0.9, 0.5, 0.1];
    let (r, mu, loan) = (0.07, 0.4, 0.03);
    let x = r + mu * (r - loan);
    let ev = evolve_groups(
        &setup(vec![1.0, 1.0, 1.0], vec![0.0; 3], mu, loan, false),
        &SavingSchedule::Explicit(Schedule::Constant(rates.to_vec())),
        &ReturnSource::External(Schedule::Constant(r)),
        120,
    )
    .unwrap();
    for (k, g) in ev.groups.iter().enumerate() {
        for (t, a) in g.wealth.iter().enumerate() {
            let expected = (1.0 + rates[k] * x).powi(t as i32);
            assert!((a / expected - 1.0).abs() < 1e-12, "group {k} period {t}");
        }
    }
}

#[test]
fn predicted_slope_matches_first_difference_for_small_slopes() {
    let (a, b, r, mu, loan, t) = (-1e-4, 0.5, 0.05, 0.2, 0.03, 50);
    let schedule = SavingSchedule::linear(a, b, 3).unwrap();
    let ev = evolve_groups(
        &setup(vec![1.0; 3], vec![0.0; 3], mu, loan, false),
        &schedule,
        &ReturnSource::External(Schedule::Constant(r)),
        t,
    )
    .unwrap();
    let predicted = predicted_loglog_slope(
        &schedule,
        &Schedule::Constant(r),
        &Schedule::Constant(mu),
        &Schedule::Constant(loan),
        t,
    )
    .unwrap();
    let w = ev.final_wealth();
    let diff = w[1].ln() - w[0].ln();
    assert!((diff / predicted - 1.0).abs() < 1e-3, "{diff} vs {predicted}");
}

#[test]
fn pareto_quantiles_recover_exponent() {
    let n = 5000;
    let alpha = 1.7;
    let w: Vec<f64> = (1..=n).map(|k| (n as f64 / k as f64).powf(1.0 / alpha)).collect();
    let fit = fit_power_law(&w, FitRange::All).unwrap();
    assert!((fit.exponent + alpha).abs() < 1e-10);
    assert!(fit.r_squared > 1.0 - 1e-12);
    let tail = fit_power_law(&w, FitRange::TopFraction(0.1)).unwrap();
    assert_eq!(tail.observations, 500);
    assert!((tail.exponent + alpha).abs() < 1e-10);
}

#[test]
fn exponential_values_are_not_a_power_law() {
    let v: Vec<f64> = (1..=40).map(|i| (-(i as f64) * 0.3).exp()).collect();
    let fit = fit_rank_loglog(&v).unwrap();
    assert!(fit.r_squared < 0.95, "{}", fit.r_squared);
    let p: Vec<f64> = (1..=40).map(|i| 3.0 * (i as f64).powf(-0.8)).collect();
    let fit = fit_rank_loglog(&p).unwrap();
    assert!((fit.exponent + 0.8).abs() < 1e-12);
    assert!((fit.intercept - 3.0_f64.ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn steady_state_matches_bisection(s in 0.01f64..0.99, mu in 0.0f64..3.0, r in 0.0f64..0.2) {
        prop_assume!((s * (1.0 + mu) - 1.0).abs() > 1e-3);
        let got = steady_state_return(s, mu, r).unwrap();
        let oracle = oracles::steady_state_bisection(s, mu, r);
        prop_assume!(oracle.abs() < 9.0);
        prop_assert!((got.market_return - oracle).abs() < 1e-10);
        prop_assert_eq!(got.nonpositive, got.market_return <= 0.0);
    }

    #[test]
    fn shares_sum_to_one(
        wealth in prop::collection::vec(0.1f64..10.0, 2..8),
        r in -0.05f64..0.2,
        mu in 0.0f64..1.0,
    ) {
        let m = wealth.len();
        let ev = evolve_groups(
            &setup(wealth, vec![0.05; m], mu, 0.03, true),
            &SavingSchedule::uniform(0.25, m),
            &ReturnSource::External(Schedule::Constant(r)),
            40,
        ).unwrap();
        for t in 0..=40 {
            let total: f64 = ev.groups.iter().map(|g| g.shares[t]).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closure_solves_its_own_identity(
        wealth in prop::collection::vec(0.1f64..10.0, 2..6),
        mu in 0.0f64..0.8,
        loan in 0.0f64..0.08,
    ) {
        let m = wealth.len();
        let rates: Vec<f64> = (0..m).map(|k| 0.6 - 0.1 * k as f64).collect();
        let wages = vec![0.1; m];
        let r = closure_return(&wealth, &wages, &rates, mu, loan).unwrap();
        let x = r + mu * (r - loan);
        let lhs: f64 = (0..m).map(|k| rates[k] * (wealth[k] * x + wages[k])).sum();
        let total: f64 = wealth.iter().sum();
        prop_assert!((lhs - total * r).abs() < 1e-10 * total.max(1.0));
    }
}
