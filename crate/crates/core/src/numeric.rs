//! Compensated reductions and simple least squares.
//!
//! Every cross-agent reduction in the crate goes through [`sum`] or
//! [`sum_map`]. The input is split into fixed-size chunks, each chunk is
//! reduced with Neumaier summation and the chunk partials are combined in
//! index order, so the result does not depend on the rayon thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

const CHUNK: usize = 8192;
const PAR_THRESHOLD: usize = 1 << 16;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn chunk_sum<F: Fn(usize) -> f64>(start: usize, end: usize, f: &F) -> f64 {
    let mut acc = Accumulator::default();
    for i in start..end {
        acc.add(f(i));
    }
    acc.value()
}

/// Deterministic compensated sum of `f(i)` for `i in 0..n`.
pub fn sum_map<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<f64> = if n >= PAR_THRESHOLD {
        (0..chunks)
            .into_par_iter()
            .map(|c| chunk_sum(c * CHUNK, ((c + 1) * CHUNK).min(n), &f))
            .collect()
    } else {
        (0..chunks)
            .map(|c| chunk_sum(c * CHUNK, ((c + 1) * CHUNK).min(n), &f))
            .collect()
    };
    let mut acc = Accumulator::default();
    for p in partials {
        acc.add(p);
    }
    acc.value()
}

pub fn sum(xs: &[f64]) -> f64 {
    sum_map(xs.len(), |i| xs[i])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_map(a.len(), |i| a[i] * b[i])
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Simple regression `y = intercept + slope * x` with classical standard errors.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SimpleOls {
    pub n: usize,
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub intercept_t: f64,
    pub slope_t: f64,
    pub r_squared: f64,
    pub f_statistic: f64,
    pub correlation: f64,
}

pub fn simple_ols(x: &[f64], y: &[f64]) -> Result<SimpleOls> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "regression pairs",
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs at least 3 observations, got {n}"
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx = sum_map(n, |i| (x[i] - mx).powi(2));
    let syy = sum_map(n, |i| (y[i] - my).powi(2));
    let sxy = sum_map(n, |i| (x[i] - mx) * (y[i] - my));
    if sxx <= f64::MIN_POSITIVE {
        return Err(Error::ZeroVariance("regressor"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = sum_map(n, |i| (y[i] - intercept - slope * x[i]).powi(2));
    let dof = (n - 2) as f64;
    let sigma2 = ssr / dof;
    let slope_se = (sigma2 / sxx).sqrt();
    let intercept_se = (sigma2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt();
    let correlation = if syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        f64::NAN
    };
    // For the simple regression R^2 is sxy^2 / (sxx syy); computing it this way
    // keeps it identical to the squared correlation.
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    let slope_t = slope / slope_se;
    let f_statistic = if ssr > 0.0 {
        (syy - ssr).max(0.0) / sigma2
    } else {
        f64::INFINITY
    };
    Ok(SimpleOls {
        n,
        intercept,
        slope,
        intercept_se,
        slope_se,
        intercept_t: intercept / intercept_se,
        slope_t,
        r_squared,
        f_statistic,
        correlation,
    })
}

/// Relative difference scaled by `max(1, |b|)`.
#[inline]
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
