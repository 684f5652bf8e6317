//! Two-period economy with one consumer good, two storable capital goods and
//! a cash-in-advance constraint.
//!
//! Consumer good: `x = k1x^alpha k2x^beta l1^(1 - alpha - beta)`. Capital good
//! `j` is produced from labor as `k_j = c_{j+1} l_{j+1}^theta`. The household
//! begins with endowments `e_j` of each capital good, sells some to the
//! consumer-good firm and stores the rest into period 2. Utility is
//! `ln x1 + delta ln x2`.
//!
//! The system has 28 equations in 28 unknowns (14 per period). Prices are
//! pinned by factor pricing, the zero-profit condition of the consumer-good
//! firm and money. Storage decisions satisfy one intertemporal condition per
//! capital good.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GEParams {
    pub alpha: f64,
    pub beta: f64,
    pub c2: f64,
    pub c3: f64,
    /// Curvature of capital-good production in labor.
    pub theta: f64,
    pub delta: f64,
    pub money: [f64; 2],
    pub endowments: [f64; 2],
}

impl Default for GEParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.15,
            c2: 1.0,
            c3: 1.5,
            theta: 0.5,
            delta: 0.95,
            money: [1.0, 1.0],
            endowments: [0.2, 0.2],
        }
    }
}

impl GEParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha + self.beta < 1.0) {
            return bad("need alpha > 0, beta > 0 and alpha + beta < 1");
        }
        if !(self.c2 > 0.0 && self.c3 > 0.0) {
            return bad("capital productivities must be positive");
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta must lie in (0, 1]");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !self.money.iter().all(|m| *m > 0.0) {
            return bad("money supplies must be positive");
        }
        if !self.endowments.iter().all(|e| *e >= 0.0 && e.is_finite()) {
            return bad("endowments must be nonnegative");
        }
        Ok(())
    }

    /// Exchange the two capital goods.
    pub fn mirrored(&self) -> Self {
        Self {
            alpha: self.beta,
            beta: self.alpha,
            c2: self.c3,
            c3: self.c2,
            endowments: [self.endowments[1], self.endowments[0]],
            ..*self
        }
    }

    fn gamma(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GEPeriod {
    pub p_k1: f64,
    pub p_k2: f64,
    pub w: f64,
    pub p_x: f64,
    pub x: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub k1x: f64,
    pub k2x: f64,
    pub k1s: f64,
    pub k2s: f64,
    pub k1: f64,
    pub k2: f64,
}

pub const PERIOD_FIELDS: [&str; 14] = [
    "p_k1", "p_k2", "w", "p_x", "x", "l1", "l2", "l3", "k1x", "k2x", "k1s", "k2s", "k1", "k2",
];

impl GEPeriod {
    pub fn to_array(&self) -> [f64; 14] {
        [
            self.p_k1, self.p_k2, self.w, self.p_x, self.x, self.l1, self.l2, self.l3, self.k1x, self.k2x, self.k1s,
            self.k2s, self.k1, self.k2,
        ]
    }

    pub fn from_array(v: &[f64]) -> Self {
        Self {
            p_k1: v[0],
            p_k2: v[1],
            w: v[2],
            p_x: v[3],
            x: v[4],
            l1: v[5],
            l2: v[6],
            l3: v[7],
            k1x: v[8],
            k2x: v[9],
            k1s: v[10],
            k2s: v[11],
            k1: v[12],
            k2: v[13],
        }
    }

    fn quantities(&self) -> [f64; 10] {
        let a = self.to_array();
        let mut q = [0.0; 10];
        q.copy_from_slice(&a[4..]);
        q
    }

    /// Exchange the two capital goods.
    pub fn mirrored(&self) -> Self {
        Self {
            p_k1: self.p_k2,
            p_k2: self.p_k1,
            l2: self.l3,
            l3: self.l2,
            k1x: self.k2x,
            k2x: self.k1x,
            k1s: self.k2s,
            k2s: self.k1s,
            k1: self.k2,
            k2: self.k1,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GESolution {
    pub periods: [GEPeriod; 2],
    pub max_residual: f64,
    pub rank: usize,
    pub boundary: bool,
    pub start: usize,
    pub iterations: usize,
}

impl GESolution {
    /// All 28 values, period 1 first, in `PERIOD_FIELDS` order.
    pub fn values(&self) -> [f64; 28] {
        let mut v = [0.0; 28];
        v[..14].copy_from_slice(&self.periods[0].to_array());
        v[14..].copy_from_slice(&self.periods[1].to_array());
        v
    }

    pub fn labels() -> Vec<String> {
        (1..=2)
            .flat_map(|t| PERIOD_FIELDS.iter().map(move |f| format!("{f}_{t}")))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GESolverOptions {
    pub max_iterations: usize,
    pub damping: f64,
    pub tolerance: f64,
}

impl Default for GESolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            damping: 0.5,
            tolerance: 1e-10,
        }
    }
}

/// The 28 residuals at a point, in equation order:
/// per period `t` the consumer-good technology, both capital-good
/// technologies, labor adding up, the two input-ratio conditions, the two
/// capital-good pricing conditions, cash in advance and zero profit; then
/// stock-flow conditions into period 2 (four), period-1 stock use (two) and
/// the two storage conditions.
pub fn residuals(params: &GEParams, v: &[f64; 28]) -> [f64; 28] {
    let p = params;
    let g = p.gamma();
    let per = [GEPeriod::from_array(&v[..14]), GEPeriod::from_array(&v[14..])];
    let mut out = [0.0; 28];
    let mut n = 0;
    let mut push = |x: f64| {
        out[n] = x;
        n += 1;
    };
    let mut dk1 = [0.0; 2];
    let mut dk2 = [0.0; 2];
    for (t, q) in per.iter().enumerate() {
        let f = q.k1x.powf(p.alpha) * q.k2x.powf(p.beta) * q.l1.powf(g);
        let fk1 = p.alpha * f / q.k1x;
        let fk2 = p.beta * f / q.k2x;
        let fl = g * f / q.l1;
        dk1[t] = fk1;
        dk2[t] = fk2;
        push(q.x - f);
        push(q.k1 - p.c2 * q.l2.powf(p.theta));
        push(q.k2 - p.c3 * q.l3.powf(p.theta));
        push(q.l1 + q.l2 + q.l3 - 1.0);
        push(fk1 / q.p_k1 - fl / q.w);
        push(fk2 / q.p_k2 - fl / q.w);
        push(q.w - p.c2 * p.theta * q.l2.powf(p.theta - 1.0) * q.p_k1);
        push(q.w - p.c3 * p.theta * q.l3.powf(p.theta - 1.0) * q.p_k2);
        push(q.p_x * q.x + q.p_k1 * q.k1 + q.p_k2 * q.k2 - p.money[t]);
        push(q.p_x * fl - q.w);
    }
    let (a, b) = (&per[0], &per[1]);
    push(b.k1s);
    push(b.k2s);
    push(a.k1s + b.k1 - b.k1x);
    push(a.k2s + b.k2 - b.k2x);
    push(a.k1x + a.k1s - a.k1 - p.endowments[0]);
    push(a.k2x + a.k2s - a.k2 - p.endowments[1]);
    let u1 = 1.0 / a.x;
    let u2 = p.delta / b.x;
    push(u1 * dk1[0] - u2 * dk1[1]);
    push(u1 * dk2[0] - u2 * dk2[1]);
    debug_assert_eq!(n, 28);
    out
}

// Newton works in logs of the 26 free values (period-2 storage is zero).
const FREE: [usize; 26] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 26, 27,
];
// Identically zero residuals for the eliminated values.
const ACTIVE: [usize; 26] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 22, 23, 24, 25, 26, 27,
];

fn expand(z: &DVector<f64>) -> [f64; 28] {
    let mut v = [0.0; 28];
    for (k, &i) in FREE.iter().enumerate() {
        v[i] = z[k].exp();
    }
    v
}

fn active(params: &GEParams, z: &DVector<f64>) -> DVector<f64> {
    let r = residuals(params, &expand(z));
    DVector::from_iterator(26, ACTIVE.iter().map(|&i| r[i]))
}

fn max_abs(r: &DVector<f64>) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn jacobian(params: &GEParams, z: &DVector<f64>) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(26, 26);
    for k in 0..26 {
        let h = 1e-6 * z[k].abs().max(1.0);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[k] += h;
        zm[k] -= h;
        let d = (active(params, &zp) - active(params, &zm)) / (2.0 * h);
        j.set_column(k, &d);
    }
    j
}

/// Consistent starting point from a labor split and storage fractions.
fn start_point(params: &GEParams, l2: f64, l3: f64, store: f64) -> DVector<f64> {
    let p = params;
    let g = p.gamma();
    let l1 = 1.0 - l2 - l3;
    let mut v = [0.0; 28];
    let mut stored = [0.0; 2];
    for t in 0..2 {
        let k1 = p.c2 * l2.powf(p.theta);
        let k2 = p.c3 * l3.powf(p.theta);
        let (k1x, k2x, k1s, k2s) = if t == 0 {
            let avail = [k1 + p.endowments[0], k2 + p.endowments[1]];
            stored = [store * avail[0], store * avail[1]];
            (avail[0] - stored[0], avail[1] - stored[1], stored[0], stored[1])
        } else {
            (k1 + stored[0], k2 + stored[1], 0.0, 0.0)
        };
        let x = k1x.powf(p.alpha) * k2x.powf(p.beta) * l1.powf(g);
        let (pk1, pk2, w) = (p.alpha * x / k1x, p.beta * x / k2x, g * x / l1);
        let scale = p.money[t] / (x + pk1 * k1 + pk2 * k2);
        let q = GEPeriod {
            p_k1: pk1 * scale,
            p_k2: pk2 * scale,
            w: w * scale,
            p_x: scale,
            x,
            l1,
            l2,
            l3,
            k1x,
            k2x,
            k1s,
            k2s,
            k1,
            k2,
        };
        v[14 * t..14 * (t + 1)].copy_from_slice(&q.to_array());
    }
    DVector::from_iterator(26, FREE.iter().map(|&i| v[i].max(1e-300).ln()))
}

const STARTS: [(f64, f64, f64); 8] = [
    (0.2, 0.2, 0.3),
    (0.2, 0.2, 0.1),
    (0.1, 0.3, 0.3),
    (0.3, 0.1, 0.3),
    (0.15, 0.15, 0.5),
    (0.25, 0.25, 0.2),
    (0.1, 0.1, 0.4),
    (0.3, 0.3, 0.15),
];

struct Attempt {
    z: DVector<f64>,
    residual: f64,
    iterations: usize,
}

fn newton(params: &GEParams, mut z: DVector<f64>, opts: &GESolverOptions) -> Attempt {
    let mut r = active(params, &z);
    let mut best = max_abs(&r);
    let mut iterations = 0;
    let mut full_steps = false;
    while iterations < opts.max_iterations && best > opts.tolerance * 1e-3 {
        iterations += 1;
        let j = jacobian(params, &z);
        let dz = match j.lu().solve(&(-&r)) {
            Some(d) if d.iter().all(|x| x.is_finite()) => d,
            _ => break,
        };
        // Damped steps until the residual is small, then full steps.
        let mut lambda = if full_steps { 1.0 } else { opts.damping };
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &z + &dz * lambda;
            let rc = active(params, &cand);
            let m = max_abs(&rc);
            if m.is_finite() && m < best {
                z = cand;
                r = rc;
                best = m;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        if best < 1e-6 {
            full_steps = true;
        }
    }
    Attempt {
        z,
        residual: best,
        iterations,
    }
}

/// Numerical rank of the full 28 x 28 Jacobian in levels.
fn level_rank(params: &GEParams, v: &[f64; 28]) -> usize {
    let mut j = DMatrix::zeros(28, 28);
    for k in 0..28 {
        let h = 1e-7 * v[k].abs().max(1e-3);
        let mut vp = *v;
        let mut vm = *v;
        vp[k] += h;
        vm[k] -= h;
        let rp = residuals(params, &vp);
        let rm = residuals(params, &vm);
        for i in 0..28 {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    let sv = j.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > 1e-9 * top).count()
}

pub fn solve_ge(params: &GEParams, opts: &GESolverOptions) -> Result<GESolution> {
    params.validate()?;
    let attempts: Vec<(usize, Attempt)> = STARTS
        .par_iter()
        .enumerate()
        .map(|(i, &(l2, l3, s))| (i, newton(params, start_point(params, l2, l3, s), opts)))
        .collect();
    let (start, best) = attempts
        .into_iter()
        .min_by(|a, b| a.1.residual.total_cmp(&b.1.residual).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    let v = expand(&best.z);
    let full = residuals(params, &v);
    let max_residual = full.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if !(max_residual < opts.tolerance) {
        log::warn!("equilibrium solve failed; best start {start} reached residual {max_residual:e}");
        return Err(Error::NonConvergence {
            solver: "equilibrium Newton",
            iterations: best.iterations,
            residual: max_residual,
        });
    }
    let periods = [GEPeriod::from_array(&v[..14]), GEPeriod::from_array(&v[14..])];
    let boundary = periods[0]
        .quantities()
        .iter()
        .chain(periods[1].quantities()[..6].iter())
        .chain(periods[1].quantities()[8..].iter())
        .any(|q| *q < 1e-12);
    Ok(GESolution {
        periods,
        max_residual,
        rank: level_rank(params, &v),
        boundary,
        start,
        iterations: best.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArbitrageGap {
    pub ratio_k1: f64,
    pub ratio_k2: f64,
    pub gap: f64,
}

/// `p_k1^2 / p_k1^1 - p_k2^2 / p_k2^1`.
pub fn arbitrage_gap(solution: &GESolution) -> ArbitrageGap {
    let [a, b] = &solution.periods;
    let ratio_k1 = b.p_k1 / a.p_k1;
    let ratio_k2 = b.p_k2 / a.p_k2;
    ArbitrageGap {
        ratio_k1,
        ratio_k2,
        gap: ratio_k1 - ratio_k2,
    }
}

/// Household budget gap per period: wages, capital-firm profits and sales of
/// carried stock against consumption and capital bought for storage.
pub fn budget_residuals(params: &GEParams, solution: &GESolution) -> [f64; 2] {
    let [a, b] = &solution.periods;
    let carried = [params.endowments, [a.k1s, a.k2s]];
    let mut out = [0.0; 2];
    for (t, q) in [a, b].into_iter().enumerate() {
        let profits = q.p_k1 * q.k1 + q.p_k2 * q.k2 - q.w * (q.l2 + q.l3);
        let income = q.w + profits + q.p_k1 * carried[t][0] + q.p_k2 * carried[t][1];
        let spending = q.p_x * q.x + q.p_k1 * q.k1s + q.p_k2 * q.k2s;
        out[t] = income - spending;
    }
    out
}
