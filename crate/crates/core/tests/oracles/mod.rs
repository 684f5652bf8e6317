//! Reference computations that share no code with the library solvers.
#![allow(dead_code)]

/// Root of `s [R + mu (R - r)] = R` by bisection on a wide bracket.
pub fn steady_state_bisection(s: f64, mu: f64, r: f64) -> f64 {
    let f = |x: f64| s * (x + mu * (x - r)) - x;
    let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
    assert!(f(lo).signum() != f(hi).signum(), "no sign change");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == f(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A two-household economy written out by hand.
pub struct TwoHouseholds {
    pub assets: [f64; 2],
    pub saving: [f64; 2],
    pub leverage: [f64; 2],
    pub wages: [f64; 2],
    pub real_consumption: f64,
    pub loan_rate: f64,
}

impl TwoHouseholds {
    /// Both households hold the single firm, so each earns `R`.
    fn residuals(&self, r: f64, p: f64) -> (f64, f64) {
        let mut saving = 0.0;
        let mut income = 0.0;
        let mut consumption = 0.0;
        let a_total = self.assets[0] + self.assets[1];
        for i in 0..2 {
            let d = self.leverage[i] * self.assets[i];
            let y = self.assets[i] * r + p * self.wages[i] + d * (r - self.loan_rate);
            saving += self.saving[i] * y;
            income += y;
            consumption += (1.0 - self.saving[i]) * y;
        }
        let _ = income;
        // asset growth equals saving; nominal consumption equals purchases
        (saving - a_total * r, consumption - p * self.real_consumption)
    }

    fn loss(&self, r: f64, p: f64) -> f64 {
        let (a, b) = self.residuals(r, p);
        a * a + b * b
    }

    /// Dense grid over `(R, p)` at `step`, then repeated zoomed grids.
    pub fn grid_solve(&self, r_box: (f64, f64), p_box: (f64, f64), step: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let nr = ((r_box.1 - r_box.0) / step).round() as usize;
        let np = ((p_box.1 - p_box.0) / step).round() as usize;
        for i in 0..=nr {
            let r = r_box.0 + i as f64 * step;
            for j in 0..=np {
                let p = p_box.0 + j as f64 * step;
                let l = self.loss(r, p);
                if l < best.0 {
                    best = (l, r, p);
                }
            }
        }
        let (mut r, mut p, mut h) = (best.1, best.2, step);
        for _ in 0..12 {
            let mut local = (self.loss(r, p), r, p);
            for i in -10..=10 {
                for j in -10..=10 {
                    let (rr, pp) = (r + i as f64 * h / 5.0, p + j as f64 * h / 5.0);
                    let l = self.loss(rr, pp);
                    if l < local.0 {
                        local = (l, rr, pp);
                    }
                }
            }
            r = local.1;
            p = local.2;
            h /= 5.0;
        }
        (r, p)
    }
}

/// Planner version of the two-period capital-goods economy.
pub struct GeOracle {
    pub alpha: f64,
    pub beta: f64,
    pub c2: f64,
    pub c3: f64,
    pub theta: f64,
    pub delta: f64,
    pub endowments: [f64; 2],
}

pub struct GeOracleResult {
    pub savings: [f64; 2],
    pub utility: f64,
    pub consumption: [f64; 2],
}

impl GeOracle {
    /// Best output of the consumer good given net capital `e` added to new
    /// production, or `None` if no labor split is feasible.
    pub fn period_output(&self, e: [f64; 2]) -> Option<f64> {
        let g = 1.0 - self.alpha - self.beta;
        let coef = [(self.alpha, self.c2), (self.beta, self.c3)];
        let floor: Vec<f64> = (0..2)
            .map(|j| if e[j] >= 0.0 { 0.0 } else { (-e[j] / coef[j].1).powf(1.0 / self.theta) })
            .collect();
        if floor[0] + floor[1] >= 1.0 {
            return None;
        }
        // marginal log-output of labor in capital good j, decreasing in l
        let h = |j: usize, l: f64| {
            let (w, c) = coef[j];
            w * c * self.theta * l.powf(self.theta - 1.0) / (c * l.powf(self.theta) + e[j])
        };
        let labor_at = |j: usize, lambda: f64| {
            let (mut lo, mut hi) = (floor[j], 1.0);
            if h(j, hi) >= lambda {
                return hi;
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if h(j, mid) > lambda {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let total = |lambda: f64| g / lambda + labor_at(0, lambda) + labor_at(1, lambda);
        let (mut lo, mut hi) = (-20.0_f64, 20.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if total(mid.exp()) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = (0.5 * (lo + hi)).exp();
        let l2 = labor_at(0, lambda);
        let l3 = labor_at(1, lambda);
        let l1 = 1.0 - l2 - l3;
        let k1 = self.c2 * l2.powf(self.theta) + e[0];
        let k2 = self.c3 * l3.powf(self.theta) + e[1];
        if !(l1 > 0.0 && k1 > 0.0 && k2 > 0.0) {
            return None;
        }
        Some(k1.powf(self.alpha) * k2.powf(self.beta) * l1.powf(g))
    }

    fn evaluate(&self, s: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let x1 = self.period_output([self.endowments[0] - s[0], self.endowments[1] - s[1]])?;
        let x2 = self.period_output(s)?;
        Some((x1.ln() + self.delta * x2.ln(), [x1, x2]))
    }

    fn scan(&self, lo: [f64; 2], hi: [f64; 2], step: f64) -> GeOracleResult {
        let n0 = ((hi[0] - lo[0]) / step).round() as usize;
        let n1 = ((hi[1] - lo[1]) / step).round() as usize;
        let mut best = GeOracleResult {
            savings: [f64::NAN; 2],
            utility: f64::NEG_INFINITY,
            consumption: [f64::NAN; 2],
        };
        for i in 0..=n0 {
            for j in 0..=n1 {
                let s = [lo[0] + i as f64 * step, lo[1] + j as f64 * step];
                if s[0] < 0.0 || s[1] < 0.0 {
                    continue;
                }
                if let Some((u, x)) = self.evaluate(s) {
                    if u > best.utility {
                        best = GeOracleResult {
                            savings: s,
                            utility: u,
                            consumption: x,
                        };
                    }
                }
            }
        }
        best
    }

    /// Grid over both storage quantities on `[0, upper]^2` at spacing
    /// `upper / 30`, then zoomed grids shrinking tenfold until `step`.
    pub fn solve(&self, upper: f64, step: f64) -> GeOracleResult {
        let mut h = upper / 30.0;
        let mut best = self.scan([0.0, 0.0], [upper, upper], h);
        while h > step * (1.0 + 1e-9) {
            let c = best.savings;
            let w = 2.0 * h;
            h = (h / 10.0).max(step);
            best = self.scan([(c[0] - w).max(0.0), (c[1] - w).max(0.0)], [c[0] + w, c[1] + w], h);
        }
        best
    }
}
