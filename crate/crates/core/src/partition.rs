//! Grouping households so that each group's portfolio is close to the market.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::economy::{market_weights, EconomyState, FirmBlock, Portfolio};
use crate::error::{Error, Result};
use crate::micro_sim::PeriodSolution;
use crate::numeric::{sum_map, Accumulator};

/// Groups are indexed from 0 here; the CLI reports them from 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub group_portfolios: Vec<Vec<f64>>,
    /// Total gross wealth `a_i + d_i` per group.
    pub group_wealth: Vec<f64>,
    /// Euclidean distance of each group portfolio to the market portfolio.
    pub distances: Vec<f64>,
    pub swaps: usize,
}

impl Partition {
    pub fn groups(&self) -> usize {
        self.distances.len()
    }

    pub fn max_distance(&self) -> f64 {
        self.distances.iter().cloned().fold(0.0, f64::max)
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == group)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.groups()];
        for &g in &self.assignment {
            out[g] += 1;
        }
        out
    }
}

pub fn market_portfolio(firms: &FirmBlock) -> Result<Vec<f64>> {
    if firms.equity_values.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParameter("equity values must be positive".into()));
    }
    Ok(market_weights(&firms.equity_values))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Running weighted holdings of one group.
#[derive(Clone)]
struct GroupSums {
    holdings: Vec<f64>,
    wealth: f64,
}

impl GroupSums {
    fn distance(&self, market: &[f64]) -> f64 {
        if self.wealth <= 0.0 {
            return f64::INFINITY;
        }
        let w = self.wealth;
        self.holdings
            .iter()
            .zip(market)
            .map(|(h, m)| (h / w - m).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Distance after removing `out` and adding `inn` (each `(gross, row)`).
    fn distance_after(&self, out: (f64, &[f64]), inn: (f64, &[f64]), market: &[f64]) -> f64 {
        let w = self.wealth - out.0 + inn.0;
        if w <= 0.0 {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for j in 0..market.len() {
            let h = self.holdings[j] - out.0 * out.1[j] + inn.0 * inn.1[j];
            acc += (h / w - market[j]).powi(2);
        }
        acc.sqrt()
    }

    fn apply(&mut self, out: (f64, &[f64]), inn: (f64, &[f64])) {
        self.wealth += inn.0 - out.0;
        for j in 0..self.holdings.len() {
            self.holdings[j] += inn.0 * inn.1[j] - out.0 * out.1[j];
        }
    }
}

fn build(
    assignment: Vec<usize>,
    groups: usize,
    gross: &[f64],
    row: &(dyn Fn(usize) -> Vec<f64> + Sync),
    market: &[f64],
    swaps: usize,
) -> Partition {
    let firms = market.len();
    let members: Vec<Vec<usize>> = {
        let mut m = vec![Vec::new(); groups];
        for (i, &g) in assignment.iter().enumerate() {
            m[g].push(i);
        }
        m
    };
    let sums: Vec<(Vec<f64>, f64)> = members
        .par_iter()
        .map(|idx| {
            let mut acc = vec![Accumulator::default(); firms];
            let mut w = Accumulator::default();
            for &i in idx {
                let r = row(i);
                for j in 0..firms {
                    acc[j].add(gross[i] * r[j]);
                }
                w.add(gross[i]);
            }
            (acc.iter().map(|a| a.value()).collect(), w.value())
        })
        .collect();
    let group_portfolios: Vec<Vec<f64>> = sums
        .iter()
        .map(|(h, w)| h.iter().map(|x| x / w).collect())
        .collect();
    let distances = group_portfolios.iter().map(|p| euclid(p, market)).collect();
    Partition {
        assignment,
        group_portfolios,
        group_wealth: sums.iter().map(|(_, w)| *w).collect(),
        distances,
        swaps,
    }
}

const BATCH: usize = 256;
const STALL_BATCHES: usize = 4;

/// Greedy round-robin by gross wealth followed by improving pairwise swaps.
///
/// Swaps run only while the worst group is at or above `epsilon`, and each
/// batch evaluates seeded random candidate pairs involving the worst group.
/// The search stops after `10 N` evaluated swaps or a run of batches without
/// improvement.
pub fn partition_households(state: &EconomyState, groups: usize, epsilon: f64, seed: u64) -> Result<Partition> {
    let h = &state.households;
    let n = h.len();
    if groups < 2 {
        return Err(Error::InvalidParameter("at least 2 groups are required".into()));
    }
    if n < groups {
        return Err(Error::InvalidParameter(format!(
            "{n} households cannot fill {groups} groups"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let market = market_portfolio(&state.firms)?;
    let gross: Vec<f64> = (0..n).map(|i| h.gross_wealth(i)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| gross[b].total_cmp(&gross[a]).then(a.cmp(&b)));
    let mut assignment = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank % groups;
    }

    let dense = match &h.portfolio {
        Portfolio::Market => None,
        Portfolio::Dense(v) => Some(v.clone()),
    };
    let row = |i: usize| -> Vec<f64> {
        match &dense {
            Some(v) => v.row(i).to_vec(),
            None => market.clone(),
        }
    };

    let mut swaps = 0;
    if let Some(v) = &dense {
        let initial = build(assignment.clone(), groups, &gross, &row, &market, 0);
        let mut sums: Vec<GroupSums> = (0..groups)
            .map(|g| GroupSums {
                holdings: initial.group_portfolios[g]
                    .iter()
                    .map(|p| p * initial.group_wealth[g])
                    .collect(),
                wealth: initial.group_wealth[g],
            })
            .collect();
        let mut dist = initial.distances.clone();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
        for (i, &g) in assignment.iter().enumerate() {
            members[g].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = 10 * n;
        let mut attempts = 0;
        let mut stalled = 0;
        let max_of = |d: &[f64]| d.iter().cloned().fold(0.0, f64::max);

        while attempts < budget && stalled < STALL_BATCHES && max_of(&dist) >= epsilon {
            let worst = (0..groups).max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a))).unwrap();
            let batch = BATCH.min(budget - attempts);
            let candidates: Vec<(usize, usize, usize)> = (0..batch)
                .map(|_| {
                    let a = members[worst][rng.random_range(0..members[worst].len())];
                    let mut other = rng.random_range(0..groups - 1);
                    if other >= worst {
                        other += 1;
                    }
                    let b = members[other][rng.random_range(0..members[other].len())];
                    (a, other, b)
                })
                .collect();
            attempts += batch;
            let current = max_of(&dist);
            let best = candidates
                .par_iter()
                .enumerate()
                .map(|(c, &(a, other, b))| {
                    let ra = v.row(a);
                    let rb = v.row(b);
                    let (ra, rb) = (ra.as_slice().unwrap_or(&[]), rb.as_slice().unwrap_or(&[]));
                    let dw = sums[worst].distance_after((gross[a], ra), (gross[b], rb), &market);
                    let dot = sums[other].distance_after((gross[b], rb), (gross[a], ra), &market);
                    let mut m = dw.max(dot);
                    for g in 0..groups {
                        if g != worst && g != other {
                            m = m.max(dist[g]);
                        }
                    }
                    (m, c)
                })
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            match best {
                Some((m, c)) if m < current => {
                    let (a, other, b) = candidates[c];
                    let ra = row(a);
                    let rb = row(b);
                    sums[worst].apply((gross[a], &ra), (gross[b], &rb));
                    sums[other].apply((gross[b], &rb), (gross[a], &ra));
                    dist[worst] = sums[worst].distance(&market);
                    dist[other] = sums[other].distance(&market);
                    assignment[a] = other;
                    assignment[b] = worst;
                    let pa = members[worst].iter().position(|&x| x == a).unwrap();
                    members[worst][pa] = b;
                    let pb = members[other].iter().position(|&x| x == b).unwrap();
                    members[other][pb] = a;
                    swaps += 1;
                    stalled = 0;
                }
                _ => stalled += 1,
            }
        }
    }

    // recompute from scratch so no incremental drift is reported
    let partition = build(assignment, groups, &gross, &row, &market, swaps);
    let best = partition.max_distance();
    if best < epsilon {
        Ok(partition)
    } else {
        Err(Error::EpsilonUnreachable {
            epsilon,
            best,
            partition: Box::new(partition),
        })
    }
}

/// `sum s_i y_i / sum y_i` over the group.
pub fn group_saving_rate(state: &EconomyState, solution: &PeriodSolution, group: &[usize]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::InvalidParameter("group must be nonempty".into()));
    }
    let y = &solution.incomes;
    let s = &state.households.saving_rates;
    if y.len() != s.len() {
        return Err(Error::DimensionMismatch {
            what: "solution incomes",
            expected: s.len(),
            got: y.len(),
        });
    }
    let income = sum_map(group.len(), |k| y[group[k]]);
    if income.abs() <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate {
            context: "group income",
            value: income,
        });
    }
    Ok(sum_map(group.len(), |k| s[group[k]] * y[group[k]]) / income)
}

/// Relabels groups so saving rates are non-increasing in the label.
/// Ties keep the lower original label first. Returns the rates in new order.
pub fn relabel_by_saving_rate(
    partition: &Partition,
    state: &EconomyState,
    solution: &PeriodSolution,
) -> Result<(Partition, Vec<f64>)> {
    let rates = (0..partition.groups())
        .map(|g| group_saving_rate(state, solution, &partition.members(g)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]).then(a.cmp(&b)));
    let mut new_label = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_label[old] = new;
    }
    let relabeled = Partition {
        assignment: partition.assignment.iter().map(|&g| new_label[g]).collect(),
        group_portfolios: order.iter().map(|&g| partition.group_portfolios[g].clone()).collect(),
        group_wealth: order.iter().map(|&g| partition.group_wealth[g]).collect(),
        distances: order.iter().map(|&g| partition.distances[g]).collect(),
        swaps: partition.swaps,
    };
    Ok((relabeled, order.iter().map(|&g| rates[g]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::{GoodsBlock, HouseholdBlock};
    use ndarray::{array, Array2};

    fn state_with(v: Array2<f64>, assets: Vec<f64>) -> EconomyState {
        let n = assets.len();
        let f = v.ncols();
        let h = HouseholdBlock::new(assets, vec![0.5; n], vec![0.0; n], vec![1.0; n], Portfolio::dense(v)).unwrap();
        let firms = FirmBlock::from_household_claims(&h, vec![1.0; f]).unwrap();
        let g = GoodsBlock::new(vec![1.0], Array2::from_elem((n, 1), 1.0)).unwrap();
        EconomyState::new(0, h, firms, g, 1.0).unwrap()
    }

    #[test]
    fn market_weights_examples() {
        let f = FirmBlock::new(vec![70.0, 30.0], vec![1.0, 1.0]).unwrap();
        let m = market_portfolio(&f).unwrap();
        assert!((m[0] - 0.7).abs() < 1e-15 && (m[1] - 0.3).abs() < 1e-15);
        let f = FirmBlock::new(vec![5.0], vec![1.0]).unwrap();
        assert_eq!(market_portfolio(&f).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_rows_give_zero_distance() {
        let v = Array2::from_shape_fn((12, 3), |(_, j)| [0.2, 0.3, 0.5][j]);
        let state = state_with(v, (1..=12).map(|i| i as f64).collect());
        let p = partition_households(&state, 3, 1e-9, 0).unwrap();
        assert!(p.max_distance() < 1e-12);
        assert_eq!(p.sizes(), vec![4, 4, 4]);
    }

    #[test]
    fn two_opposite_households() {
        let state = state_with(array![[1.0, 0.0], [0.0, 1.0]], vec![1.0, 1.0]);
        match partition_households(&state, 2, 0.5, 0) {
            Err(Error::EpsilonUnreachable { best, partition, .. }) => {
                assert!((best - 0.5f64.sqrt()).abs() < 1e-12);
                assert_eq!(partition.sizes(), vec![1, 1]);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        let p = partition_households(&state, 2, 0.8, 0).unwrap();
        for d in &p.distances {
            assert!((d - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn preconditions() {
        let state = state_with(array![[1.0], [1.0]], vec![1.0, 1.0]);
        assert!(partition_households(&state, 1, 0.1, 0).is_err());
        assert!(partition_households(&state, 3, 0.1, 0).is_err());
    }
}
