//! Pairwise divergence matrix over candidate subnetworks and the exact
//! lexicographic max-min / max-average sensing allocation.
//!
//! Both stages are 0/1 knapsack-type programs solved by depth-first
//! branch-and-bound. Columns are branched in index order with the "select"
//! branch first, so among equally good allocations the one whose selected
//! index list comes first lexicographically is returned. Row sums are always
//! accumulated in column-index order, so objective values are bit-identical
//! to a plain enumeration that sums the same way.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::AttackType;
use crate::error::{Error, Result};
use crate::partition::Partition;

/// Relative slack on the max-min threshold in the second stage.
pub const ALPHA_SLACK: f64 = 1e-9;

/// Relative inflation of relaxation bounds before pruning.
const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMatrix {
    /// Row-major `n_p x n_g` values.
    pub values: Vec<f64>,
    pub n_p: usize,
    pub n_g: usize,
    /// Type pair behind each row.
    pub pairs: Vec<(usize, usize)>,
    /// `(row, group, link)` entries skipped because both variances are zero
    /// while the means differ.
    pub zero_variance_links: Vec<(usize, usize, usize)>,
}

impl DifferenceMatrix {
    /// Builds a matrix from explicit rows; pairs are numbered `(i, i)`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_p = rows.len();
        let n_g = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != n_g) {
            return Err(Error::Dimension { what: "matrix row", expected: n_g, got: r.len() });
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation("difference matrix entries must be finite and non-negative".into()));
        }
        Ok(Self {
            values: rows.into_iter().flatten().collect(),
            n_p,
            n_g,
            pairs: (0..n_p).map(|i| (i, i)).collect(),
            zero_variance_links: Vec::new(),
        })
    }

    pub fn get(&self, row: usize, group: usize) -> f64 {
        self.values[row * self.n_g + group]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_g..(row + 1) * self.n_g]
    }

    pub fn column(&self, group: usize) -> Vec<f64> {
        (0..self.n_p).map(|i| self.get(i, group)).collect()
    }

    /// `M x`, summed in column order.
    pub fn apply(&self, x: &[bool]) -> Vec<f64> {
        (0..self.n_p)
            .map(|i| {
                let mut u = 0.0;
                for (j, _) in x.iter().enumerate().filter(|(_, s)| **s) {
                    u += self.get(i, j);
                }
                u
            })
            .collect()
    }

    /// CSV with one row per pair and one column per group.
    pub fn write_csv(&self, labels: &[String], out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["type_p".to_string(), "type_q".to_string()];
        header.extend(labels.iter().cloned());
        w.write_record(&header)?;
        for (i, &(p, q)) in self.pairs.iter().enumerate() {
            let mut rec = vec![p.to_string(), q.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Diagonal-covariance form of the pairwise divergence: for pair `(p, q)`
/// and group `g`, `sum_{l in g} (mu_p - mu_q)^2 / (sigma_p^2 + sigma_q^2)`.
/// Links where both deviations vanish contribute nothing and are recorded.
pub fn difference_matrix(
    types: &[AttackType],
    partition: &Partition,
    pairs: &[(usize, usize)],
) -> Result<DifferenceMatrix> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    if let Some(g) = partition.groups().iter().position(Vec::is_empty) {
        return Err(Error::EmptyGroup(g));
    }
    for t in types {
        if t.num_links() != partition.num_links() {
            return Err(Error::Dimension {
                what: "attack type length",
                expected: partition.num_links(),
                got: t.num_links(),
            });
        }
    }
    if let Some(&(p, q)) = pairs.iter().find(|(p, q)| p.max(q) >= &types.len()) {
        return Err(Error::OutOfRange { id: p.max(q), len: types.len() });
    }
    let n_g = partition.num_groups();
    type Row = (Vec<f64>, Vec<(usize, usize, usize)>);
    let rows: Vec<Row> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(p, q))| {
            let (tp, tq) = (&types[p], &types[q]);
            let mut zero = Vec::new();
            let row = partition
                .groups()
                .iter()
                .enumerate()
                .map(|(g, links)| {
                    let mut s = 0.0;
                    for &l in links {
                        let d = tp.mu[l] - tq.mu[l];
                        let v = tp.sigma[l] * tp.sigma[l] + tq.sigma[l] * tq.sigma[l];
                        if v > 0.0 {
                            s += d * d / v;
                        } else if d != 0.0 {
                            zero.push((i, g, l));
                        }
                    }
                    s
                })
                .collect();
            (row, zero)
        })
        .collect();
    let mut values = Vec::with_capacity(pairs.len() * n_g);
    let mut zero_variance_links = Vec::new();
    for (row, zero) in rows {
        values.extend(row);
        zero_variance_links.extend(zero);
    }
    if !zero_variance_links.is_empty() {
        warn!(
            "{} pair/link entries have zero variance on both sides and carry no weight",
            zero_variance_links.len()
        );
    }
    Ok(DifferenceMatrix {
        values,
        n_p: pairs.len(),
        n_g,
        pairs: pairs.to_vec(),
        zero_variance_links,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Vec<bool>,
    /// `M x`.
    pub u: Vec<f64>,
    /// `min_i u_i`.
    pub alpha: f64,
    /// `mean_i u_i`.
    pub avg: f64,
    /// `q^T x`.
    pub cost: f64,
}

impl Allocation {
    pub fn evaluate(m: &DifferenceMatrix, q: &[f64], x: Vec<bool>) -> Self {
        let u = m.apply(&x);
        let alpha = u.iter().copied().fold(f64::INFINITY, f64::min);
        let avg = u.iter().sum::<f64>() / m.n_p as f64;
        let mut cost = 0.0;
        for (j, _) in x.iter().enumerate().filter(|(_, s)| **s) {
            cost += q[j];
        }
        Self { x, u, alpha, avg, cost }
    }

    pub fn selected(&self) -> Vec<usize> {
        self.x.iter().enumerate().filter(|(_, s)| **s).map(|(j, _)| j).collect()
    }
}

fn check_inputs(m: &DifferenceMatrix, q: &[f64], gamma: f64) -> Result<()> {
    if m.n_p == 0 {
        return Err(Error::EmptyPairSet);
    }
    if q.len() != m.n_g {
        return Err(Error::Dimension { what: "group costs", expected: m.n_g, got: q.len() });
    }
    if let Some(c) = q.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::Validation(format!("group cost {c} must be positive")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Validation(format!("budget {gamma} must be non-negative")));
    }
    Ok(())
}

/// Shared search state for both stages.
struct Search<'a> {
    m: &'a DifferenceMatrix,
    q: &'a [f64],
    gamma: f64,
    /// Per row, columns by decreasing value per unit cost (ties by index).
    order: Vec<Vec<usize>>,
    /// Column sums and their order, for the average stage.
    colsum: Vec<f64>,
    colsum_order: Vec<usize>,
    x: Vec<bool>,
    /// `u` snapshot per depth.
    stack: Vec<Vec<f64>>,
    best_val: f64,
    best_x: Option<Vec<bool>>,
    nodes: u64,
}

enum Stage {
    MaxMin,
    /// Maximize the row total subject to every row reaching the threshold.
    Average(f64),
}

fn ratio_order(values: impl Fn(usize) -> f64, q: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..q.len()).filter(|&j| values(j) > 0.0).collect();
    idx.sort_by(|&a, &b| (values(b) / q[b]).total_cmp(&(values(a) / q[a])).then(a.cmp(&b)));
    idx
}

/// Fractional-knapsack value of the columns `>= from` listed in `order`.
fn fractional(order: &[usize], value: impl Fn(usize) -> f64, q: &[f64], from: usize, mut cap: f64) -> f64 {
    let mut total = 0.0;
    for &j in order {
        if j < from {
            continue;
        }
        if cap <= 0.0 {
            break;
        }
        if q[j] <= cap {
            total += value(j);
            cap -= q[j];
        } else {
            total += value(j) * cap / q[j];
            break;
        }
    }
    total
}

impl<'a> Search<'a> {
    fn new(m: &'a DifferenceMatrix, q: &'a [f64], gamma: f64) -> Self {
        let order = (0..m.n_p).map(|i| ratio_order(|j| m.get(i, j), q)).collect();
        let colsum: Vec<f64> = (0..m.n_g).map(|j| (0..m.n_p).map(|i| m.get(i, j)).sum()).collect();
        let colsum_order = ratio_order(|j| colsum[j], q);
        Self {
            m,
            q,
            gamma,
            order,
            colsum,
            colsum_order,
            x: vec![false; m.n_g],
            stack: vec![vec![0.0; m.n_p]; m.n_g + 1],
            best_val: f64::NEG_INFINITY,
            best_x: None,
            nodes: 0,
        }
    }

    fn add_column(&mut self, depth: usize, j: usize) {
        let (lo, hi) = self.stack.split_at_mut(depth + 1);
        let next = &mut hi[0];
        next.copy_from_slice(&lo[depth]);
        for (i, u) in next.iter_mut().enumerate() {
            *u += self.m.get(i, j);
        }
    }

    fn leaf(&mut self, u: &[f64], stage: &Stage) {
        let val = match *stage {
            Stage::MaxMin => u.iter().copied().fold(f64::INFINITY, f64::min),
            Stage::Average(thr) => {
                if u.iter().any(|&v| v < thr) {
                    return;
                }
                u.iter().sum()
            }
        };
        if self.best_x.is_none() || val > self.best_val {
            self.best_val = val;
            self.best_x = Some(self.x.clone());
        }
    }

    /// True when no completion of the current node can strictly beat the
    /// incumbent (or satisfy the threshold).
    fn prune(&self, depth: usize, cap: f64, stage: &Stage) -> bool {
        let u = &self.stack[depth];
        match *stage {
            Stage::MaxMin => {
                if self.best_x.is_none() {
                    return false;
                }
                let mut bound = f64::INFINITY;
                for (i, &ui) in u.iter().enumerate() {
                    let b = ui + fractional(&self.order[i], |j| self.m.get(i, j), self.q, depth, cap);
                    bound = bound.min(b);
                    if bound * (1.0 + BOUND_SLACK) <= self.best_val {
                        return true;
                    }
                }
                false
            }
            Stage::Average(thr) => {
                for (i, &ui) in u.iter().enumerate() {
                    if ui >= thr {
                        continue;
                    }
                    let b = ui + fractional(&self.order[i], |j| self.m.get(i, j), self.q, depth, cap);
                    if b * (1.0 + BOUND_SLACK) < thr {
                        return true;
                    }
                }
                if self.best_x.is_none() {
                    return false;
                }
                let total: f64 = u.iter().sum();
                let bound = total + fractional(&self.colsum_order, |j| self.colsum[j], self.q, depth, cap);
                bound * (1.0 + BOUND_SLACK) <= self.best_val
            }
        }
    }

    fn dfs(&mut self, depth: usize, cost: f64, stage: &Stage) {
        self.nodes += 1;
        let n_g = self.m.n_g;
        if depth == n_g {
            let u = self.stack[depth].clone();
            self.leaf(&u, stage);
            return;
        }
        // everything left is affordable: selecting it all dominates the subtree
        let mut all = cost;
        for j in depth..n_g {
            all += self.q[j];
        }
        if all <= self.gamma {
            let saved = self.x.clone();
            for j in depth..n_g {
                self.add_column(j, j);
                self.x[j] = true;
            }
            let u = self.stack[n_g].clone();
            self.leaf(&u, stage);
            self.x = saved;
            return;
        }
        if self.prune(depth, self.gamma - cost, stage) {
            return;
        }
        let next_cost = cost + self.q[depth];
        if next_cost <= self.gamma {
            self.add_column(depth, depth);
            self.x[depth] = true;
            self.dfs(depth + 1, next_cost, stage);
            self.x[depth] = false;
        }
        let (lo, hi) = self.stack.split_at_mut(depth + 1);
        hi[0].copy_from_slice(&lo[depth]);
        self.dfs(depth + 1, cost, stage);
    }

    fn run(mut self, stage: Stage) -> (f64, Vec<bool>, u64) {
        self.dfs(0, 0.0, &stage);
        let x = self.best_x.expect("the empty selection is always feasible");
        (self.best_val, x, self.nodes)
    }
}

/// Exact `max_x min_i (M x)_i` subject to `q^T x <= gamma`.
pub fn solve_max_min(m: &DifferenceMatrix, q: &[f64], gamma: f64) -> Result<(f64, Vec<bool>)> {
    check_inputs(m, q, gamma)?;
    let (alpha, x, _) = Search::new(m, q, gamma).run(Stage::MaxMin);
    Ok((alpha, x))
}

/// Lexicographic allocation: the best max-min value `alpha` first, then the
/// largest average divergence among allocations with every row at least
/// `alpha - 1e-9 (1 + alpha)`.
pub fn solve_lexicographic(m: &DifferenceMatrix, q: &[f64], gamma: f64) -> Result<Allocation> {
    let (alpha, _) = solve_max_min(m, q, gamma)?;
    let thr = alpha - ALPHA_SLACK * (1.0 + alpha);
    let (_, x, _) = Search::new(m, q, gamma).run(Stage::Average(thr));
    Ok(Allocation::evaluate(m, q, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_link_divergence() {
        let p = AttackType::new(0, vec![3.0], vec![2f64.sqrt()]).unwrap();
        let q = AttackType::new(1, vec![0.0], vec![2f64.sqrt()]).unwrap();
        let part = Partition::singletons(1);
        let m = difference_matrix(&[p.clone(), q], &part, &[(0, 1)]).unwrap();
        assert!((m.get(0, 0) - 2.25).abs() < 1e-15);
        let m = difference_matrix(&[p.clone(), p], &part, &[(0, 1)]).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn empty_inputs_rejected() {
        let t = AttackType::new(0, vec![1.0], vec![1.0]).unwrap();
        let part = Partition::singletons(1);
        assert!(matches!(difference_matrix(std::slice::from_ref(&t), &part, &[]), Err(Error::EmptyPairSet)));
        let empty = Partition::new(vec![vec![0], vec![]], vec![1.0, 1.0], 1).unwrap();
        assert!(matches!(
            difference_matrix(&[t.clone(), t], &empty, &[(0, 1)]),
            Err(Error::EmptyGroup(1))
        ));
    }

    #[test]
    fn zero_variance_links_are_skipped() {
        let a = AttackType { id: 0, mu: vec![1.0, 1.0], sigma: vec![0.0, 1.0] };
        let b = AttackType { id: 1, mu: vec![0.0, 0.0], sigma: vec![0.0, 1.0] };
        let m = difference_matrix(&[a, b], &Partition::new(vec![vec![0, 1]], vec![1.0], 2).unwrap(), &[(0, 1)])
            .unwrap();
        assert_eq!(m.get(0, 0), 0.5);
        assert_eq!(m.zero_variance_links, vec![(0, 0, 0)]);
    }

    #[test]
    fn full_budget_selects_everything() {
        let m = DifferenceMatrix::from_rows(vec![vec![1.0, 0.0, 2.0], vec![0.5, 3.0, 0.0]]).unwrap();
        let a = solve_lexicographic(&m, &[1.0, 2.0, 1.0], 4.0).unwrap();
        assert_eq!(a.x, vec![true, true, true]);
        assert_eq!(a.u, vec![3.0, 3.5]);
        assert_eq!(a.alpha, 3.0);
    }

    #[test]
    fn tiny_budget_selects_nothing() {
        let m = DifferenceMatrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let (alpha, x) = solve_max_min(&m, &[1.0, 1.0], 0.5).unwrap();
        assert_eq!((alpha, x), (0.0, vec![false, false]));
    }

    #[test]
    fn single_group_affordable() {
        let m = DifferenceMatrix::from_rows(vec![vec![0.7]]).unwrap();
        assert_eq!(solve_lexicographic(&m, &[1.0], 1.0).unwrap().x, vec![true]);
    }

    #[test]
    fn equal_columns_prefer_the_first() {
        let m = DifferenceMatrix::from_rows(vec![vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let a = solve_lexicographic(&m, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(a.x, vec![true, false]);
    }

    #[test]
    fn average_breaks_max_min_ties() {
        // alpha = 1 is achievable by columns 0 or 1; column 1 has the larger total
        let m = DifferenceMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 5.0]]).unwrap();
        let (alpha, x) = solve_max_min(&m, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!((alpha, x), (1.0, vec![true, false]));
        let a = solve_lexicographic(&m, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(a.x, vec![false, true]);
        assert_eq!(a.avg, 3.0);
    }

    #[test]
    fn empty_pair_set_rejected() {
        let m = DifferenceMatrix::from_rows(vec![]).unwrap();
        assert!(matches!(solve_max_min(&m, &[], 1.0), Err(Error::EmptyPairSet)));
    }
}
