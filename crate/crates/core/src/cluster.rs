//! l1 k-medians over best-response route flows, epsilon coverage and the
//! cross-cluster pair set.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, StreamId};

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = l1(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Coordinate-wise median; even counts take the midpoint of the two central
/// values.
pub fn coordinate_median(points: &[&[f64]]) -> Vec<f64> {
    let dim = points[0].len();
    let mut col = Vec::with_capacity(points.len());
    (0..dim)
        .map(|k| {
            col.clear();
            col.extend(points.iter().map(|p| p[k]));
            col.sort_by(f64::total_cmp);
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                0.5 * (col[n / 2 - 1] + col[n / 2])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMediansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of l1 distances from each flow to its assigned center.
    pub objective: f64,
    /// Objective after every assignment step of the winning restart.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

fn check_flows(flows: &[Vec<f64>]) -> Result<()> {
    let Some(first) = flows.first() else {
        return Err(Error::Validation("no flows to cluster".into()));
    };
    if let Some(f) = flows.iter().find(|f| f.len() != first.len()) {
        return Err(Error::Dimension {
            what: "flow vector",
            expected: first.len(),
            got: f.len(),
        });
    }
    Ok(())
}

fn seed_centers(flows: &[Vec<f64>], n_c: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = flows.len();
    let mut centers = vec![flows[rng.random_range(0..n)].clone()];
    let mut d: Vec<f64> = flows.iter().map(|f| l1(f, &centers[0])).collect();
    while centers.len() < n_c {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &di) in d.iter().enumerate() {
                if di > 0.0 {
                    chosen = Some(i);
                    if r < di {
                        break;
                    }
                    r -= di;
                }
            }
            chosen.expect("positive total weight")
        } else {
            rng.random_range(0..n)
        };
        let c = flows[pick].clone();
        for (di, f) in d.iter_mut().zip(flows) {
            *di = di.min(l1(f, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(flows: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMediansResult {
    let mut assignment = vec![usize::MAX; flows.len()];
    let mut trace = Vec::new();
    for _ in 0..10_000 {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, f) in flows.iter().enumerate() {
            let (j, d) = nearest(f, &centers);
            objective += d;
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed {
            break;
        }
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64]> = flows
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == j)
                .map(|(f, _)| f.as_slice())
                .collect();
            if !members.is_empty() {
                *c = coordinate_median(&members);
            }
        }
    }
    let objective = *trace.last().expect("at least one assignment");
    KMediansResult {
        centers,
        assignment,
        objective,
        trace,
        warnings: Vec::new(),
    }
}

/// Best of `restarts` seeded alternating-minimization runs. Restart `r` draws
/// its seeding from stream `(seed, KMedians, n_c, r)`; the lowest objective
/// wins, ties to the lowest restart index.
pub fn k_medians(flows: &[Vec<f64>], n_c: usize, restarts: usize, seed: u64) -> Result<KMediansResult> {
    check_flows(flows)?;
    if n_c == 0 {
        return Err(Error::Validation("cluster count must be at least 1".into()));
    }
    if restarts == 0 {
        return Err(Error::Validation("restarts must be at least 1".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for f in flows {
        if !distinct.contains(&f) {
            distinct.push(f);
        }
    }
    let mut warnings = Vec::new();
    if n_c > distinct.len() {
        let msg = format!(
            "{n_c} clusters requested for {} distinct flows; some centers will coincide",
            distinct.len()
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let runs: Vec<KMediansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamId::new(seed, Domain::KMedians, n_c as u32, r as u32).rng();
            lloyd(flows, seed_centers(flows, n_c, &mut rng))
        })
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.objective < a.objective { b } else { a })
        .expect("restarts >= 1");
    best.warnings = warnings;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centers: Vec<Vec<f64>>,
    pub epsilon: f64,
    /// Attack-type ids per cluster.
    pub members: Vec<Vec<usize>>,
    pub n_c: usize,
    /// Cluster of each type, `None` when outside every epsilon ball.
    pub assignment: Vec<Option<usize>>,
}

impl ClusterModel {
    /// Builds memberships from centers: each type joins its nearest center
    /// (ties to the lowest index) if within `epsilon`.
    pub fn from_centers(flows: &[Vec<f64>], centers: Vec<Vec<f64>>, epsilon: f64) -> Self {
        let mut members = vec![Vec::new(); centers.len()];
        let assignment = flows
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let (j, d) = nearest(f, &centers);
                (d <= epsilon).then(|| {
                    members[j].push(i);
                    j
                })
            })
            .collect();
        Self {
            n_c: centers.len(),
            centers,
            epsilon,
            members,
            assignment,
        }
    }

    pub fn uncovered(&self) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    /// Types lying within epsilon of more than one center.
    pub fn ambiguous(&self, flows: &[Vec<f64>]) -> Vec<usize> {
        flows
            .iter()
            .enumerate()
            .filter(|(_, f)| self.centers.iter().filter(|c| l1(f, c) <= self.epsilon).count() > 1)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Smallest `n_c` in `1..=n_c_max` whose k-medians centers cover every flow
/// within `epsilon`.
pub fn choose_n_c(
    flows: &[Vec<f64>],
    epsilon: f64,
    n_c_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<ClusterModel> {
    check_flows(flows)?;
    if !(epsilon > 0.0) {
        return Err(Error::Validation(format!("epsilon {epsilon} must be positive")));
    }
    let mut uncovered = Vec::new();
    for n_c in 1..=n_c_max.min(flows.len()) {
        let km = k_medians(flows, n_c, restarts, seed)?;
        let model = ClusterModel::from_centers(flows, km.centers, epsilon);
        uncovered = model.uncovered();
        if uncovered.is_empty() {
            let ambiguous = model.ambiguous(flows);
            if !ambiguous.is_empty() {
                warn!("types {ambiguous:?} lie within epsilon of several centers; kept at the nearest");
            }
            return Ok(model);
        }
    }
    Err(Error::Coverage { n_c_max, uncovered })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSets {
    /// Cross-cluster pairs `(i, j)`, `i < j`, in lexicographic order.
    pub p: Vec<(usize, usize)>,
    /// Same-cluster pairs.
    pub q: Vec<(usize, usize)>,
    /// Types in no cluster; they appear in neither set.
    pub unassigned: Vec<usize>,
}

pub fn pair_sets(model: &ClusterModel, n_a: usize) -> Result<PairSets> {
    let mut cluster_of = vec![None; n_a];
    for (j, members) in model.members.iter().enumerate() {
        for &i in members {
            if i >= n_a {
                return Err(Error::OutOfRange { id: i, len: n_a });
            }
            if cluster_of[i].is_some() {
                return Err(Error::OverlappingClusters(i));
            }
            cluster_of[i] = Some(j);
        }
    }
    let unassigned: Vec<usize> = (0..n_a).filter(|&i| cluster_of[i].is_none()).collect();
    if !unassigned.is_empty() {
        warn!("types {unassigned:?} are in no cluster and are left out of the pair sets");
    }
    let mut p = Vec::new();
    let mut q = Vec::new();
    for i in 0..n_a {
        for j in i + 1..n_a {
            match (cluster_of[i], cluster_of[j]) {
                (Some(a), Some(b)) if a == b => q.push((i, j)),
                (Some(_), Some(_)) => p.push((i, j)),
                _ => {}
            }
        }
    }
    Ok(PairSets { p, q, unassigned })
}
