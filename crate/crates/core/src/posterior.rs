//! Type weights from a sensed attack observation and the post-sensing
//! routing program.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::allocation::Allocation;
use crate::attack::{AttackType, SelectionMatrix};
use crate::cost::{poly_coefficients, ExpectedCostParams, PolyCoeffs};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::partition::Partition;
use crate::routing::{solve, LinkObjective, RoutingSolution, SolverOptions};

/// Attack values `o = E a` seen on the sensed links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub sensed: SelectionMatrix,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn new(sensed: SelectionMatrix, values: Vec<f64>) -> Result<Self> {
        if sensed.len() != values.len() {
            return Err(Error::Dimension { what: "observation", expected: sensed.len(), got: values.len() });
        }
        Ok(Self { sensed, values })
    }

    /// Observes the full attack vector `a` through `sensed`.
    pub fn of_attack(sensed: SelectionMatrix, a: &[f64]) -> Self {
        let values = sensed.apply(a);
        Self { sensed, values }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorWeights {
    pub omega: Vec<f64>,
}

impl PosteriorWeights {
    pub fn uniform(n_a: usize) -> Self {
        Self { omega: vec![1.0 / n_a as f64; n_a] }
    }

    pub fn one_hot(n_a: usize, i: usize) -> Self {
        let mut omega = vec![0.0; n_a];
        omega[i] = 1.0;
        Self { omega }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.omega.iter().enumerate() {
            if w > self.omega[best] {
                best = i;
            }
        }
        best
    }
}

/// Sorted union of the links in the selected groups.
pub fn sensed_links(allocation: &Allocation, partition: &Partition) -> Result<SelectionMatrix> {
    if allocation.x.len() != partition.num_groups() {
        return Err(Error::Dimension {
            what: "allocation",
            expected: partition.num_groups(),
            got: allocation.x.len(),
        });
    }
    let rows = allocation.selected().into_iter().flat_map(|g| partition.group(g).iter().copied()).collect();
    SelectionMatrix::from_unsorted(rows, partition.num_links())
}

/// Gaussian log-likelihood of the observation under each type.
pub fn log_likelihoods(obs: &Observation, types: &[AttackType]) -> Result<Vec<f64>> {
    types
        .iter()
        .map(|t| {
            let mut ll = 0.0;
            for (&l, &o) in obs.sensed.rows().iter().zip(&obs.values) {
                if l >= t.num_links() {
                    return Err(Error::OutOfRange { id: l, len: t.num_links() });
                }
                let v = t.sigma[l] * t.sigma[l];
                if !(v > 0.0) {
                    return Err(Error::ZeroVariance { type_id: t.id, link: l });
                }
                let d = o - t.mu[l];
                ll += d * d / v + (2.0 * PI * v).ln();
            }
            Ok(-0.5 * ll)
        })
        .collect()
}

/// Normalized likelihoods via a log-sum-exp shift. An empty observation
/// gives uniform weights. Weights are floored at the smallest positive
/// normal float so every type keeps positive mass.
pub fn likelihood_weights(obs: &Observation, types: &[AttackType]) -> Result<PosteriorWeights> {
    if types.is_empty() {
        return Err(Error::Validation("no attack types".into()));
    }
    if obs.is_empty() {
        return Ok(PosteriorWeights::uniform(types.len()));
    }
    let ll = log_likelihoods(obs, types)?;
    let top = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = ll.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let omega = w.iter().map(|w| (w / total).max(f64::MIN_POSITIVE)).collect();
    Ok(PosteriorWeights { omega })
}

/// Link objective after sensing: sensed links use the ambient flow implied
/// by the observation, unsensed links the weight mixture of the per-type
/// expected costs.
pub fn post_sensing_objective(
    network: &Network,
    f_hat: &[f64],
    obs: &Observation,
    omega: &PosteriorWeights,
    types: &[AttackType],
) -> Result<LinkObjective> {
    let n_l = network.num_links();
    if f_hat.len() != n_l {
        return Err(Error::Dimension { what: "reported flow", expected: n_l, got: f_hat.len() });
    }
    if omega.omega.len() != types.len() {
        return Err(Error::Dimension { what: "type weights", expected: types.len(), got: omega.omega.len() });
    }
    if obs.values.len() != obs.sensed.len() {
        return Err(Error::Dimension { what: "observation", expected: obs.sensed.len(), got: obs.values.len() });
    }
    if let Some(t) = types.iter().find(|t| t.num_links() != n_l) {
        return Err(Error::Dimension { what: "attack type length", expected: n_l, got: t.num_links() });
    }
    let mut observed = vec![None; n_l];
    for (&l, &o) in obs.sensed.rows().iter().zip(&obs.values) {
        if l >= n_l {
            return Err(Error::OutOfRange { id: l, len: n_l });
        }
        observed[l] = Some(o);
    }
    let coeffs = network
        .links()
        .iter()
        .enumerate()
        .map(|(j, link)| match observed[j] {
            Some(a) => poly_coefficients(&ExpectedCostParams { bpr: link.bpr(), mu_tilde: a - f_hat[j], sigma: 0.0 }),
            None => {
                let mut z = PolyCoeffs::default();
                for (t, &w) in types.iter().zip(&omega.omega) {
                    if w != 0.0 {
                        let p = ExpectedCostParams::attacked(link.bpr(), t.mu[j], f_hat[j], t.sigma[j]);
                        z.add_scaled(w, &poly_coefficients(&p));
                    }
                }
                z
            }
        })
        .collect();
    Ok(LinkObjective::new(coeffs))
}

pub fn post_sensing_routing(
    network: &Network,
    f_hat: &[f64],
    obs: &Observation,
    omega: &PosteriorWeights,
    types: &[AttackType],
    opts: &SolverOptions,
) -> Result<RoutingSolution> {
    solve(network, &post_sensing_objective(network, f_hat, obs, omega, types)?, opts)
}
