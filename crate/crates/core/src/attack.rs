//! Gaussian attack hypotheses, zone attacks, sampling and projection onto
//! observed link sets.

use std::f64::consts::PI;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::rng::StreamId;

/// One attack hypothesis: independent per-link Gaussians `N(mu_j, sigma_j^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackType {
    /// 0-based type index.
    pub id: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl AttackType {
    pub fn new(id: usize, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let t = Self { id, mu, sigma };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(Error::Dimension {
                what: "attack sigma",
                expected: self.mu.len(),
                got: self.sigma.len(),
            });
        }
        if let Some(j) = self.mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::Validation(format!("type {} has non-finite mean on link {j}", self.id)));
        }
        if let Some(j) = self.sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation(format!(
                "type {} has non-positive deviation {} on link {j}",
                self.id, self.sigma[j]
            )));
        }
        Ok(())
    }

    pub fn num_links(&self) -> usize {
        self.mu.len()
    }

    /// Links where the hypothesised mean exceeds the reported flow, i.e. where
    /// the true ambient flow would have negative mean. A warning is logged
    /// for each.
    pub fn feasibility_violations(&self, f_hat: &[f64]) -> Vec<usize> {
        let bad: Vec<usize> = self
            .mu
            .iter()
            .zip(f_hat)
            .enumerate()
            .filter(|(_, (m, f))| m > f)
            .map(|(j, _)| j)
            .collect();
        if !bad.is_empty() {
            warn!(
                "type {}: mean attack exceeds reported flow on {} links (first: {})",
                self.id,
                bad.len(),
                bad[0]
            );
        }
        bad
    }
}

/// Ordered set of link ids picked out of a full link vector.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionMatrix {
    rows: Vec<usize>,
}

impl SelectionMatrix {
    /// `rows` must be strictly increasing and below `num_links`.
    pub fn new(rows: Vec<usize>, num_links: usize) -> Result<Self> {
        if let Some(w) = rows.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "selection rows must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= num_links) {
            return Err(Error::OutOfRange { id: r, len: num_links });
        }
        Ok(Self { rows })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(mut rows: Vec<usize>, num_links: usize) -> Result<Self> {
        rows.sort_unstable();
        rows.dedup();
        Self::new(rows, num_links)
    }

    pub fn all(num_links: usize) -> Self {
        Self { rows: (0..num_links).collect() }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `S v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&r| v[r]).collect()
    }

    pub fn to_dense(&self, num_links: usize) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|&r| {
                let mut row = vec![0.0; num_links];
                row[r] = 1.0;
                row
            })
            .collect()
    }
}

/// Marginal of an attack type on a link subset: mean `xi` and the diagonal of
/// its covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedGaussian {
    pub xi: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ProjectedGaussian {
    pub fn log_density(&self, o: &[f64]) -> f64 {
        -0.5 * self
            .xi
            .iter()
            .zip(&self.variance)
            .zip(o)
            .map(|((m, v), x)| (x - m) * (x - m) / v + (2.0 * PI * v).ln())
            .sum::<f64>()
    }
}

/// One type per partition group: type `i` has mean `mean_scale * c` on the
/// links of group `i` and zero elsewhere, and deviation `rel_std * c` on
/// every link.
pub fn make_zone_attack_types(
    partition: &Partition,
    capacity: &[f64],
    mean_scale: f64,
    rel_std: f64,
) -> Result<Vec<AttackType>> {
    if partition.num_links() != capacity.len() {
        return Err(Error::Dimension {
            what: "capacity vector",
            expected: partition.num_links(),
            got: capacity.len(),
        });
    }
    if !(mean_scale.is_finite() && mean_scale >= 0.0) {
        return Err(Error::Validation(format!("mean scale {mean_scale} must be non-negative")));
    }
    if !(rel_std.is_finite() && rel_std > 0.0) {
        return Err(Error::Validation(format!("relative deviation {rel_std} must be positive")));
    }
    if mean_scale == 0.0 {
        warn!("mean scale is zero; all attack types coincide");
    }
    let sigma: Vec<f64> = capacity.iter().map(|c| rel_std * c).collect();
    partition
        .groups()
        .iter()
        .enumerate()
        .map(|(i, group)| {
            if group.is_empty() {
                return Err(Error::EmptyGroup(i));
            }
            let mut mu = vec![0.0; capacity.len()];
            for &l in group {
                mu[l] = mean_scale * capacity[l];
            }
            AttackType::new(i, mu, sigma.clone())
        })
        .collect()
}

/// Draws `a ~ N(mu, diag(sigma^2))` from the given stream, or returns `mu`
/// when `force_mean` is set.
pub fn sample_attack(t: &AttackType, stream: StreamId, force_mean: bool) -> Vec<f64> {
    if force_mean {
        return t.mu.clone();
    }
    let mut rng = stream.rng();
    t.mu
        .iter()
        .zip(&t.sigma)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect()
}

pub fn project(t: &AttackType, s: &SelectionMatrix) -> Result<ProjectedGaussian> {
    if s.is_empty() {
        return Err(Error::EmptySelection);
    }
    if let Some(&r) = s.rows().iter().find(|&&r| r >= t.num_links()) {
        return Err(Error::OutOfRange { id: r, len: t.num_links() });
    }
    Ok(ProjectedGaussian {
        xi: s.apply(&t.mu),
        variance: s.rows().iter().map(|&r| t.sigma[r] * t.sigma[r]).collect(),
    })
}

/// Deviation spec in an attack-set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    Dense(Vec<f64>),
    /// `sigma = scale * capacity`.
    RelativeToCapacity(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTypeRecord {
    pub id: usize,
    /// `(link, mean)` pairs; unlisted links have zero mean.
    pub mu: Vec<(usize, f64)>,
    pub sigma: SigmaSpec,
}

/// Serializable attack-type collection with sparse means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSet {
    pub num_links: usize,
    pub types: Vec<AttackTypeRecord>,
}

impl AttackSet {
    /// Sparse encoding of `types`; deviations are stored densely.
    pub fn from_types(types: &[AttackType]) -> Self {
        let num_links = types.first().map_or(0, AttackType::num_links);
        Self {
            num_links,
            types: types
                .iter()
                .map(|t| AttackTypeRecord {
                    id: t.id,
                    mu: t
                        .mu
                        .iter()
                        .enumerate()
                        .filter(|(_, m)| **m != 0.0)
                        .map(|(j, m)| (j, *m))
                        .collect(),
                    sigma: SigmaSpec::Dense(t.sigma.clone()),
                })
                .collect(),
        }
    }

    pub fn to_types(&self, capacity: &[f64]) -> Result<Vec<AttackType>> {
        self.types
            .iter()
            .map(|rec| {
                let mut mu = vec![0.0; self.num_links];
                for &(j, m) in &rec.mu {
                    if j >= self.num_links {
                        return Err(Error::OutOfRange { id: j, len: self.num_links });
                    }
                    mu[j] = m;
                }
                let sigma = match &rec.sigma {
                    SigmaSpec::Dense(s) => s.clone(),
                    SigmaSpec::RelativeToCapacity(k) => {
                        if capacity.len() != self.num_links {
                            return Err(Error::Dimension {
                                what: "capacity vector",
                                expected: self.num_links,
                                got: capacity.len(),
                            });
                        }
                        capacity.iter().map(|c| k * c).collect()
                    }
                };
                AttackType::new(rec.id, mu, sigma)
            })
            .collect()
    }
}
