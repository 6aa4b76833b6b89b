//! Subnetwork partitions: disjoint link groups with per-group sensing costs.

use std::collections::BTreeMap;
use std::io::Read;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::rng::{Domain, StreamId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    costs: Vec<f64>,
    labels: Vec<String>,
    /// Links that belong to no group and can never be sensed.
    unsensed: Vec<usize>,
    num_links: usize,
}

impl Partition {
    /// Groups are sorted internally; `costs` must be positive and match the
    /// group count. Links not in any group are recorded as unsensed.
    pub fn new(groups: Vec<Vec<usize>>, costs: Vec<f64>, num_links: usize) -> Result<Self> {
        let labels = (0..groups.len()).map(|g| g.to_string()).collect();
        Self::with_labels(groups, costs, labels, num_links)
    }

    pub fn with_labels(
        mut groups: Vec<Vec<usize>>,
        costs: Vec<f64>,
        labels: Vec<String>,
        num_links: usize,
    ) -> Result<Self> {
        if costs.len() != groups.len() {
            return Err(Error::Dimension {
                what: "group costs",
                expected: groups.len(),
                got: costs.len(),
            });
        }
        if labels.len() != groups.len() {
            return Err(Error::Dimension {
                what: "group labels",
                expected: groups.len(),
                got: labels.len(),
            });
        }
        if let Some(q) = costs.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
            return Err(Error::Validation(format!("group cost {q} is not positive")));
        }
        let mut owner = vec![None; num_links];
        for (g, group) in groups.iter_mut().enumerate() {
            group.sort_unstable();
            for &l in group.iter() {
                if l >= num_links {
                    return Err(Error::OutOfRange { id: l, len: num_links });
                }
                if let Some(prev) = owner[l] {
                    return Err(Error::Validation(format!(
                        "link {l} is in groups {prev} and {g}"
                    )));
                }
                owner[l] = Some(g);
            }
        }
        let unsensed = (0..num_links).filter(|&l| owner[l].is_none()).collect();
        Ok(Self {
            groups,
            costs,
            labels,
            unsensed,
            num_links,
        })
    }

    /// Every link in its own group, unit costs.
    pub fn singletons(num_links: usize) -> Self {
        Self::new(
            (0..num_links).map(|l| vec![l]).collect(),
            vec![1.0; num_links],
            num_links,
        )
        .expect("singleton partition is valid")
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_links(&self) -> usize {
        self.num_links
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn unsensed(&self) -> &[usize] {
        &self.unsensed
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Group index of every link (`None` for unsensed links).
    pub fn owner_of_links(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.num_links];
        for (g, group) in self.groups.iter().enumerate() {
            for &l in group {
                owner[l] = Some(g);
            }
        }
        owner
    }

    pub fn with_costs(mut self, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != self.groups.len() {
            return Err(Error::Dimension {
                what: "group costs",
                expected: self.groups.len(),
                got: costs.len(),
            });
        }
        if let Some(q) = costs.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
            return Err(Error::Validation(format!("group cost {q} is not positive")));
        }
        self.costs = costs;
        Ok(self)
    }

    /// Writes the `link_id,group_id,cost` mapping.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["link_id", "group_id", "cost"])?;
        for (g, group) in self.groups.iter().enumerate() {
            for &l in group {
                w.write_record([l.to_string(), self.labels[g].clone(), self.costs[g].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMethod {
    File,
    CoordinateClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPartitionConfig {
    pub n_g: usize,
    pub method: PartitionMethod,
    pub seed: u64,
}

fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<i64>().unwrap());
    } else {
        labels.sort();
    }
}

/// Reads a `link_id,group_id[,cost]` or `node_id,group_id[,cost]` mapping.
/// The header names the key column; node-keyed files assign each link to
/// the group of its tail node. Groups are ordered by label (numerically when
/// every label is an integer). Unmapped links become unsensed.
pub fn load_partition(map_file: impl Read, network: &Network) -> Result<Partition> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(map_file);
    let headers = reader.headers()?.clone();
    let key = headers.get(0).unwrap_or("").to_ascii_lowercase();
    let node_keyed = match key.as_str() {
        "link_id" | "link" => false,
        "node_id" | "node" => true,
        other => {
            return Err(Error::Validation(format!(
                "partition file key column must be link_id or node_id, found `{other}`"
            )))
        }
    };
    let key_space = if node_keyed {
        network.num_nodes() + 1
    } else {
        network.num_links()
    };
    let mut assigned: Vec<Option<String>> = vec![None; key_space];
    let mut group_cost: BTreeMap<String, f64> = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let id: usize = record
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(line, "bad id column"))?;
        let label = record
            .get(1)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::parse(line, "missing group id"))?
            .to_string();
        if id >= key_space || (node_keyed && id == 0) {
            return Err(Error::OutOfRange { id, len: key_space });
        }
        if assigned[id].is_some() {
            return Err(Error::Validation(format!(
                "{} {id} is mapped twice",
                if node_keyed { "node" } else { "link" }
            )));
        }
        if let Some(cost) = record.get(2).filter(|v| !v.is_empty()) {
            let cost: f64 = cost
                .parse()
                .map_err(|_| Error::parse(line, format!("bad cost `{cost}`")))?;
            match group_cost.get(&label) {
                Some(&prev) if prev != cost => {
                    return Err(Error::Validation(format!(
                        "group {label} has conflicting costs {prev} and {cost}"
                    )))
                }
                _ => {
                    group_cost.insert(label.clone(), cost);
                }
            }
        }
        assigned[id] = Some(label);
    }

    let link_label: Vec<Option<&String>> = network
        .links()
        .iter()
        .map(|link| {
            let key = if node_keyed { link.tail } else { link.id };
            assigned[key].as_ref()
        })
        .collect();
    let mut labels: Vec<String> = link_label.iter().flatten().map(|s| (*s).clone()).collect();
    sort_labels(&mut labels);
    labels.dedup();
    let index: BTreeMap<&String, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let mut groups = vec![Vec::new(); labels.len()];
    let mut unmapped = 0usize;
    for (l, label) in link_label.iter().enumerate() {
        match label {
            Some(label) => groups[index[label]].push(l),
            None => unmapped += 1,
        }
    }
    if unmapped > 0 {
        warn!("{unmapped} links are not mapped to any group; they stay unsensed");
    }
    let costs = labels
        .iter()
        .map(|l| group_cost.get(l).copied().unwrap_or(1.0))
        .collect();
    Partition::with_labels(groups, costs, labels, network.num_links())
}

/// Groups links into `n_g` spatial clusters by k-means on link midpoints.
/// Groups left empty by an iteration are re-seeded with the point farthest
/// from its center inside the currently largest group.
pub fn synth_partition(network: &Network, n_g: usize, seed: u64) -> Result<Partition> {
    let n_l = network.num_links();
    if n_g == 0 {
        return Err(Error::Validation("group count must be at least 1".into()));
    }
    if n_g > n_l {
        return Err(Error::Validation(format!(
            "cannot form {n_g} nonempty groups from {n_l} links"
        )));
    }
    let coords = network.coordinates();
    let mut points = Vec::with_capacity(n_l);
    for link in network.links() {
        let (Some(a), Some(b)) = (coords.get(&link.tail), coords.get(&link.head)) else {
            return Err(Error::MissingCoordinates);
        };
        points.push([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
    }
    let dist2 = |p: &[f64; 2], q: &[f64; 2]| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);

    let mut rng = StreamId::new(seed, Domain::Partition, 0, 0).rng();
    // k-means++ seeding
    let mut centers: Vec<[f64; 2]> = vec![points[rng.random_range(0..n_l)]];
    while centers.len() < n_g {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n_l - 1;
            for (i, &di) in d.iter().enumerate() {
                if r < di {
                    chosen = i;
                    break;
                }
                r -= di;
            }
            chosen
        } else {
            rng.random_range(0..n_l)
        };
        centers.push(points[pick]);
    }

    let mut assign = vec![usize::MAX; n_l];
    for _ in 0..500 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..n_g)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // re-seed empty groups
        loop {
            let mut sizes = vec![0usize; n_g];
            for &a in &assign {
                sizes[a] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else { break };
            let largest = (0..n_g).max_by_key(|&g| (sizes[g], std::cmp::Reverse(g))).unwrap();
            let far = (0..n_l)
                .filter(|&i| assign[i] == largest)
                .max_by(|&a, &b| {
                    dist2(&points[a], &centers[largest])
                        .total_cmp(&dist2(&points[b], &centers[largest]))
                        .then(b.cmp(&a))
                })
                .unwrap();
            assign[far] = empty;
            centers[empty] = points[far];
            changed = true;
        }
        let mut sums = vec![[0.0, 0.0, 0.0]; n_g];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            *c = [s[0] / s[2], s[1] / s[2]];
        }
        if !changed {
            break;
        }
    }
    let mut groups = vec![Vec::new(); n_g];
    for (l, &a) in assign.iter().enumerate() {
        groups[a].push(l);
    }
    Partition::new(groups, vec![1.0; n_g], n_l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, OdPair};

    fn square() -> Network {
        // four links far apart at the corners of a square
        let links = (0..4)
            .map(|i| Link { id: i, tail: 2 * i + 1, head: 2 * i + 2, b: 1.0, c: 1.0, w: 1.0 })
            .collect();
        let mut net = Network::new(8, links, vec![OdPair::new(1, 2)], vec![1.0]).unwrap();
        let corners = [[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0]];
        let mut coords = BTreeMap::new();
        for (i, c) in corners.iter().enumerate() {
            coords.insert(2 * i + 1, *c);
            coords.insert(2 * i + 2, [c[0] + 1.0, c[1] + 1.0]);
        }
        net.set_coordinates(coords);
        net
    }

    fn three_links() -> Network {
        let links = vec![
            Link { id: 0, tail: 1, head: 2, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 1, tail: 2, head: 3, b: 1.0, c: 1.0, w: 1.0 },
            Link { id: 2, tail: 3, head: 1, b: 1.0, c: 1.0, w: 1.0 },
        ];
        Network::new(3, links, vec![OdPair::new(1, 3)], vec![1.0]).unwrap()
    }

    #[test]
    fn link_keyed_file() {
        let p = load_partition("link_id,group_id\n0,A\n1,A\n2,B\n".as_bytes(), &three_links()).unwrap();
        assert_eq!(p.groups(), &[vec![0, 1], vec![2]]);
        assert_eq!(p.costs(), &[1.0, 1.0]);
        assert_eq!(p.labels(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn duplicate_mapping_is_an_error() {
        let err = load_partition("link_id,group_id\n0,A\n0,B\n".as_bytes(), &three_links());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn unmapped_links_are_unsensed() {
        let p = load_partition("link_id,group_id,cost\n0,7,2.5\n".as_bytes(), &three_links()).unwrap();
        assert_eq!(p.groups(), &[vec![0]]);
        assert_eq!(p.costs(), &[2.5]);
        assert_eq!(p.unsensed(), &[1, 2]);
        let covered: usize = p.groups().iter().map(Vec::len).sum();
        assert_eq!(covered + p.unsensed().len(), p.num_links());
    }

    #[test]
    fn node_keyed_file_uses_tail_nodes() {
        let net = crate::network::tests::diamond();
        // node 1 -> group 10, nodes 2 and 3 -> group 20
        let p = load_partition("node_id,group_id\n1,10\n2,20\n3,20\n".as_bytes(), &net).unwrap();
        // links 0 (1->2) and 1 (1->3) have tail 1; links 2 (2->4) and 3 (3->4)
        assert_eq!(p.groups(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(p.labels(), &["10".to_string(), "20".to_string()]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let p = load_partition("link_id,group_id\n0,10\n1,9\n2,100\n".as_bytes(), &three_links()).unwrap();
        assert_eq!(p.labels(), &["9".to_string(), "10".to_string(), "100".to_string()]);
        assert_eq!(p.groups(), &[vec![1], vec![0], vec![2]]);
    }

    #[test]
    fn overlapping_groups_rejected() {
        assert!(Partition::new(vec![vec![0, 1], vec![1]], vec![1.0, 1.0], 3).is_err());
    }

    #[test]
    fn synth_single_group() {
        let p = synth_partition(&square(), 1, 3).unwrap();
        assert_eq!(p.groups(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn synth_square_corners_are_singletons() {
        let p = synth_partition(&square(), 4, 11).unwrap();
        let mut sizes: Vec<usize> = p.groups().iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 1, 1]);
        assert_eq!(p, synth_partition(&square(), 4, 11).unwrap());
    }

    #[test]
    fn synth_requires_coordinates() {
        assert!(matches!(synth_partition(&three_links(), 2, 0), Err(Error::MissingCoordinates)));
    }
}
