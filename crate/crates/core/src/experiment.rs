//! Staged end-to-end experiment: ingest, routes, attack hypotheses, best
//! responses, clustering, difference matrix, allocation per budget,
//! simulated sensing and routing, and a summary report.
//!
//! Every stage reads the artifacts of earlier stages from the output
//! directory and writes its own, so any stage can be re-run on its own.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{difference_matrix, solve_lexicographic, Allocation, DifferenceMatrix};
use crate::attack::{make_zone_attack_types, sample_attack, AttackSet, AttackType};
use crate::cluster::{choose_n_c, pair_sets, ClusterModel, PairSets};
use crate::cost::bpr_cost;
use crate::error::{Error, Result};
use crate::network::{generate_routes, parse_geojson_nodes, parse_tntp, parse_tntp_nodes, Network, OdPair};
use crate::partition::{load_partition, synth_partition, Partition};
use crate::posterior::{likelihood_weights, post_sensing_routing, sensed_links, Observation};
use crate::rng::{Domain, StreamId};
use crate::routing::{best_response_flow, system_optimal_flow, NonconvexPolicy, SolverOptions};

/// Bumped whenever a stage's artifact format or semantics change.
pub const STAGE_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub network: NetworkConfig,
    pub partition: PartitionSource,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    pub allocation: AllocationConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub net: PathBuf,
    pub trips: PathBuf,
    /// Node coordinates: a TNTP node table, or GeoJSON points when the
    /// extension is `.geojson` or `.json`.
    #[serde(default)]
    pub nodes: Option<PathBuf>,
    /// Explicit `[origin, destination]` pairs to keep.
    #[serde(default)]
    pub od_pairs: Option<Vec<[usize; 2]>>,
    /// Keep the `top_od` pairs with the largest demand.
    #[serde(default)]
    pub top_od: Option<usize>,
    #[serde(default = "default_routes_per_od")]
    pub routes_per_od: usize,
}

fn default_routes_per_od() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionSource {
    /// `link_id,group_id[,cost]` or `node_id,group_id[,cost]` mapping.
    File { path: PathBuf },
    /// k-means on link midpoints; needs node coordinates.
    Coordinates { n_g: usize },
    /// One group per link.
    Singletons,
}

/// Which reported flow the best-response hypotheses are computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    /// Ambient flow plus the average of the type means.
    #[default]
    MeanAttack,
    /// Ambient flow only.
    NoAttack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
    #[serde(default = "default_rel_std")]
    pub rel_std: f64,
    /// True ambient flow is `ambient_ratio * capacity`.
    #[serde(default = "default_ambient_ratio")]
    pub ambient_ratio: f64,
    #[serde(default)]
    pub hypothesis: Hypothesis,
}

fn default_mean_scale() -> f64 {
    30.0
}
fn default_rel_std() -> f64 {
    0.1
}
fn default_ambient_ratio() -> f64 {
    0.5
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mean_scale: default_mean_scale(),
            rel_std: default_rel_std(),
            ambient_ratio: default_ambient_ratio(),
            hypothesis: Hypothesis::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Absolute coverage radius; overrides `epsilon_rel`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Coverage radius as a fraction of total demand.
    #[serde(default = "default_epsilon_rel")]
    pub epsilon_rel: f64,
    /// Defaults to the number of attack types.
    #[serde(default)]
    pub n_c_max: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_epsilon_rel() -> f64 {
    0.01
}
fn default_restarts() -> usize {
    32
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_rel: default_epsilon_rel(),
            n_c_max: None,
            restarts: default_restarts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    pub budgets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Trials per (budget, attack type).
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_true")]
    pub random_baseline: bool,
}

fn default_trials() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            random_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_nonconvex")]
    pub nonconvex: NonconvexPolicy,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    10_000
}
fn default_nonconvex() -> NonconvexPolicy {
    NonconvexPolicy::Tolerate
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            nonconvex: default_nonconvex(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            nonconvex: self.nonconvex,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.network.routes_per_od == 0 {
            return Err(Error::Config("routes_per_od must be at least 1".into()));
        }
        if self.network.od_pairs.is_some() && self.network.top_od.is_some() {
            return Err(Error::Config("set at most one of od_pairs and top_od".into()));
        }
        if self.network.top_od == Some(0) {
            return Err(Error::Config("top_od must be at least 1".into()));
        }
        if let PartitionSource::Coordinates { n_g: 0 } = self.partition {
            return Err(Error::Config("n_g must be at least 1".into()));
        }
        if !(self.attack.mean_scale.is_finite() && self.attack.mean_scale >= 0.0) {
            return Err(Error::Config("mean_scale must be non-negative".into()));
        }
        positive("rel_std", self.attack.rel_std)?;
        positive("ambient_ratio", self.attack.ambient_ratio)?;
        if let Some(e) = self.cluster.epsilon {
            positive("epsilon", e)?;
        }
        positive("epsilon_rel", self.cluster.epsilon_rel)?;
        if self.cluster.n_c_max == Some(0) || self.cluster.restarts == 0 {
            return Err(Error::Config("n_c_max and restarts must be at least 1".into()));
        }
        if self.allocation.budgets.is_empty() {
            return Err(Error::Config("budget list is empty".into()));
        }
        if let Some(b) = self.allocation.budgets.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Config(format!("budget {b} must be non-negative")));
        }
        if self.simulation.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        positive("solver tol", self.solver.tol)?;
        if self.solver.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Stages

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageName {
    Ingest,
    Routes,
    Attacks,
    BestResponses,
    Cluster,
    Diffmatrix,
    Allocate,
    Simulate,
    Report,
}

impl StageName {
    pub const ALL: [StageName; 9] = [
        StageName::Ingest,
        StageName::Routes,
        StageName::Attacks,
        StageName::BestResponses,
        StageName::Cluster,
        StageName::Diffmatrix,
        StageName::Allocate,
        StageName::Simulate,
        StageName::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Routes => "routes",
            StageName::Attacks => "attacks",
            StageName::BestResponses => "best-responses",
            StageName::Cluster => "cluster",
            StageName::Diffmatrix => "diffmatrix",
            StageName::Allocate => "allocate",
            StageName::Simulate => "simulate",
            StageName::Report => "report",
        }
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageName::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

impl std::fmt::Display for StageName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

mod artifact {
    pub const NETWORK: &str = "network.json";
    pub const ROUTED: &str = "routed_network.json";
    pub const ROUTES_CSV: &str = "routes.csv";
    pub const PARTITION: &str = "partition.json";
    pub const PARTITION_CSV: &str = "partition.csv";
    pub const ATTACKS: &str = "attacks.json";
    pub const HYPOTHESIS: &str = "hypothesis.json";
    pub const BEST_RESPONSES: &str = "best_responses.json";
    pub const BEST_RESPONSES_CSV: &str = "best_responses.csv";
    pub const CLUSTERS: &str = "clusters.json";
    pub const DIFFMATRIX: &str = "diffmatrix.json";
    pub const DIFFMATRIX_CSV: &str = "diffmatrix.csv";
    pub const PAIRS_CSV: &str = "pairs.csv";
    pub const ALLOCATIONS: &str = "allocations.json";
    pub const ALLOCATIONS_CSV: &str = "allocations.csv";
    pub const EVALUATIONS_CSV: &str = "evaluations.csv";
    pub const REPORT_CSV: &str = "report.csv";
    pub const MANIFEST: &str = "manifest.json";
}

/// Ambient and reported flows used for the hypothesis stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFlows {
    pub rule: Hypothesis,
    /// True ambient flow.
    pub f: Vec<f64>,
    /// Reported flow the best responses are computed against.
    pub f_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponseRecord {
    pub type_id: usize,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub nonconvex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub model: ClusterModel,
    pub pairs: PairSets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub budget: f64,
    pub allocation: Allocation,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationKind {
    Optimized,
    Random,
}

/// One simulated (budget, type, trial, arm) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub budget: f64,
    pub type_id: usize,
    pub kind: AllocationKind,
    pub trial: usize,
    /// Ground-truth cost of the routed flow at the realized ambient flow.
    pub true_cost: f64,
    /// Optimal value of the post-sensing program.
    pub objective: f64,
    pub alpha: f64,
    pub cost: f64,
    /// Selected group indices joined by `;`.
    pub selected_groups: String,
    pub n_sensed_links: usize,
    /// Cost of routing with the ambient flow known exactly.
    pub full_info_cost: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub budget: f64,
    pub kind: AllocationKind,
    /// Attack type id, or `all`.
    pub type_id: String,
    pub trials: usize,
    pub mean_true_cost: f64,
    pub stderr_true_cost: f64,
    pub mean_objective: f64,
    pub mean_selected_groups: f64,
    pub full_info_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub stage_versions: BTreeMap<String, u32>,
    pub artifacts: BTreeMap<String, String>,
}

/// `sum_j y_j (b_j + w_j ((f_j + y_j) / c_j)^4)`.
pub fn evaluate_true_cost(network: &Network, y: &[f64], f_true: &[f64]) -> f64 {
    network
        .links()
        .iter()
        .zip(y)
        .zip(f_true)
        .map(|((l, &y), &f)| y * bpr_cost(y, f, &l.bpr()))
        .sum()
}

/// Random maximal affordable selection: groups in a seeded random order,
/// each added when it still fits the budget.
pub fn random_allocation_baseline(
    partition: &Partition,
    m: &DifferenceMatrix,
    gamma: f64,
    stream: StreamId,
) -> Allocation {
    let q = partition.costs();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.shuffle(&mut stream.rng());
    let mut x = vec![false; q.len()];
    let mut spent = 0.0;
    for g in order {
        if spent + q[g] <= gamma {
            spent += q[g];
            x[g] = true;
        }
    }
    Allocation::evaluate(m, q, x)
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A configured scenario bound to an input base directory and an output
/// directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ScenarioConfig,
    /// Relative input paths are resolved against this directory.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Pipeline {
    /// Loads a TOML config; `seed` and `out` override the file's values.
    pub fn from_file(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = ScenarioConfig::from_toml(&text)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_dir = match out {
            Some(o) => o,
            None => base_dir.join(&config.output.dir),
        };
        Ok(Self { config, base_dir, out_dir })
    }

    pub fn new(config: ScenarioConfig, base_dir: PathBuf, out_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, base_dir, out_dir })
    }

    fn input(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Hash of the effective configuration (after overrides), independent
    /// of the output directory.
    pub fn config_hash(&self) -> Result<String> {
        let mut cfg = self.config.clone();
        cfg.output = OutputConfig::default();
        let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        Ok(sha256_hex(text.as_bytes()))
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in StageName::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    /// Runs one stage; failures carry the stage name.
    pub fn run_stage(&self, stage: StageName) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::from(e).in_stage(stage.as_str()))?;
        info!("stage {stage}");
        let r = match stage {
            StageName::Ingest => self.ingest(),
            StageName::Routes => self.routes(),
            StageName::Attacks => self.attacks(),
            StageName::BestResponses => self.best_responses(),
            StageName::Cluster => self.cluster(),
            StageName::Diffmatrix => self.diffmatrix(),
            StageName::Allocate => self.allocate(),
            StageName::Simulate => self.simulate(),
            StageName::Report => self.report(),
        };
        r.map_err(|e| e.in_stage(stage.as_str()))
    }

    fn ingest(&self) -> Result<()> {
        let nc = &self.config.network;
        let mut net = parse_tntp(open(&self.input(&nc.net))?, open(&self.input(&nc.trips))?)?;
        if let Some(nodes) = &nc.nodes {
            let path = self.input(nodes);
            let geojson = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("geojson") || e.eq_ignore_ascii_case("json"));
            let coords = if geojson { parse_geojson_nodes(open(&path)?)? } else { parse_tntp_nodes(open(&path)?)? };
            net.set_coordinates(coords);
        }
        if let Some(pairs) = &nc.od_pairs {
            let keep: Vec<OdPair> = pairs.iter().map(|&[o, d]| OdPair::new(o, d)).collect();
            net.retain_od_pairs(&keep)?;
        } else if let Some(n) = nc.top_od {
            let keep = net.top_demand_od_pairs(n);
            net.retain_od_pairs(&keep)?;
        }
        info!(
            "network: {} nodes, {} links, {} OD pairs, total demand {}",
            net.num_nodes(),
            net.num_links(),
            net.od_pairs().len(),
            net.total_demand()
        );
        write_json(&self.out(artifact::NETWORK), &net)
    }

    fn routes(&self) -> Result<()> {
        let mut net: Network = read_json(&self.out(artifact::NETWORK))?;
        let generated = generate_routes(&net, self.config.network.routes_per_od)?;
        if generated.warning_count() > 0 {
            warn!("{} OD pairs have fewer routes than requested", generated.warning_count());
        }
        net.set_routes(generated.routes)?;

        #[derive(Serialize)]
        struct RouteRow {
            route: usize,
            od: usize,
            origin: usize,
            destination: usize,
            free_flow_cost: f64,
            links: String,
        }
        let rows: Vec<RouteRow> = net
            .routes()
            .iter()
            .enumerate()
            .map(|(r, route)| RouteRow {
                route: r,
                od: route.od,
                origin: net.od_pairs()[route.od].origin,
                destination: net.od_pairs()[route.od].destination,
                free_flow_cost: route.links.iter().map(|&l| net.links()[l].b).sum(),
                links: join_ids(&route.links),
            })
            .collect();
        info!("{} routes", rows.len());
        write_csv(&self.out(artifact::ROUTES_CSV), &rows)?;
        write_json(&self.out(artifact::ROUTED), &net)
    }

    fn attacks(&self) -> Result<()> {
        let net: Network = read_json(&self.out(artifact::ROUTED))?;
        let partition = match &self.config.partition {
            PartitionSource::File { path } => load_partition(open(&self.input(path))?, &net)?,
            PartitionSource::Coordinates { n_g } => synth_partition(&net, *n_g, self.config.seed)?,
            PartitionSource::Singletons => Partition::singletons(net.num_links()),
        };
        let ac = &self.config.attack;
        let capacity = net.capacities();
        let types = make_zone_attack_types(&partition, &capacity, ac.mean_scale, ac.rel_std)?;
        let f: Vec<f64> = capacity.iter().map(|c| ac.ambient_ratio * c).collect();
        let f_hat = match ac.hypothesis {
            Hypothesis::NoAttack => f.clone(),
            Hypothesis::MeanAttack => {
                let n_a = types.len() as f64;
                (0..f.len())
                    .map(|j| f[j] + types.iter().map(|t| t.mu[j]).sum::<f64>() / n_a)
                    .collect()
            }
        };
        let violating = types.iter().filter(|t| !t.feasibility_violations(&f_hat).is_empty()).count();
        if violating > 0 {
            warn!("{violating} attack types have means above the hypothesised reported flow");
        }
        info!("{} groups, {} attack types", partition.num_groups(), types.len());
        partition.write_csv(File::create(self.out(artifact::PARTITION_CSV))?)?;
        write_json(&self.out(artifact::PARTITION), &partition)?;
        write_json(&self.out(artifact::ATTACKS), &AttackSet::from_types(&types))?;
        write_json(
            &self.out(artifact::HYPOTHESIS),
            &HypothesisFlows { rule: ac.hypothesis, f, f_hat },
        )
    }

    fn load_types(&self, net: &Network) -> Result<Vec<AttackType>> {
        let set: AttackSet = read_json(&self.out(artifact::ATTACKS))?;
        set.to_types(&net.capacities())
    }

    fn best_responses(&self) -> Result<()> {
        let net: Network = read_json(&self.out(artifact::ROUTED))?;
        let types = self.load_types(&net)?;
        let hyp: HypothesisFlows = read_json(&self.out(artifact::HYPOTHESIS))?;
        let opts = self.config.solver.options();
        let records: Vec<BestResponseRecord> = types
            .par_iter()
            .map(|t| {
                let s = best_response_flow(&net, t, &hyp.f_hat, &opts)?;
                Ok(BestResponseRecord {
                    type_id: t.id,
                    z: s.z,
                    y: s.y,
                    objective: s.objective,
                    gap: s.gap,
                    iterations: s.iterations,
                    converged: s.converged,
                    nonconvex: s.nonconvex,
                })
            })
            .collect::<Result<_>>()?;
        let unconverged = records.iter().filter(|r| !r.converged).count();
        if unconverged > 0 {
            warn!("{unconverged} best responses hit the iteration limit");
        }

        #[derive(Serialize)]
        struct Row {
            type_id: usize,
            route: usize,
            z: f64,
        }
        let rows: Vec<Row> = records
            .iter()
            .flat_map(|r| r.z.iter().enumerate().map(move |(k, &z)| Row { type_id: r.type_id, route: k, z }))
            .collect();
        write_csv(&self.out(artifact::BEST_RESPONSES_CSV), &rows)?;
        write_json(&self.out(artifact::BEST_RESPONSES), &records)
    }

    fn cluster(&self) -> Result<()> {
        let net: Network = read_json(&self.out(artifact::ROUTED))?;
        let records: Vec<BestResponseRecord> = read_json(&self.out(artifact::BEST_RESPONSES))?;
        let flows: Vec<Vec<f64>> = records.iter().map(|r| r.z.clone()).collect();
        let cc = &self.config.cluster;
        let epsilon = cc.epsilon.unwrap_or(cc.epsilon_rel * net.total_demand());
        let n_c_max = cc.n_c_max.unwrap_or(flows.len());
        let model = choose_n_c(&flows, epsilon, n_c_max, cc.restarts, self.config.seed)?;
        let pairs = pair_sets(&model, flows.len())?;
        info!(
            "{} clusters at epsilon {epsilon}; {} cross-cluster pairs",
            model.n_c,
            pairs.p.len()
        );
        write_json(&self.out(artifact::CLUSTERS), &ClusterArtifact { model, pairs })
    }

    fn diffmatrix(&self) -> Result<()> {
        let net: Network = read_json(&self.out(artifact::ROUTED))?;
        let types = self.load_types(&net)?;
        let partition: Partition = read_json(&self.out(artifact::PARTITION))?;
        let clusters: ClusterArtifact = read_json(&self.out(artifact::CLUSTERS))?;
        let m = difference_matrix(&types, &partition, &clusters.pairs.p)?;

        #[derive(Serialize)]
        struct PairRow {
            row: usize,
            type_p: usize,
            type_q: usize,
        }
        let rows: Vec<PairRow> = m
            .pairs
            .iter()
            .enumerate()
            .map(|(row, &(type_p, type_q))| PairRow { row, type_p, type_q })
            .collect();
        write_csv(&self.out(artifact::PAIRS_CSV), &rows)?;
        m.write_csv(partition.labels(), File::create(self.out(artifact::DIFFMATRIX_CSV))?)?;
        write_json(&self.out(artifact::DIFFMATRIX), &m)
    }

    fn allocate(&self) -> Result<()> {
        let partition: Partition = read_json(&self.out(artifact::PARTITION))?;
        let m: DifferenceMatrix = read_json(&self.out(artifact::DIFFMATRIX))?;
        let records: Vec<AllocationRecord> = self
            .config
            .allocation
            .budgets
            .iter()
            .map(|&budget| {
                let allocation = solve_lexicographic(&m, partition.costs(), budget)?;
                let selected = allocation.selected();
                info!("budget {budget}: groups {selected:?}, alpha {}", allocation.alpha);
                Ok(AllocationRecord { budget, allocation, selected })
            })
            .collect::<Result<_>>()?;

        #[derive(Serialize)]
        struct Row {
            budget: f64,
            selected_groups: String,
            n_selected: usize,
            cost: f64,
            alpha: f64,
            avg: f64,
        }
        let rows: Vec<Row> = records
            .iter()
            .map(|r| Row {
                budget: r.budget,
                selected_groups: join_ids(&r.selected),
                n_selected: r.selected.len(),
                cost: r.allocation.cost,
                alpha: r.allocation.alpha,
                avg: r.allocation.avg,
            })
            .collect();
        write_csv(&self.out(artifact::ALLOCATIONS_CSV), &rows)?;
        write_json(&self.out(artifact::ALLOCATIONS), &records)
    }

    fn simulate(&self) -> Result<()> {
        let net: Network = read_json(&self.out(artifact::ROUTED))?;
        let types = self.load_types(&net)?;
        let partition: Partition = read_json(&self.out(artifact::PARTITION))?;
        let m: DifferenceMatrix = read_json(&self.out(artifact::DIFFMATRIX))?;
        let allocations: Vec<AllocationRecord> = read_json(&self.out(artifact::ALLOCATIONS))?;
        let hyp: HypothesisFlows = read_json(&self.out(artifact::HYPOTHESIS))?;
        let opts = self.config.solver.options();
        let trials = self.config.simulation.trials;
        let seed = self.config.seed;
        let f = &hyp.f;

        let full = system_optimal_flow(&net, f, &opts)?;
        let full_info_cost = evaluate_true_cost(&net, &full.y, f);

        let mut kinds = vec![AllocationKind::Optimized];
        if self.config.simulation.random_baseline {
            kinds.push(AllocationKind::Random);
        }
        let mut tasks = Vec::new();
        for (bi, rec) in allocations.iter().enumerate() {
            for &kind in &kinds {
                for t in &types {
                    for trial in 0..trials {
                        tasks.push((bi, rec, kind, t, trial));
                    }
                }
            }
        }
        let records: Vec<EvaluationRecord> = tasks
            .par_iter()
            .map(|&(bi, rec, kind, t, trial)| {
                let a = sample_attack(t, StreamId::new(seed, Domain::AttackSample, t.id as u32, trial as u32), false);
                let f_hat: Vec<f64> = f.iter().zip(&a).map(|(f, a)| f + a).collect();
                let allocation = match kind {
                    AllocationKind::Optimized => rec.allocation.clone(),
                    AllocationKind::Random => {
                        let minor = (t.id * trials + trial) as u32;
                        let stream = StreamId::new(seed, Domain::RandomAllocation, bi as u32, minor);
                        random_allocation_baseline(&partition, &m, rec.budget, stream)
                    }
                };
                let sensed = sensed_links(&allocation, &partition)?;
                let obs = Observation::of_attack(sensed, &a);
                let omega = likelihood_weights(&obs, &types)?;
                let sol = post_sensing_routing(&net, &f_hat, &obs, &omega, &types, &opts)?;
                Ok(EvaluationRecord {
                    budget: rec.budget,
                    type_id: t.id,
                    kind,
                    trial,
                    true_cost: evaluate_true_cost(&net, &sol.y, f),
                    objective: sol.objective,
                    alpha: allocation.alpha,
                    cost: allocation.cost,
                    selected_groups: join_ids(&allocation.selected()),
                    n_sensed_links: obs.sensed.len(),
                    full_info_cost,
                    converged: sol.converged,
                })
            })
            .collect::<Result<_>>()?;
        info!("{} evaluations", records.len());
        write_csv(&self.out(artifact::EVALUATIONS_CSV), &records)
    }

    fn report(&self) -> Result<()> {
        let mut reader = csv::Reader::from_path(self.out(artifact::EVALUATIONS_CSV))?;
        let records: Vec<EvaluationRecord> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
        let rows = summarize(&records);
        write_csv(&self.out(artifact::REPORT_CSV), &rows)?;
        self.write_manifest()
    }

    /// Hashes every artifact currently in the output directory.
    pub fn write_manifest(&self) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for entry in std::fs::read_dir(&self.out_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == artifact::MANIFEST || !entry.file_type()?.is_file() {
                continue;
            }
            artifacts.insert(name, sha256_hex(&std::fs::read(entry.path())?));
        }
        let manifest = Manifest {
            config_sha256: self.config_hash()?,
            seed: self.config.seed,
            stage_versions: StageName::ALL.iter().map(|s| (s.as_str().to_string(), STAGE_VERSION)).collect(),
            artifacts,
        };
        write_json(&self.out(artifact::MANIFEST), &manifest)
    }
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per (budget, arm) means, overall and per attack type. Budgets keep their
/// first-seen order.
pub fn summarize(records: &[EvaluationRecord]) -> Vec<ReportRow> {
    let mut budgets: Vec<f64> = Vec::new();
    for r in records {
        if !budgets.contains(&r.budget) {
            budgets.push(r.budget);
        }
    }
    let mut types: Vec<usize> = records.iter().map(|r| r.type_id).collect();
    types.sort_unstable();
    types.dedup();
    let mut rows = Vec::new();
    for &budget in &budgets {
        for kind in [AllocationKind::Optimized, AllocationKind::Random] {
            let group: Vec<&EvaluationRecord> =
                records.iter().filter(|r| r.budget == budget && r.kind == kind).collect();
            if group.is_empty() {
                continue;
            }
            let mut row = |label: String, sel: Vec<&EvaluationRecord>| {
                let costs: Vec<f64> = sel.iter().map(|r| r.true_cost).collect();
                let (mean, se) = mean_and_stderr(&costs);
                let n = sel.len() as f64;
                rows.push(ReportRow {
                    budget,
                    kind,
                    type_id: label,
                    trials: sel.len(),
                    mean_true_cost: mean,
                    stderr_true_cost: se,
                    mean_objective: sel.iter().map(|r| r.objective).sum::<f64>() / n,
                    mean_selected_groups: sel
                        .iter()
                        .map(|r| r.selected_groups.split(';').filter(|s| !s.is_empty()).count() as f64)
                        .sum::<f64>()
                        / n,
                    full_info_cost: sel[0].full_info_cost,
                });
            };
            row("all".into(), group.clone());
            for &t in &types {
                let sel: Vec<&EvaluationRecord> = group.iter().copied().filter(|r| r.type_id == t).collect();
                if !sel.is_empty() {
                    row(t.to_string(), sel);
                }
            }
        }
    }
    rows
}
