//! Sensing-resource allocation and attack-aware routing for transportation
//! networks whose reported ambient flows may be poisoned.
//!
//! The pipeline mirrors the modules below:
//!
//! 1. [`network`]: TNTP ingestion, route enumeration, incidence matrices.
//! 2. [`attack`]: Gaussian attack hypotheses, sampling and projection.
//! 3. [`cost`]: BPR cost, expected cost under a Gaussian attack, and its
//!    quintic polynomial expansion.
//! 4. [`routing`]: route-based Frank-Wolfe for the polynomial routing programs.
//! 5. [`cluster`]: l1 k-medians over best-response flows and pair sets.
//! 6. [`allocation`]: difference matrix and exact lexicographic allocation.
//! 7. [`posterior`]: likelihood weights and post-sensing routing.
//! 8. [`partition`]: subnetwork partitions from files or coordinates.
//! 9. [`experiment`]: the staged end-to-end pipeline driven by the CLI.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod attack;
pub mod cluster;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod network;
pub mod partition;
pub mod poly;
pub mod posterior;
pub mod rng;
pub mod routing;

pub use allocation::{
    difference_matrix, solve_lexicographic, solve_max_min, Allocation, DifferenceMatrix,
};
pub use attack::{
    make_zone_attack_types, project, sample_attack, AttackType, ProjectedGaussian,
    SelectionMatrix,
};
pub use cluster::{choose_n_c, k_medians, pair_sets, ClusterModel, KMediansResult, PairSets};
pub use cost::{
    bpr_cost, expected_link_cost, objective_derivative, poly_coefficients, BprParams,
    ExpectedCostParams, PolyCoeffs,
};
pub use error::{Error, Result};
pub use network::{generate_routes, link_flow, parse_tntp, Link, Network, OdPair, Route};
pub use partition::{load_partition, synth_partition, Partition};
pub use posterior::{
    likelihood_weights, post_sensing_routing, sensed_links, Observation, PosteriorWeights,
};
pub use routing::{
    best_response_flow, solve, system_optimal_flow, LinkObjective, NonconvexPolicy,
    RoutingSolution, SolverOptions,
};
