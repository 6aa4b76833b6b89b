//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use routeguard::cost::PolyCoeffs;
use routeguard::network::{Link, Network, OdPair};
use routeguard::rng::{Domain, StreamId};
use routeguard::{AttackType, LinkObjective};

pub fn rng(major: u32, minor: u32) -> ChaCha8Rng {
    StreamId::new(0x5eed, Domain::Test, major, minor).rng()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn link(id: usize, tail: usize, head: usize, b: f64, c: f64, w: f64) -> Link {
    Link { id, tail, head, b, c, w }
}

// ---------------------------------------------------------------------------
// Paths

/// Every node-simple path from `o` to `d` whose intermediate nodes are at
/// least `first_thru`, with its free-flow cost, sorted by (cost, link ids).
pub fn all_simple_paths(net: &Network, o: usize, d: usize, first_thru: usize) -> Vec<(f64, Vec<usize>)> {
    fn walk(
        net: &Network,
        at: usize,
        d: usize,
        first_thru: usize,
        seen: &mut Vec<usize>,
        path: &mut Vec<usize>,
        out: &mut Vec<(f64, Vec<usize>)>,
    ) {
        if at == d {
            let cost = path.iter().map(|&l| net.links()[l].b).sum();
            out.push((cost, path.clone()));
            return;
        }
        if seen.len() > 1 && at < first_thru {
            return;
        }
        for l in net.links() {
            if l.tail == at && !seen.contains(&l.head) {
                seen.push(l.head);
                path.push(l.id);
                walk(net, l.head, d, first_thru, seen, path, out);
                path.pop();
                seen.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(net, o, d, first_thru, &mut vec![o], &mut Vec::new(), &mut out);
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    out
}

/// Random strongly-ish connected digraph on `n` nodes with integer free-flow
/// costs, so path-cost ties are exact.
pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Vec<Link> {
    let mut links = Vec::new();
    let add = |links: &mut Vec<Link>, t: usize, h: usize, b: f64| {
        let id = links.len();
        links.push(link(id, t, h, b, 10.0, 0.15));
    };
    for v in 1..=n {
        let h = v % n + 1;
        let b = rng.random_range(1..=4) as f64;
        add(&mut links, v, h, b);
    }
    for _ in 0..extra {
        let t = rng.random_range(1..=n);
        let h = rng.random_range(1..=n);
        if t != h {
            let b = rng.random_range(1..=4) as f64;
            add(&mut links, t, h, b);
        }
    }
    links
}

// ---------------------------------------------------------------------------
// Routing

/// Grid search over the route flows of a single-OD network with 2 or 3
/// routes. The first free coordinates range over `[0, d]` with step
/// `step * d`; the last route takes the remainder. For 3 routes the search
/// refines a coarse grid in a window around its minimum, which is exact for
/// the convex instances used here.
pub fn grid_oracle(net: &Network, obj: &LinkObjective, step: f64) -> (f64, Vec<f64>) {
    let d = net.demand()[0];
    let n_r = net.num_routes();
    let f = net.link_route_incidence();
    let eval = |z: &[f64]| obj.value(&f.apply(z).unwrap());
    match n_r {
        2 => {
            let n = (1.0 / step).round() as usize;
            let mut best = (f64::INFINITY, vec![]);
            for i in 0..=n {
                let z0 = d * i as f64 / n as f64;
                let z = vec![z0, d - z0];
                let v = eval(&z);
                if v < best.0 {
                    best = (v, z);
                }
            }
            best
        }
        3 => {
            let mut lo = [0.0f64, 0.0];
            let mut hi = [1.0f64, 1.0];
            let mut h = 0.01f64;
            let mut best = (f64::INFINITY, vec![]);
            loop {
                let n0 = ((hi[0] - lo[0]) / h).round() as usize;
                let n1 = ((hi[1] - lo[1]) / h).round() as usize;
                let mut arg = [0.0, 0.0];
                best.0 = f64::INFINITY;
                for i in 0..=n0 {
                    let a = lo[0] + i as f64 * h;
                    for j in 0..=n1 {
                        let b = lo[1] + j as f64 * h;
                        if a + b > 1.0 + 1e-12 {
                            break;
                        }
                        let z = vec![a * d, b * d, (1.0 - a - b).max(0.0) * d];
                        let v = eval(&z);
                        if v < best.0 {
                            best = (v, z);
                            arg = [a, b];
                        }
                    }
                }
                if h <= step * 1.0001 {
                    return best;
                }
                h /= 10.0;
                for ((lo, hi), a) in lo.iter_mut().zip(&mut hi).zip(arg) {
                    *lo = ((a - 20.0 * h).max(0.0) / h).round() * h;
                    *hi = (a + 20.0 * h).min(1.0);
                }
            }
        }
        _ => panic!("grid oracle handles 2 or 3 routes"),
    }
}

// ---------------------------------------------------------------------------
// k-medians

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Optimal single-cluster cost: sum of l1 distances to the coordinatewise
/// median.
pub fn median_cost(points: &[&Vec<f64>]) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for k in 0..dim {
        let mut v: Vec<f64> = points.iter().map(|p| p[k]).collect();
        v.sort_by(f64::total_cmp);
        let m = v[v.len() / 2];
        total += v.iter().map(|x| (x - m).abs()).sum::<f64>();
    }
    total
}

/// Global optimum of the l1 k-medians objective by enumerating every
/// assignment of points to `k` labels.
pub fn brute_force_k_medians(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut label = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut cost = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| label[i] == c).map(|i| &points[i]).collect();
            if !members.is_empty() {
                cost += median_cost(&members);
            }
        }
        best = best.min(cost);
        let mut i = 0;
        while i < n {
            label[i] += 1;
            if label[i] < k {
                break;
            }
            label[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// `count` well-separated blobs in `dim` dimensions. Each blob is an anchor
/// plus mirrored pairs of offsets with l1 norm at most `radius`, so its
/// coordinatewise median is the anchor.
pub fn planted_blobs(rng: &mut ChaCha8Rng, count: usize, dim: usize, pairs: usize, radius: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut anchors: Vec<Vec<f64>> = Vec::new();
    while anchors.len() < count {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..100.0 * radius)).collect();
        if anchors.iter().all(|b| l1(&a, b) >= 20.0 * radius) {
            anchors.push(a);
        }
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, a) in anchors.iter().enumerate() {
        points.push(a.clone());
        labels.push(c);
        for _ in 0..pairs {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm: f64 = raw.iter().map(|x: &f64| x.abs()).sum();
            let scale = radius * rng.random_range(0.1..1.0) / norm;
            points.push(a.iter().zip(&raw).map(|(a, r)| a + r * scale).collect());
            points.push(a.iter().zip(&raw).map(|(a, r)| a - r * scale).collect());
            labels.extend([c, c]);
        }
    }
    (points, labels)
}

/// True when two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(x, y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

// ---------------------------------------------------------------------------
// Allocation

pub struct Enumerated {
    pub alpha: f64,
    pub x_max_min: Vec<bool>,
    pub avg: f64,
    pub x_lex: Vec<bool>,
}

/// Exhaustive search over all `2^n_g` selections, visited in the order of a
/// select-first depth-first walk (all-ones first, column 0 most
/// significant). Row values are summed in column order; the first strict
/// maximum wins.
pub fn enumerate_allocations(m: &[Vec<f64>], q: &[f64], gamma: f64, slack: f64) -> Enumerated {
    let n_g = q.len();
    let full: u64 = (1 << n_g) - 1;
    let xs = |mask: u64| (0..n_g).map(|j| mask >> (n_g - 1 - j) & 1 == 1).collect::<Vec<bool>>();
    let feasible: Vec<(Vec<bool>, Vec<f64>)> = (0..=full)
        .rev()
        .filter_map(|mask| {
            let x = xs(mask);
            let mut cost = 0.0;
            for j in (0..n_g).filter(|&j| x[j]) {
                cost += q[j];
            }
            if cost > gamma {
                return None;
            }
            let u = m
                .iter()
                .map(|row| {
                    let mut s = 0.0;
                    for j in (0..n_g).filter(|&j| x[j]) {
                        s += row[j];
                    }
                    s
                })
                .collect();
            Some((x, u))
        })
        .collect();
    let min_of = |u: &[f64]| u.iter().copied().fold(f64::INFINITY, f64::min);
    let mut alpha = f64::NEG_INFINITY;
    let mut x_max_min = vec![];
    for (x, u) in &feasible {
        if min_of(u) > alpha {
            alpha = min_of(u);
            x_max_min = x.clone();
        }
    }
    let thr = alpha - slack * (1.0 + alpha);
    let mut total = f64::NEG_INFINITY;
    let mut x_lex = vec![];
    for (x, u) in &feasible {
        if u.iter().all(|&v| v >= thr) {
            let s: f64 = u.iter().sum();
            if s > total {
                total = s;
                x_lex = x.clone();
            }
        }
    }
    Enumerated { alpha, x_max_min, avg: total / m.len() as f64, x_lex }
}

/// Dense evaluation of `(xi_p - xi_q)^T (Lambda_p + Lambda_q)^+ (xi_p - xi_q)`
/// with explicit selection matrices and a pseudoinverse.
pub fn dense_divergence(p: &AttackType, q: &AttackType, group: &[usize]) -> f64 {
    let n_l = p.mu.len();
    let s = DMatrix::from_fn(group.len(), n_l, |r, c| if group[r] == c { 1.0 } else { 0.0 });
    let mu = |t: &AttackType| DVector::from_column_slice(&t.mu);
    let cov = |t: &AttackType| DMatrix::from_diagonal(&DVector::from_iterator(n_l, t.sigma.iter().map(|s| s * s)));
    let dxi = &s * (mu(p) - mu(q));
    let lam = &s * cov(p) * s.transpose() + &s * cov(q) * s.transpose();
    let pinv = lam.pseudo_inverse(1e-300).expect("svd converges");
    (dxi.transpose() * pinv * &dxi)[(0, 0)]
}

// ---------------------------------------------------------------------------
// Networks for routing checks

/// Single-OD network `1 -> 2` with the given parallel links, followed by a
/// shared link `2 -> 3`.
pub fn parallel_with_tail(params: &[(f64, f64, f64)], tail: (f64, f64, f64), demand: f64) -> Network {
    let mut links: Vec<Link> = params.iter().enumerate().map(|(i, &(b, c, w))| link(i, 1, 2, b, c, w)).collect();
    links.push(link(params.len(), 2, 3, tail.0, tail.1, tail.2));
    let mut net = Network::new(3, links, vec![OdPair::new(1, 3)], vec![demand]).unwrap();
    let routes = routeguard::generate_routes(&net, params.len()).unwrap();
    net.set_routes(routes.routes).unwrap();
    net
}

/// Single-OD network `1 -> 4` whose three routes share links:
/// `1-2-4`, `1-3-4` and `1-2-3-4`.
pub fn braided(params: &[(f64, f64, f64); 5], demand: f64) -> Network {
    let ends = [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)];
    let links = ends.iter().zip(params).enumerate().map(|(i, (&(t, h), &(b, c, w)))| link(i, t, h, b, c, w)).collect();
    let mut net = Network::new(4, links, vec![OdPair::new(1, 4)], vec![demand]).unwrap();
    let routes = routeguard::generate_routes(&net, 3).unwrap();
    assert_eq!(routes.routes.len(), 3);
    net.set_routes(routes.routes).unwrap();
    net
}

/// Random best-response objective satisfying `mu <= f_hat`, hence convex.
pub fn random_convex_objective(rng: &mut ChaCha8Rng, net: &Network) -> LinkObjective {
    let coeffs = net
        .links()
        .iter()
        .map(|l| {
            let f_hat = rng.random_range(0.0..l.c);
            let mu = rng.random_range(0.0..=f_hat);
            let sigma = rng.random_range(0.0..0.3 * l.c);
            routeguard::poly_coefficients(&routeguard::ExpectedCostParams::attacked(l.bpr(), mu, f_hat, sigma))
        })
        .collect::<Vec<PolyCoeffs>>();
    LinkObjective::new(coeffs)
}

pub fn random_link_params(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    (rng.random_range(0.5..3.0), rng.random_range(5.0..20.0), rng.random_range(0.1..1.0))
}

// ---------------------------------------------------------------------------
// Random instances

/// Random allocation instance: matrix rows, group costs and budget. Even
/// cases use small integers so exact ties occur.
pub fn random_mip(rng: &mut ChaCha8Rng, case: u32, max_g: usize, max_p: usize) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let n_g = rng.random_range(1..=max_g);
    let n_p = rng.random_range(1..=max_p);
    let ints = case.is_multiple_of(2);
    let m = (0..n_p)
        .map(|_| {
            (0..n_g)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else if ints {
                        rng.random_range(0..6) as f64
                    } else {
                        rng.random_range(0.0..10.0)
                    }
                })
                .collect()
        })
        .collect();
    let q: Vec<f64> = (0..n_g).map(|_| if ints { rng.random_range(1..4) as f64 } else { rng.random_range(0.5..3.0) }).collect();
    let total: f64 = q.iter().sum();
    let gamma = rng.random_range(0.0..=total);
    (m, q, gamma)
}

/// Random attack types over `n_l` links, optionally with some zero
/// deviations to exercise the pseudoinverse edge.
pub fn random_types(rng: &mut ChaCha8Rng, n_a: usize, n_l: usize, zero_sigma: bool) -> Vec<AttackType> {
    (0..n_a)
        .map(|i| {
            let mu = (0..n_l).map(|_| rng.random_range(0.0..20.0)).collect();
            let sigma = (0..n_l).map(|_| if zero_sigma && rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.1..5.0) }).collect();
            // built directly: zero deviations are outside the constructor's contract
            AttackType { id: i, mu, sigma }
        })
        .collect()
}

/// Partition of `0..n_l` into `n_g` non-empty groups, some links left out.
pub fn random_groups(rng: &mut ChaCha8Rng, n_l: usize, n_g: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_g];
    for l in 0..n_l {
        let g = if l < n_g { l } else { rng.random_range(0..=n_g) };
        if g < n_g {
            groups[g].push(l);
        }
    }
    groups
}

pub fn all_pairs(n_a: usize) -> Vec<(usize, usize)> {
    (0..n_a).flat_map(|i| (i + 1..n_a).map(move |j| (i, j))).collect()
}

// ---------------------------------------------------------------------------
// Toy scenario

pub fn toy_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/toy")
}

pub struct Toy {
    pub net: Network,
    pub partition: routeguard::Partition,
    pub types: Vec<AttackType>,
    /// True ambient flow.
    pub f: Vec<f64>,
    /// Reported flow under the mean attack of each type.
    pub f_hat: Vec<Vec<f64>>,
}

/// The toy network with 2 routes per OD, its file partition, zone attacks
/// at half capacity and ambient flow at half capacity.
pub fn toy() -> Toy {
    use std::fs::File;
    use std::io::BufReader;
    let dir = toy_dir();
    let open = |name: &str| BufReader::new(File::open(dir.join(name)).unwrap());
    let mut net = routeguard::parse_tntp(open("toy_net.tntp"), open("toy_trips.tntp")).unwrap();
    let routes = routeguard::generate_routes(&net, 2).unwrap();
    net.set_routes(routes.routes).unwrap();
    let partition = routeguard::load_partition(open("toy_partition.csv"), &net).unwrap();
    let cap = net.capacities();
    let types = routeguard::make_zone_attack_types(&partition, &cap, 0.5, 0.1).unwrap();
    let f: Vec<f64> = cap.iter().map(|c| 0.5 * c).collect();
    let f_hat = types.iter().map(|t| f.iter().zip(&t.mu).map(|(f, m)| f + m).collect()).collect();
    Toy { net, partition, types, f, f_hat }
}
