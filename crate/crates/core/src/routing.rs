//! Route-flow programs over `{Hz = d, z >= 0}` with separable polynomial link
//! objectives, solved by Frank-Wolfe with away steps and exact line search.

use serde::{Deserialize, Serialize};

use crate::attack::AttackType;
use crate::cost::{poly_coefficients, ExpectedCostParams, PolyCoeffs};
use crate::error::{Error, Result};
use crate::network::{link_flow, Network};
use crate::poly;

/// Separable objective `sum_j sum_k zeta_{j,k} y_j^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkObjective {
    pub coeffs: Vec<PolyCoeffs>,
}

impl LinkObjective {
    pub fn new(coeffs: Vec<PolyCoeffs>) -> Self {
        Self { coeffs }
    }

    /// Total cost with known ambient flow `f`.
    pub fn system_optimal(network: &Network, f: &[f64]) -> Result<Self> {
        check_len("ambient flow", network.num_links(), f.len())?;
        Ok(Self::new(
            network
                .links()
                .iter()
                .zip(f)
                .map(|(l, &f)| poly_coefficients(&ExpectedCostParams::known_flow(l.bpr(), f)))
                .collect(),
        ))
    }

    /// Expected total cost when the reported flow is `f_hat` and the attack
    /// follows `t`.
    pub fn best_response(network: &Network, t: &AttackType, f_hat: &[f64]) -> Result<Self> {
        check_len("reported flow", network.num_links(), f_hat.len())?;
        check_len("attack mean", network.num_links(), t.num_links())?;
        Ok(Self::new(
            network
                .links()
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    poly_coefficients(&ExpectedCostParams::attacked(l.bpr(), t.mu[j], f_hat[j], t.sigma[j]))
                })
                .collect(),
        ))
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().zip(y).map(|(p, &y)| p.value(y)).sum()
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.coeffs.iter().zip(y).map(|(p, &y)| p.derivative(y)).collect()
    }

    /// Coefficients `b_1..b_5` of `t -> value(y + t dy) - value(y)`.
    fn restriction(&self, y: &[f64], dy: &[f64]) -> [f64; 6] {
        let mut b = [0.0; 6];
        for ((p, &y), &d) in self.coeffs.iter().zip(y).zip(dy) {
            if d == 0.0 {
                continue;
            }
            let mut dk = 1.0;
            let mut fact = 1.0;
            for (k, bk) in b.iter_mut().enumerate().skip(1) {
                dk *= d;
                fact *= k as f64;
                *bk += dk * p.nth_derivative(k, y) / fact;
            }
        }
        b
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

/// What to do when a line search meets negative curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonconvexPolicy {
    /// Fail with [`Error::NonConvex`].
    #[default]
    Reject,
    /// Keep going with the exact (global on the segment) line minimizer and
    /// mark the solution; the gap is then no longer an optimality bound.
    Tolerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when the duality gap is at most `tol * max(1, |objective|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub nonconvex: NonconvexPolicy,
    pub away_steps: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            nonconvex: NonconvexPolicy::Reject,
            away_steps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSolution {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Frank-Wolfe duality gap at `z`.
    pub gap: f64,
    /// Number of gradient evaluations.
    pub iterations: usize,
    pub converged: bool,
    /// Set when negative curvature was met and tolerated.
    pub nonconvex: bool,
    pub objective_trace: Vec<f64>,
}

struct Oracle {
    /// Per OD: cheapest route.
    fw: Vec<usize>,
    /// Per OD: most expensive route carrying flow.
    away: Vec<usize>,
    gap_fw: f64,
    gap_away: f64,
}

fn oracle(by_od: &[Vec<usize>], z: &[f64], cost: &[f64], demand: &[f64]) -> Oracle {
    let mut o = Oracle {
        fw: vec![usize::MAX; by_od.len()],
        away: vec![usize::MAX; by_od.len()],
        gap_fw: 0.0,
        gap_away: 0.0,
    };
    for (od, routes) in by_od.iter().enumerate() {
        if routes.is_empty() {
            continue;
        }
        let mut s = routes[0];
        let mut a = usize::MAX;
        let mut zc = 0.0;
        for &r in routes {
            if cost[r] < cost[s] {
                s = r;
            }
            if z[r] > 0.0 && (a == usize::MAX || cost[r] > cost[a]) {
                a = r;
            }
            zc += z[r] * cost[r];
        }
        o.fw[od] = s;
        o.gap_fw += zc - demand[od] * cost[s];
        if a != usize::MAX {
            o.away[od] = a;
            o.gap_away += demand[od] * cost[a] - zc;
        }
    }
    o.gap_fw = o.gap_fw.max(0.0);
    o.gap_away = o.gap_away.max(0.0);
    o
}

/// Exact minimizer of `sum b_k t^k` on `[0, t_max]`; ties go to the smaller
/// step. Also returns the smallest second derivative on the segment.
fn line_search(b: &[f64; 6], t_max: f64) -> (f64, f64) {
    let dh: Vec<f64> = (1..=5).map(|k| k as f64 * b[k]).collect();
    let mut best_t = 0.0;
    let mut best_v = 0.0;
    let mut cands = poly::real_roots_in(&dh, 0.0, t_max);
    cands.push(t_max);
    for t in cands {
        let v = poly::eval(b, t);
        if v < best_v {
            best_v = v;
            best_t = t;
        }
    }
    let d2 = poly::derivative(&dh);
    let mut min_curv = poly::eval(&d2, 0.0).min(poly::eval(&d2, t_max));
    for t in poly::real_roots_in(&poly::derivative(&d2), 0.0, t_max) {
        min_curv = min_curv.min(poly::eval(&d2, t));
    }
    (best_t, min_curv)
}

pub fn solve(network: &Network, obj: &LinkObjective, opts: &SolverOptions) -> Result<RoutingSolution> {
    check_len("link objective", network.num_links(), obj.coeffs.len())?;
    if !(opts.tol > 0.0) {
        return Err(Error::Validation(format!("solver tolerance {} must be positive", opts.tol)));
    }
    let by_od = network.routes_by_od();
    let demand = network.demand();
    for (od, routes) in by_od.iter().enumerate() {
        if routes.is_empty() && demand[od] > 0.0 {
            let p = network.od_pairs()[od];
            return Err(Error::Infeasible(format!(
                "OD {} -> {} has demand {} but no route",
                p.origin, p.destination, demand[od]
            )));
        }
    }
    let f = network.link_route_incidence();
    let n_r = network.num_routes();

    let mut z = vec![0.0; n_r];
    for (od, routes) in by_od.iter().enumerate() {
        if let Some(&r) = routes.first() {
            z[r] = demand[od];
        }
    }

    let mut trace = Vec::new();
    let mut best: Option<RoutingSolution> = None;
    let mut nonconvex = false;
    let mut converged = false;
    let mut iter = 0usize;
    loop {
        let y = link_flow(&f, &z)?;
        let value = obj.value(&y);
        let g = obj.gradient(&y);
        let cost = f.apply_transpose(&g)?;
        let o = oracle(&by_od, &z, &cost, demand);
        iter += 1;
        trace.push(value);
        if best.as_ref().is_none_or(|b| value < b.objective) {
            best = Some(RoutingSolution {
                z: z.clone(),
                y: y.clone(),
                objective: value,
                gap: o.gap_fw,
                iterations: 0,
                converged: false,
                nonconvex: false,
                objective_trace: Vec::new(),
            });
        }
        if o.gap_fw <= opts.tol * value.abs().max(1.0) {
            converged = true;
            break;
        }
        if iter >= opts.max_iter {
            break;
        }

        // direction in route space
        let mut dz = vec![0.0; n_r];
        let use_away = opts.away_steps && o.gap_away > o.gap_fw;
        let mut t_max = 1.0;
        let mut drop_od = None;
        if use_away {
            t_max = f64::INFINITY;
            for (od, routes) in by_od.iter().enumerate() {
                let a = o.away[od];
                if a == usize::MAX {
                    continue;
                }
                for &r in routes {
                    dz[r] = z[r];
                }
                dz[a] -= demand[od];
                let slack = demand[od] - z[a];
                if slack > 0.0 {
                    let cap = z[a] / slack;
                    if cap < t_max {
                        t_max = cap;
                        drop_od = Some(od);
                    }
                }
            }
            if !t_max.is_finite() {
                t_max = 0.0;
            }
        } else {
            for (od, routes) in by_od.iter().enumerate() {
                for &r in routes {
                    dz[r] = -z[r];
                }
                if let Some(&s) = o.fw.get(od).filter(|&&s| s != usize::MAX) {
                    dz[s] += demand[od];
                }
            }
        }
        if t_max <= 0.0 {
            break;
        }
        let dy = link_flow(&f, &dz)?;
        let b = obj.restriction(&y, &dy);
        let (t, min_curv) = line_search(&b, t_max);
        let scale: f64 = (2..=5).map(|k| (k * (k - 1)) as f64 * b[k].abs() * t_max.powi(k as i32 - 2)).sum();
        if min_curv < -1e-10 * scale {
            match opts.nonconvex {
                NonconvexPolicy::Reject => {
                    return Err(Error::NonConvex { iteration: iter, curvature: min_curv })
                }
                NonconvexPolicy::Tolerate => nonconvex = true,
            }
        }
        if t <= 0.0 {
            break;
        }
        for (zr, dr) in z.iter_mut().zip(&dz) {
            *zr = (*zr + t * dr).max(0.0);
        }
        if use_away && t == t_max {
            if let Some(od) = drop_od {
                z[o.away[od]] = 0.0;
            }
        }
        // keep each OD block on its simplex
        for (od, routes) in by_od.iter().enumerate() {
            let sum: f64 = routes.iter().map(|&r| z[r]).sum();
            if sum > 0.0 && sum != demand[od] {
                let k = demand[od] / sum;
                for &r in routes {
                    z[r] *= k;
                }
            }
        }
    }
    let mut sol = best.expect("at least one iterate");
    sol.iterations = iter;
    sol.converged = converged;
    sol.nonconvex = nonconvex;
    sol.objective_trace = trace;
    Ok(sol)
}

/// Best response to attack type `t` given reported flow `f_hat`.
pub fn best_response_flow(
    network: &Network,
    t: &AttackType,
    f_hat: &[f64],
    opts: &SolverOptions,
) -> Result<RoutingSolution> {
    if let Some(j) = f_hat.iter().position(|v| *v < 0.0) {
        return Err(Error::Validation(format!("reported flow is negative on link {j}")));
    }
    solve(network, &LinkObjective::best_response(network, t, f_hat)?, opts)
}

/// Minimum total cost routing with known ambient flow `f`.
pub fn system_optimal_flow(network: &Network, f: &[f64], opts: &SolverOptions) -> Result<RoutingSolution> {
    solve(network, &LinkObjective::system_optimal(network, f)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Link, OdPair, Route};

    fn parallel(links: &[(f64, f64, f64)], demand: f64) -> Network {
        let links = links
            .iter()
            .enumerate()
            .map(|(i, &(b, w, c))| Link { id: i, tail: 1, head: 2, b, c, w })
            .collect();
        let mut net = Network::new(2, links, vec![OdPair::new(1, 2)], vec![demand]).unwrap();
        let n = net.num_links();
        net.set_routes((0..n).map(|l| Route { od: 0, links: vec![l] }).collect()).unwrap();
        net
    }

    #[test]
    fn single_route_converges_immediately() {
        let net = parallel(&[(1.0, 1.0, 1.0)], 10.0);
        let sol = system_optimal_flow(&net, &[0.0], &SolverOptions::default()).unwrap();
        assert_eq!(sol.z, vec![10.0]);
        assert_eq!(sol.iterations, 1);
        assert!(sol.converged);
    }

    #[test]
    fn identical_parallel_links_split_evenly() {
        let net = parallel(&[(1.0, 1.0, 1.0), (1.0, 1.0, 1.0)], 10.0);
        let sol = system_optimal_flow(&net, &[0.0, 0.0], &SolverOptions::default()).unwrap();
        assert!((sol.z[0] - 5.0).abs() < 1e-9 && (sol.z[1] - 5.0).abs() < 1e-9, "{:?}", sol.z);
    }

    #[test]
    fn unequal_capacities_match_stationarity() {
        // marginal costs equal: 1 + 5 z1^4 = 1 + 5 z2^4 / 16  =>  z2 = 2 z1
        let net = parallel(&[(1.0, 1.0, 1.0), (1.0, 1.0, 2.0)], 9.0);
        let sol = system_optimal_flow(&net, &[0.0, 0.0], &SolverOptions::default()).unwrap();
        assert!((sol.z[0] - 3.0).abs() < 1e-6 && (sol.z[1] - 6.0).abs() < 1e-6, "{:?}", sol.z);
    }

    #[test]
    fn three_routes_converge() {
        let net = parallel(&[(1.0, 1.0, 1.0), (2.0, 0.5, 3.0), (0.5, 2.0, 1.5)], 12.0);
        let sol = system_optimal_flow(&net, &[0.5, 0.0, 1.0], &SolverOptions::default()).unwrap();
        assert!(sol.converged, "gap {} after {}", sol.gap, sol.iterations);
        assert!((sol.z.iter().sum::<f64>() - 12.0).abs() < 1e-12);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn zero_attack_matches_system_optimum() {
        let net = parallel(&[(1.0, 1.0, 1.0), (1.0, 1.0, 2.0)], 9.0);
        let t = AttackType::new(0, vec![0.0, 0.0], vec![1e-300, 1e-300]).unwrap();
        let f = [0.5, 1.5];
        let a = best_response_flow(&net, &t, &f, &SolverOptions::default()).unwrap();
        let b = system_optimal_flow(&net, &f, &SolverOptions::default()).unwrap();
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn missing_route_is_infeasible() {
        let links = vec![Link { id: 0, tail: 1, head: 2, b: 1.0, c: 1.0, w: 1.0 }];
        let net = Network::new(2, links, vec![OdPair::new(1, 2)], vec![1.0]).unwrap();
        assert!(matches!(
            system_optimal_flow(&net, &[0.0], &SolverOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn negative_curvature_rejected_or_tolerated() {
        // mean attack far above the reported flow makes y * psi(y) nonconvex near 0
        let net = parallel(&[(0.0, 1.0, 1.0), (1.0, 0.0, 1.0)], 4.0);
        let t = AttackType::new(0, vec![3.0, 0.0], vec![0.01, 0.01]).unwrap();
        let opts = SolverOptions::default();
        let err = best_response_flow(&net, &t, &[0.0, 0.0], &opts);
        assert!(matches!(err, Err(Error::NonConvex { .. })), "{err:?}");
        let tol = SolverOptions { nonconvex: NonconvexPolicy::Tolerate, ..opts };
        let sol = best_response_flow(&net, &t, &[0.0, 0.0], &tol).unwrap();
        assert!(sol.nonconvex);
    }

    #[test]
    fn line_search_picks_global_minimum() {
        // h(t) = t^4 - t^2 on [0, 2]: minimum at t = 1/sqrt(2)
        let b = [0.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        let (t, curv) = line_search(&b, 2.0);
        assert!((t - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(curv < 0.0);
    }
}
