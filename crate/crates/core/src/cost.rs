//! Link cost kernels.
//!
//! The per-link contribution to every routing objective in this crate is
//! `y * psi(y)` where `psi` is the BPR cost averaged over a Gaussian
//! perturbation of the ambient flow. Because the BPR cost is quartic and the
//! Gaussian fourth moment is available in closed form, `y * psi(y)` is a
//! quintic polynomial without constant term; [`PolyCoeffs`] holds it.

use serde::{Deserialize, Serialize};

/// BPR parameters of one link: cost at total flow `v` is `b + w (v / c)^4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub b: f64,
    pub w: f64,
    pub c: f64,
}

/// Parameters of the expected link cost under a Gaussian attack hypothesis.
///
/// `mu_tilde` is the hypothesised attack mean minus the reported flow,
/// `mu - f_hat`, so the true ambient flow has mean `-mu_tilde`. A link with
/// known ambient flow `f` uses `mu_tilde = -f` and `sigma = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCostParams {
    pub bpr: BprParams,
    pub mu_tilde: f64,
    pub sigma: f64,
}

impl ExpectedCostParams {
    pub fn known_flow(bpr: BprParams, f: f64) -> Self {
        Self {
            bpr,
            mu_tilde: -f,
            sigma: 0.0,
        }
    }

    pub fn attacked(bpr: BprParams, mu: f64, f_hat: f64, sigma: f64) -> Self {
        Self {
            bpr,
            mu_tilde: mu - f_hat,
            sigma,
        }
    }
}

/// Coefficients `zeta[k-1]` of `y^k`, `k = 1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolyCoeffs(pub [f64; 5]);

impl PolyCoeffs {
    pub fn zeta(&self) -> &[f64; 5] {
        &self.0
    }

    /// `sum_k zeta_k y^k`, Horner form.
    pub fn value(&self, y: f64) -> f64 {
        let z = &self.0;
        y * (z[0] + y * (z[1] + y * (z[2] + y * (z[3] + y * z[4]))))
    }

    pub fn derivative(&self, y: f64) -> f64 {
        let z = &self.0;
        z[0] + y * (2.0 * z[1] + y * (3.0 * z[2] + y * (4.0 * z[3] + y * 5.0 * z[4])))
    }

    pub fn second_derivative(&self, y: f64) -> f64 {
        let z = &self.0;
        2.0 * z[1] + y * (6.0 * z[2] + y * (12.0 * z[3] + y * 20.0 * z[4]))
    }

    /// `n`-th derivative at `y`, for `n = 0..=5`.
    pub fn nth_derivative(&self, n: usize, y: f64) -> f64 {
        // full coefficient vector including the zero constant term
        let mut c = [0.0; 6];
        c[1..].copy_from_slice(&self.0);
        let mut acc = 0.0;
        for k in (n..=5).rev() {
            let falling: f64 = ((k - n + 1)..=k).map(|v| v as f64).product();
            acc = acc * y + falling * c[k];
        }
        acc
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, weight: f64, other: &PolyCoeffs) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += weight * b;
        }
    }
}

/// BPR cost of a link carrying own flow `y` on top of ambient flow `f`.
pub fn bpr_cost(y: f64, f: f64, p: &BprParams) -> f64 {
    let r = (f + y) / p.c;
    let r2 = r * r;
    p.b + p.w * r2 * r2
}

/// Expected BPR cost `psi(y) = E[phi(y + f_hat - a)]` with
/// `a ~ N(mu, sigma^2)`, via the exact Gaussian fourth moment.
pub fn expected_link_cost(y: f64, p: &ExpectedCostParams) -> f64 {
    let m = y - p.mu_tilde;
    let s2 = p.sigma * p.sigma;
    let m2 = m * m;
    let c2 = p.bpr.c * p.bpr.c;
    p.bpr.b + p.bpr.w / (c2 * c2) * (m2 * m2 + 6.0 * m2 * s2 + 3.0 * s2 * s2)
}

/// Coefficients of `y * psi(y)` as a polynomial in `y`.
pub fn poly_coefficients(p: &ExpectedCostParams) -> PolyCoeffs {
    let BprParams { b, w, c } = p.bpr;
    let k = w / (c * c * c * c);
    let mt = p.mu_tilde;
    let s2 = p.sigma * p.sigma;
    let mt2 = mt * mt;
    PolyCoeffs([
        b + k * (mt2 * mt2 + 6.0 * mt2 * s2 + 3.0 * s2 * s2),
        -4.0 * k * (mt2 * mt + 3.0 * mt * s2),
        6.0 * k * (mt2 + s2),
        -4.0 * k * mt,
        k,
    ])
}

/// Marginal cost `d/dy [y * psi(y)]`.
pub fn objective_derivative(y: f64, p: &ExpectedCostParams) -> f64 {
    poly_coefficients(p).derivative(y)
}
