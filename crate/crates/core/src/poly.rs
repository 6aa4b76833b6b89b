//! Small dense-polynomial helpers. Coefficients are stored in ascending
//! order: `c[k]` multiplies `t^k`.

/// Horner evaluation.
pub fn eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

fn trim(coeffs: &[f64]) -> &[f64] {
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1] == 0.0 {
        n -= 1;
    }
    &coeffs[..n]
}

/// Real roots of `coeffs` inside `[lo, hi]`, in increasing order.
///
/// Roots are isolated recursively: the critical points of the polynomial
/// split the interval into monotone pieces, each of which holds at most one
/// root, found by bisection to full precision. Roots of even multiplicity
/// that only touch zero are reported when the polynomial vanishes exactly at
/// a critical point.
pub fn real_roots_in(coeffs: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let p = trim(coeffs);
    match p.len() {
        0 | 1 => Vec::new(),
        2 => {
            let r = -p[0] / p[1];
            if (lo..=hi).contains(&r) {
                vec![r]
            } else {
                Vec::new()
            }
        }
        _ => {
            let crit = real_roots_in(&derivative(p), lo, hi);
            let mut knots = Vec::with_capacity(crit.len() + 2);
            knots.push(lo);
            knots.extend(crit.into_iter().filter(|&c| c > lo && c < hi));
            knots.push(hi);
            let mut roots: Vec<f64> = Vec::new();
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (fa, fb) = (eval(p, a), eval(p, b));
                if fa == 0.0 {
                    push_unique(&mut roots, a);
                }
                if fa != 0.0 && fb != 0.0 && (fa < 0.0) != (fb < 0.0) {
                    push_unique(&mut roots, bisect(p, a, b, fa));
                }
            }
            if eval(p, hi) == 0.0 {
                push_unique(&mut roots, hi);
            }
            roots
        }
    }
}

fn push_unique(roots: &mut Vec<f64>, r: f64) {
    if roots.last().is_none_or(|&last| last != r) {
        roots.push(r);
    }
}

fn bisect(p: &[f64], mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = eval(p, m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
