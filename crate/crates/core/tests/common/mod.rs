//! Independent reference computations shared by the integration suites.
#![allow(dead_code, clippy::needless_range_loop)]

use pate_fairness::model::{objective, LabelTarget, ModelParams};
use pate_fairness::numeric::{dot, norm};

/// Central-difference gradient of the regularized objective with step
/// `1e-6·(1 + |θ_i|)`.
pub fn fd_gradient(p: &ModelParams, xs: &[&[f64]], ts: &[LabelTarget], lambda: f64) -> Vec<f64> {
    let base = p.values().to_vec();
    (0..base.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + base[i].abs());
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fp = objective(&p.with_values(plus).unwrap(), xs, ts, lambda).unwrap();
            let fm = objective(&p.with_values(minus).unwrap(), xs, ts, lambda).unwrap();
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Mean binary logistic loss of a bias-free linear model, written out
/// directly.
pub fn logistic_mean_loss(theta: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| {
            let z = dot(theta, x);
            // log(1 + e^z) − y z
            let lse = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            lse - y * z
        })
        .sum::<f64>()
        / xs.len() as f64
}

/// Hessian of [`logistic_mean_loss`] by central differences of its own
/// finite-difference gradient, symmetrized.
pub fn fd_logistic_hessian(theta: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> Vec<Vec<f64>> {
    let d = theta.len();
    let grad = |t: &[f64]| -> Vec<f64> {
        // Analytic-free gradient: central differences of the loss.
        (0..d)
            .map(|i| {
                let h = 1e-5;
                let mut a = t.to_vec();
                a[i] += h;
                let mut b = t.to_vec();
                b[i] -= h;
                (logistic_mean_loss(&a, xs, ys) - logistic_mean_loss(&b, xs, ys)) / (2.0 * h)
            })
            .collect()
    };
    let h = 1e-4;
    let mut hess = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut a = theta.to_vec();
        a[j] += h;
        let mut b = theta.to_vec();
        b[j] -= h;
        let (ga, gb) = (grad(&a), grad(&b));
        for i in 0..d {
            hess[i][j] = (ga[i] - gb[i]) / (2.0 * h);
        }
    }
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = s;
            hess[j][i] = s;
        }
    }
    hess
}

/// Largest absolute eigenvalue of a symmetric matrix by cyclic Jacobi
/// rotations.
pub fn spectral_norm(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max)
}

/// `erf` by its Maclaurin series; accurate to ~1e-15 for `|z| ≤ 3`.
pub fn erf_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1.0;
        term *= -z * z / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

/// `1 − Φ(k / (√2 σ))` through [`erf_series`].
pub fn unanimous_flip_oracle(k: f64, sigma: f64) -> f64 {
    let z = k / (std::f64::consts::SQRT_2 * sigma);
    0.5 * (1.0 - erf_series(z / std::f64::consts::SQRT_2))
}

/// Minimizer of `coeff·γ + log(1/δ)/(γ − 1)` over the lattice
/// `1 + j·step` in `(1, γ_max]`, with the three-point parabola through the
/// best lattice point and its neighbours.
pub fn rdp_grid_search(coeff: f64, delta: f64, step: f64, gamma_max: f64) -> GridResult {
    let f = |g: f64| coeff * g + (1.0 / delta).ln() / (g - 1.0);
    let n = ((gamma_max - 1.0) / step).round() as usize;
    let mut best = (1usize, f64::INFINITY);
    for j in 1..=n {
        let v = f(1.0 + j as f64 * step);
        if v < best.1 {
            best = (j, v);
        }
    }
    let g0 = 1.0 + best.0 as f64 * step;
    let refined = if best.0 > 1 && best.0 < n {
        let (fl, fc, fr) = (f(g0 - step), best.1, f(g0 + step));
        g0 + 0.5 * step * (fl - fr) / (fl - 2.0 * fc + fr)
    } else {
        g0
    };
    GridResult {
        epsilon: best.1,
        gamma: g0,
        gamma_refined: refined,
    }
}

pub struct GridResult {
    pub epsilon: f64,
    pub gamma: f64,
    pub gamma_refined: f64,
}
