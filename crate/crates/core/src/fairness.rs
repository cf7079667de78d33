//! Fairness analytics: model deviation, per-group excess risk, the gap
//! between groups, and upper bounds on each in terms of flip
//! probabilities, group gradients and smoothness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, gradient, Architecture, LabelTarget, ModelParams};
use crate::numeric::{distance, norm, top_eigenvalue};

/// Moments of `Δ = ‖θ̃ − θ*‖` over the noisy repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub first_moment: f64,
    pub second_moment: f64,
    pub repetitions: usize,
    pub per_run: Vec<f64>,
}

impl DeviationStats {
    pub fn from_distances(per_run: Vec<f64>) -> Result<Self> {
        if per_run.is_empty() {
            return Err(Error::EmptyRuns);
        }
        if per_run.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidParameter(
                "deviations must be finite and >= 0".into(),
            ));
        }
        let r = per_run.len() as f64;
        Ok(DeviationStats {
            first_moment: per_run.iter().sum::<f64>() / r,
            second_moment: per_run.iter().map(|d| d * d).sum::<f64>() / r,
            repetitions: per_run.len(),
            per_run,
        })
    }
}

fn check_same_shape(a: &ModelParams, b: &ModelParams) -> Result<()> {
    if a.arch() != b.arch() || a.len() != b.len() {
        return Err(Error::InvalidParameter(
            "clean and noisy models must share an architecture".into(),
        ));
    }
    Ok(())
}

pub fn model_deviation(clean: &ModelParams, runs: &[ModelParams]) -> Result<DeviationStats> {
    let mut d = Vec::with_capacity(runs.len());
    for r in runs {
        check_same_shape(clean, r)?;
        d.push(distance(clean.values(), r.values()));
    }
    DeviationStats::from_distances(d)
}

/// Loss used when measuring risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiskLoss {
    #[default]
    ZeroOne,
    CrossEntropy,
}

impl RiskLoss {
    pub fn name(self) -> &'static str {
        match self {
            RiskLoss::ZeroOne => "zero_one",
            RiskLoss::CrossEntropy => "cross_entropy",
        }
    }

    pub fn eval(self, params: &ModelParams, x: &[f64], target: &LabelTarget) -> Result<f64> {
        match self {
            RiskLoss::ZeroOne => model::zero_one_loss(params, x, target),
            RiskLoss::CrossEntropy => model::loss(params, x, target),
        }
    }
}

/// Per-sample `E_runs[ℓ(θ̃; x)] − ℓ(θ*; x)`.
pub fn per_sample_excess(
    inputs: &[&[f64]],
    targets: &[LabelTarget],
    clean: &ModelParams,
    runs: &[ModelParams],
    loss: RiskLoss,
) -> Result<Vec<f64>> {
    if runs.is_empty() {
        return Err(Error::EmptyRuns);
    }
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    for r in runs {
        check_same_shape(clean, r)?;
    }
    inputs
        .iter()
        .zip(targets)
        .map(|(x, t)| {
            let base = loss.eval(clean, x, t)?;
            let mut total = 0.0;
            for r in runs {
                total += loss.eval(r, x, t)? - base;
            }
            Ok(total / runs.len() as f64)
        })
        .collect()
}

/// Excess risk of one group: the mean of [`per_sample_excess`] over its
/// members.
pub fn excess_risk(
    group: usize,
    inputs: &[&[f64]],
    targets: &[LabelTarget],
    clean: &ModelParams,
    runs: &[ModelParams],
    loss: RiskLoss,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::GroupCoverage { group });
    }
    let per = per_sample_excess(inputs, targets, clean, runs, loss)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Averages per-sample values within each group.
pub fn group_means(values: &[f64], groups: &[usize], num_groups: usize) -> Result<Vec<f64>> {
    if values.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: groups.len(),
        });
    }
    let mut sums = vec![0.0; num_groups];
    let mut counts = vec![0usize; num_groups];
    for (&v, &g) in values.iter().zip(groups) {
        if g >= num_groups {
            return Err(Error::InvalidParameter(format!(
                "group {g} outside [0, {num_groups})"
            )));
        }
        sums[g] += v;
        counts[g] += 1;
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(g, (s, &c))| {
            if c == 0 {
                Err(Error::GroupCoverage { group: g })
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

/// `ξ = max_a R_a − min_a R_a`.
pub fn fairness_gap(risks: &[f64]) -> Result<f64> {
    if risks.len() < 2 {
        return Err(Error::TooFewGroups(risks.len()));
    }
    let max = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Mean unregularized loss gradient over a group, and its norm.
pub fn group_gradient(
    group: usize,
    params: &ModelParams,
    inputs: &[&[f64]],
    targets: &[LabelTarget],
) -> Result<(Vec<f64>, f64)> {
    if inputs.is_empty() {
        return Err(Error::GroupCoverage { group });
    }
    let g = gradient(params, inputs, targets, 0.0)?;
    let n = norm(&g);
    Ok((g, n))
}

/// A smoothness constant and whether it is a closed-form bound or a
/// numerical estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub beta: f64,
    pub exact: bool,
}

/// Largest squared input norm in a group.
fn max_sq_norm(inputs: &[&[f64]]) -> f64 {
    inputs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smoothness of the group loss. Logistic regression uses the closed form
/// `κ·max‖x‖²` (`κ = 1/4` for two classes, `1/2` for more); other
/// architectures fall back to [`numeric_hessian_norm`] at `params`.
pub fn group_smoothness(
    params: &ModelParams,
    inputs: &[&[f64]],
    targets: &[LabelTarget],
) -> Result<Smoothness> {
    match params.arch() {
        Architecture::Logreg => {
            let kappa = if params.num_classes() == 2 { 0.25 } else { 0.5 };
            Ok(Smoothness {
                beta: kappa * max_sq_norm(inputs),
                exact: true,
            })
        }
        Architecture::Mlp2 { .. } => Ok(Smoothness {
            beta: numeric_hessian_norm(params, inputs, targets)?,
            exact: false,
        }),
    }
}

/// Spectral norm of the Hessian of the mean loss at `params`, by power
/// iteration on central-difference Hessian-vector products.
pub fn numeric_hessian_norm(
    params: &ModelParams,
    inputs: &[&[f64]],
    targets: &[LabelTarget],
) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let h = 1e-5;
    let mut failure = None;
    let value = top_eigenvalue(
        params.len(),
        |v| {
            let shift = |sign: f64| {
                let vals: Vec<f64> = params
                    .values()
                    .iter()
                    .zip(v)
                    .map(|(p, d)| p + sign * h * d)
                    .collect();
                params
                    .with_values(vals)
                    .and_then(|p| gradient(&p, inputs, targets, 0.0))
            };
            match (shift(1.0), shift(-1.0)) {
                (Ok(a), Ok(b)) => a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect(),
                (Err(e), _) | (_, Err(e)) => {
                    failure.get_or_insert(e);
                    vec![0.0; v.len()]
                }
            }
        },
        100,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// `s(x) = 1 − Σ_c f_c(x)²` under a reference model trained on true labels.
pub fn closeness_to_boundary(reference: &ModelParams, x: &[f64]) -> Result<f64> {
    let p = model::forward(reference, x)?;
    Ok(1.0 - p.iter().map(|v| v * v).sum::<f64>())
}

fn check_nonneg(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(
            "bound inputs must be finite and >= 0".into(),
        ));
    }
    Ok(())
}

/// Gap bound `2·max‖G_a‖·E[Δ] + ½·max β_a·E[Δ²]`.
pub fn bound_thm2(max_grad_norm: f64, max_beta: f64, dev: &DeviationStats) -> Result<f64> {
    check_nonneg(&[max_grad_norm, max_beta])?;
    Ok(2.0 * max_grad_norm * dev.first_moment + 0.5 * max_beta * dev.second_moment)
}

/// Per-group excess-risk bound `‖G_a‖·E[Δ] + ½·β_a·E[Δ²]`.
pub fn bound_lemma_b1(grad_norm: f64, beta: f64, dev: &DeviationStats) -> Result<f64> {
    check_nonneg(&[grad_norm, beta])?;
    Ok(grad_norm * dev.first_moment + 0.5 * beta * dev.second_moment)
}

fn check_bound_args(flip_probs: &[f64], grad_bounds: &[f64], m: usize, lambda: f64) -> Result<()> {
    if flip_probs.len() != grad_bounds.len() {
        return Err(Error::LengthMismatch {
            left: flip_probs.len(),
            right: grad_bounds.len(),
        });
    }
    if m == 0 || !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(
            "bounds need m >= 1 and lambda > 0".into(),
        ));
    }
    check_nonneg(flip_probs)?;
    check_nonneg(grad_bounds)
}

/// Deviation bound for decomposable losses:
/// `(|c| / (mλ))·Σ_x p_x·‖G_x^max‖`.
pub fn bound_thm3(
    flip_probs: &[f64],
    grad_bounds: &[f64],
    c: f64,
    m: usize,
    lambda: f64,
) -> Result<f64> {
    check_bound_args(flip_probs, grad_bounds, m, lambda)?;
    let s: f64 = flip_probs.iter().zip(grad_bounds).map(|(p, g)| p * g).sum();
    Ok(c.abs() / (m as f64 * lambda) * s)
}

/// Second-moment bound for decomposable losses:
/// `(c² / (mλ²))·Σ_x p_x²·‖G_x^max‖²`.
pub fn bound_second_moment(
    flip_probs: &[f64],
    grad_bounds: &[f64],
    c: f64,
    m: usize,
    lambda: f64,
) -> Result<f64> {
    check_bound_args(flip_probs, grad_bounds, m, lambda)?;
    let s: f64 = flip_probs
        .iter()
        .zip(grad_bounds)
        .map(|(p, g)| (p * g).powi(2))
        .sum();
    Ok(c * c / (m as f64 * lambda * lambda) * s)
}

fn input_norms(inputs: &[&[f64]]) -> Vec<f64> {
    inputs.iter().map(|x| norm(x)).collect()
}

/// Logistic-regression deviation bound `(1/(mλ))·Σ_x p_x·‖x‖`.
pub fn bound_cor1(flip_probs: &[f64], inputs: &[&[f64]], m: usize, lambda: f64) -> Result<f64> {
    bound_thm3(flip_probs, &input_norms(inputs), 1.0, m, lambda)
}

/// Logistic-regression second-moment bound `(1/(mλ²))·Σ_x p_x²·‖x‖²`.
pub fn bound_cor2(flip_probs: &[f64], inputs: &[&[f64]], m: usize, lambda: f64) -> Result<f64> {
    bound_second_moment(flip_probs, &input_norms(inputs), 1.0, m, lambda)
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Undefined(
            "spearman needs at least two points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::Undefined("spearman input contains NaN".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("spearman of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
