//! Regularized empirical risk minimization.
//!
//! The objective is `mean_i ℓ(x_i, t_i) + λ‖θ‖²`. Logistic regression is
//! trained by full-batch gradient descent until the gradient norm drops
//! below the tolerance; networks run a fixed budget of SGD epochs or GD
//! iterations.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{gradient, Architecture, LabelTarget, ModelParams};
use crate::numeric::{dot, norm, top_eigenvalue};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    GradientDescent,
    Sgd {
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        #[serde(default = "default_epochs")]
        epochs: usize,
    },
}

fn default_batch_size() -> usize {
    32
}

fn default_epochs() -> usize {
    100
}

fn default_max_iters() -> usize {
    200_000
}

fn default_grad_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Step size. `None` picks `1/L` for logistic regression full-batch
    /// descent, where `L` bounds the Hessian, and `1e-4` otherwise.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Step size used when none is configured and no curvature bound applies.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

impl TrainConfig {
    /// Full-batch descent to gradient norm `1e-8`.
    pub fn gradient_descent(lambda: f64) -> Self {
        TrainConfig {
            lambda,
            optimizer: Optimizer::GradientDescent,
            learning_rate: None,
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            seed: 0,
        }
    }

    /// Minibatch SGD with batch size 32 and step `1e-4`.
    pub fn sgd(lambda: f64, epochs: usize) -> Self {
        TrainConfig {
            lambda,
            optimizer: Optimizer::Sgd {
                batch_size: default_batch_size(),
                epochs,
            },
            learning_rate: Some(DEFAULT_LEARNING_RATE),
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_learning_rate(mut self, eta: f64) -> Self {
        self.learning_rate = Some(eta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if let Some(eta) = self.learning_rate {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "learning rate must be > 0, got {eta}"
                )));
            }
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gradient tolerance must be > 0, got {}",
                self.grad_tol
            )));
        }
        if let Optimizer::Sgd { batch_size, .. } = self.optimizer {
            if batch_size == 0 {
                return Err(Error::InvalidParameter("batch size must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Upper bound on the Hessian spectral norm of the logistic objective:
/// `κ·λmax(XᵀX/m) + 2λ`, with `κ = 1/4` for two classes and `1/2` otherwise.
fn logreg_lipschitz(inputs: &[&[f64]], num_classes: usize, lambda: f64) -> f64 {
    let d = inputs.first().map_or(0, |x| x.len());
    let m = inputs.len().max(1) as f64;
    let gram = top_eigenvalue(
        d,
        |v| {
            let mut out = vec![0.0; d];
            for x in inputs {
                let s = dot(x, v) / m;
                for (o, xi) in out.iter_mut().zip(x.iter()) {
                    *o += s * xi;
                }
            }
            out
        },
        200,
    );
    let kappa = if num_classes == 2 { 0.25 } else { 0.5 };
    // Power iteration approaches from below; pad slightly.
    kappa * gram * 1.01 + 2.0 * lambda
}

/// Minimizes the regularized empirical risk starting from `init`.
pub fn train_erm(
    inputs: &[&[f64]],
    targets: &[LabelTarget],
    cfg: &TrainConfig,
    init: &ModelParams,
) -> Result<ModelParams> {
    cfg.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    for t in targets {
        t.validate(init.num_classes())?;
    }
    let convex = init.arch() == Architecture::Logreg;
    match cfg.optimizer {
        Optimizer::GradientDescent if convex => {
            if cfg.lambda <= 0.0 {
                return Err(Error::InvalidParameter(
                    "full-batch logistic regression needs lambda > 0".into(),
                ));
            }
            let eta = cfg
                .learning_rate
                .unwrap_or_else(|| 1.0 / logreg_lipschitz(inputs, init.num_classes(), cfg.lambda));
            descend_to_tolerance(inputs, targets, cfg, init, eta)
        }
        Optimizer::GradientDescent => {
            let eta = cfg.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE);
            let mut params = init.clone();
            for _ in 0..cfg.max_iters {
                let g = gradient(&params, inputs, targets, cfg.lambda)?;
                step(&mut params, &g, eta);
            }
            Ok(params)
        }
        Optimizer::Sgd { batch_size, epochs } => {
            let eta = cfg.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE);
            let stream = SeedStream::new(cfg.seed).child("sgd");
            let mut params = init.clone();
            let mut order: Vec<usize> = (0..inputs.len()).collect();
            for epoch in 0..epochs {
                order.sort_unstable();
                order.shuffle(&mut stream.index(epoch as u64).rng());
                for chunk in order.chunks(batch_size) {
                    let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i]).collect();
                    let ts: Vec<LabelTarget> = chunk.iter().map(|&i| targets[i].clone()).collect();
                    let g = gradient(&params, &xs, &ts, cfg.lambda)?;
                    step(&mut params, &g, eta);
                }
            }
            Ok(params)
        }
    }
}

fn step(params: &mut ModelParams, g: &[f64], eta: f64) {
    for (v, gi) in params.values_mut().iter_mut().zip(g) {
        *v -= eta * gi;
    }
}

fn descend_to_tolerance(
    inputs: &[&[f64]],
    targets: &[LabelTarget],
    cfg: &TrainConfig,
    init: &ModelParams,
    eta: f64,
) -> Result<ModelParams> {
    let mut params = init.clone();
    for _ in 0..cfg.max_iters {
        let g = gradient(&params, inputs, targets, cfg.lambda)?;
        let grad_norm = norm(&g);
        if grad_norm <= cfg.grad_tol {
            return Ok(params);
        }
        if !grad_norm.is_finite() {
            break;
        }
        step(&mut params, &g, eta);
    }
    let grad_norm = norm(&gradient(&params, inputs, targets, cfg.lambda)?);
    if grad_norm <= cfg.grad_tol {
        return Ok(params);
    }
    Err(Error::Convergence {
        iterations: cfg.max_iters,
        grad_norm,
    })
}

/// Trains on a dataset's own labels.
pub fn train_on_dataset(
    data: &Dataset,
    cfg: &TrainConfig,
    init: &ModelParams,
) -> Result<ModelParams> {
    let targets: Vec<LabelTarget> = data.labels().into_iter().map(LabelTarget::Hard).collect();
    train_erm(&data.inputs(), &targets, cfg, init)
}
