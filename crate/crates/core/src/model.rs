//! Differentiable classifiers and their losses.
//!
//! Two architectures are supported:
//!
//! * `logreg`: a bias-free linear model. With two classes it uses a single
//!   weight vector `θ` and `P(y = 1 | x) = sigmoid(θᵀx)`; with more classes
//!   it is multinomial with one weight row per class.
//! * `mlp2`: two ReLU hidden layers with biases and a softmax output.
//!
//! Parameters live in one flat vector so that deviations between models are
//! plain Euclidean distances.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numeric::{argmax, dot, log_softmax, sigmoid, softmax, softplus};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Logreg,
    Mlp2 { hidden: [usize; 2] },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Logreg => "logreg",
            Architecture::Mlp2 { .. } => "mlp2",
        }
    }

    /// Tensor shapes, weights as `[rows, cols]` and biases as `[len]`.
    pub fn shapes(&self, input_dim: usize, num_classes: usize) -> Vec<Vec<usize>> {
        match *self {
            Architecture::Logreg if num_classes == 2 => vec![vec![1, input_dim]],
            Architecture::Logreg => vec![vec![num_classes, input_dim]],
            Architecture::Mlp2 { hidden: [h1, h2] } => vec![
                vec![h1, input_dim],
                vec![h1],
                vec![h2, h1],
                vec![h2],
                vec![num_classes, h2],
                vec![num_classes],
            ],
        }
    }

    pub fn param_count(&self, input_dim: usize, num_classes: usize) -> usize {
        self.shapes(input_dim, num_classes)
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn from_values(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "a classifier needs at least two classes, got {num_classes}"
            )));
        }
        if input_dim < 1 {
            return Err(Error::InvalidParameter("input_dim must be >= 1".into()));
        }
        if let Architecture::Mlp2 { hidden } = arch {
            if hidden.contains(&0) {
                return Err(Error::InvalidParameter(
                    "hidden layer widths must be >= 1".into(),
                ));
            }
        }
        let expected = arch.param_count(input_dim, num_classes);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("parameters must be finite".into()));
        }
        Ok(ModelParams {
            arch,
            input_dim,
            num_classes,
            values,
        })
    }

    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Result<Self> {
        let n = arch.param_count(input_dim, num_classes);
        Self::from_values(arch, input_dim, num_classes, vec![0.0; n])
    }

    /// Zeros for `logreg`; for `mlp2`, weights uniform in
    /// `±sqrt(6 / (fan_in + fan_out))` drawn from `seed` and zero biases.
    pub fn init(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self::zeros(arch, input_dim, num_classes)?;
        if let Architecture::Mlp2 { .. } = arch {
            let mut rng = SeedStream::new(seed).child("init").rng();
            let mut offset = 0;
            for shape in arch.shapes(input_dim, num_classes) {
                let len: usize = shape.iter().product();
                if let [rows, cols] = shape[..] {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    for v in &mut p.values[offset..offset + len] {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                offset += len;
            }
        }
        Ok(p)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.arch.shapes(self.input_dim, self.num_classes)
    }

    /// Copy with the given parameter vector.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.arch, self.input_dim, self.num_classes, values)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn is_binary_logreg(&self) -> bool {
        self.arch == Architecture::Logreg && self.num_classes == 2
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Class logits. Binary logistic regression reports `[0, θᵀx]`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(match self.arch {
            Architecture::Logreg if self.num_classes == 2 => vec![0.0, dot(&self.values, x)],
            Architecture::Logreg => self
                .values
                .chunks(self.input_dim)
                .map(|row| dot(row, x))
                .collect(),
            Architecture::Mlp2 { .. } => self.mlp_forward(x).logits,
        })
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Serializes to `{arch, shapes, values}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn mlp_layers(&self) -> MlpView<'_> {
        let Architecture::Mlp2 { hidden: [h1, h2] } = self.arch else {
            unreachable!("mlp_layers on a non-mlp model")
        };
        let d = self.input_dim;
        let c = self.num_classes;
        let (w1, rest) = self.values.split_at(h1 * d);
        let (b1, rest) = rest.split_at(h1);
        let (w2, rest) = rest.split_at(h2 * h1);
        let (b2, rest) = rest.split_at(h2);
        let (w3, b3) = rest.split_at(c * h2);
        MlpView {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            d,
            h1,
            h2,
        }
    }

    fn mlp_forward(&self, x: &[f64]) -> MlpActivations {
        let v = self.mlp_layers();
        let a1: Vec<f64> = (0..v.h1)
            .map(|j| (dot(&v.w1[j * v.d..(j + 1) * v.d], x) + v.b1[j]).max(0.0))
            .collect();
        let a2: Vec<f64> = (0..v.h2)
            .map(|j| (dot(&v.w2[j * v.h1..(j + 1) * v.h1], &a1) + v.b2[j]).max(0.0))
            .collect();
        let logits = (0..self.num_classes)
            .map(|c| dot(&v.w3[c * v.h2..(c + 1) * v.h2], &a2) + v.b3[c])
            .collect();
        MlpActivations { a1, a2, logits }
    }

    /// Adds `weight * ∇ℓ(x, target)` to `out`.
    pub(crate) fn accumulate_gradient(
        &self,
        x: &[f64],
        target: &LabelTarget,
        weight: f64,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_input(x)?;
        target.validate(self.num_classes)?;
        let mass = target.mass();
        match self.arch {
            Architecture::Logreg if self.num_classes == 2 => {
                let p1 = sigmoid(dot(&self.values, x));
                let r = weight * (p1 * mass - target.weight(1));
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += r * xi;
                }
            }
            Architecture::Logreg => {
                let probs = softmax(&self.logits(x)?);
                for (c, (row, p)) in out.chunks_mut(self.input_dim).zip(&probs).enumerate() {
                    let r = weight * (p * mass - target.weight(c));
                    for (o, xi) in row.iter_mut().zip(x) {
                        *o += r * xi;
                    }
                }
            }
            Architecture::Mlp2 { hidden: [h1, h2] } => {
                let act = self.mlp_forward(x);
                let v = self.mlp_layers();
                let d = self.input_dim;
                let c_n = self.num_classes;
                let probs = softmax(&act.logits);
                let delta3: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(c, p)| weight * (p * mass - target.weight(c)))
                    .collect();
                let mut delta2 = vec![0.0; h2];
                for (c, d3) in delta3.iter().enumerate() {
                    for (d2, w) in delta2.iter_mut().zip(&v.w3[c * h2..(c + 1) * h2]) {
                        *d2 += w * d3;
                    }
                }
                for (d2, a) in delta2.iter_mut().zip(&act.a2) {
                    if *a <= 0.0 {
                        *d2 = 0.0;
                    }
                }
                let mut delta1 = vec![0.0; h1];
                for (j, d2) in delta2.iter().enumerate() {
                    for (d1, w) in delta1.iter_mut().zip(&v.w2[j * h1..(j + 1) * h1]) {
                        *d1 += w * d2;
                    }
                }
                for (d1, a) in delta1.iter_mut().zip(&act.a1) {
                    if *a <= 0.0 {
                        *d1 = 0.0;
                    }
                }

                let (gw1, rest) = out.split_at_mut(h1 * d);
                let (gb1, rest) = rest.split_at_mut(h1);
                let (gw2, rest) = rest.split_at_mut(h2 * h1);
                let (gb2, rest) = rest.split_at_mut(h2);
                let (gw3, gb3) = rest.split_at_mut(c_n * h2);
                for (j, d1) in delta1.iter().enumerate() {
                    gb1[j] += d1;
                    for (g, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += d1 * xi;
                    }
                }
                for (j, d2) in delta2.iter().enumerate() {
                    gb2[j] += d2;
                    for (g, a) in gw2[j * h1..(j + 1) * h1].iter_mut().zip(&act.a1) {
                        *g += d2 * a;
                    }
                }
                for (c, d3) in delta3.iter().enumerate() {
                    gb3[c] += d3;
                    for (g, a) in gw3[c * h2..(c + 1) * h2].iter_mut().zip(&act.a2) {
                        *g += d3 * a;
                    }
                }
            }
        }
        Ok(())
    }
}

struct MlpView<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: &'a [f64],
    d: usize,
    h1: usize,
    h2: usize,
}

struct MlpActivations {
    a1: Vec<f64>,
    a2: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    arch: String,
    shapes: Vec<Vec<usize>>,
    values: Vec<f64>,
}

impl Serialize for ModelParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsJson {
            arch: self.arch.name().to_string(),
            shapes: self.shapes(),
            values: self.values.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ParamsJson::deserialize(deserializer)?;
        let bad = |m: &str| D::Error::custom(format!("invalid model shapes: {m}"));
        let (arch, input_dim, num_classes) = match (raw.arch.as_str(), &raw.shapes[..]) {
            ("logreg", [w]) if w.len() == 2 => {
                let classes = if w[0] == 1 { 2 } else { w[0] };
                (Architecture::Logreg, w[1], classes)
            }
            ("mlp2", [w1, _, w2, _, w3, _]) if w1.len() == 2 && w2.len() == 2 && w3.len() == 2 => (
                Architecture::Mlp2 {
                    hidden: [w1[0], w2[0]],
                },
                w1[1],
                w3[0],
            ),
            ("logreg" | "mlp2", _) => return Err(bad("wrong tensor count")),
            (other, _) => return Err(D::Error::custom(format!("unknown architecture '{other}'"))),
        };
        if arch.shapes(input_dim, num_classes) != raw.shapes {
            return Err(bad("inconsistent layer sizes"));
        }
        ModelParams::from_values(arch, input_dim, num_classes, raw.values)
            .map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Training target for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTarget {
    Hard(usize),
    /// Probability vector over classes.
    Soft(Vec<f64>),
}

impl LabelTarget {
    /// Checked constructor for soft targets.
    pub fn soft(probs: Vec<f64>) -> Result<Self> {
        let t = LabelTarget::Soft(probs);
        t.validate_probabilities()?;
        Ok(t)
    }

    fn validate_probabilities(&self) -> Result<()> {
        if let LabelTarget::Soft(p) = self {
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParameter(
                    "soft target entries must be finite and >= 0".into(),
                ));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "soft target sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            LabelTarget::Hard(c) if *c >= num_classes => Err(Error::InvalidParameter(format!(
                "label {c} outside [0, {num_classes})"
            ))),
            LabelTarget::Hard(_) => Ok(()),
            LabelTarget::Soft(p) if p.len() != num_classes => Err(Error::DimensionMismatch {
                expected: num_classes,
                found: p.len(),
            }),
            LabelTarget::Soft(_) => self.validate_probabilities(),
        }
    }

    /// Weight the target assigns to class `c`.
    pub fn weight(&self, c: usize) -> f64 {
        match self {
            LabelTarget::Hard(y) => f64::from(u8::from(*y == c)),
            LabelTarget::Soft(p) => p.get(c).copied().unwrap_or(0.0),
        }
    }

    fn mass(&self) -> f64 {
        match self {
            LabelTarget::Hard(_) => 1.0,
            LabelTarget::Soft(p) => p.iter().sum(),
        }
    }

    /// Most likely class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        match self {
            LabelTarget::Hard(y) => *y,
            LabelTarget::Soft(p) => argmax(p),
        }
    }
}

/// Class probabilities `f̄_θ(x)`.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if params.is_binary_logreg() {
        params.check_input(x)?;
        let p1 = sigmoid(dot(params.values(), x));
        return Ok(vec![1.0 - p1, p1]);
    }
    Ok(softmax(&params.logits(x)?))
}

fn log_probs(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if params.is_binary_logreg() {
        params.check_input(x)?;
        let z = dot(params.values(), x);
        return Ok(vec![-softplus(z), -softplus(-z)]);
    }
    Ok(log_softmax(&params.logits(x)?))
}

/// Cross-entropy `Σ_c t_c · (−log f̄_c(x))`; a hard target is the one-hot
/// case. Classes with zero weight do not contribute.
pub fn loss(params: &ModelParams, x: &[f64], target: &LabelTarget) -> Result<f64> {
    target.validate(params.num_classes())?;
    let lp = log_probs(params, x)?;
    Ok(match target {
        LabelTarget::Hard(y) => -lp[*y],
        LabelTarget::Soft(t) => t
            .iter()
            .zip(&lp)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, l)| -w * l)
            .sum(),
    })
}

/// Misclassification indicator against the target's most likely class.
pub fn zero_one_loss(params: &ModelParams, x: &[f64], target: &LabelTarget) -> Result<f64> {
    target.validate(params.num_classes())?;
    Ok(f64::from(u8::from(params.predict(x)? != target.argmax())))
}

/// Gradient of the unregularized loss at one sample.
pub fn sample_gradient(params: &ModelParams, x: &[f64], target: &LabelTarget) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.len()];
    params.accumulate_gradient(x, target, 1.0, &mut g)?;
    Ok(g)
}

fn check_batch(inputs: &[&[f64]], targets: &[LabelTarget]) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
        });
    }
    Ok(())
}

/// Gradient of `mean_i ℓ(x_i, t_i) + λ‖θ‖²`. An empty batch leaves only the
/// regularizer term `2λθ`.
pub fn gradient(
    params: &ModelParams,
    inputs: &[&[f64]],
    targets: &[LabelTarget],
    lambda: f64,
) -> Result<Vec<f64>> {
    check_batch(inputs, targets)?;
    let mut g: Vec<f64> = params.values().iter().map(|v| 2.0 * lambda * v).collect();
    if inputs.is_empty() {
        return Ok(g);
    }
    let w = 1.0 / inputs.len() as f64;
    for (x, t) in inputs.iter().zip(targets) {
        params.accumulate_gradient(x, t, w, &mut g)?;
    }
    Ok(g)
}

/// `mean_i ℓ(x_i, t_i) + λ‖θ‖²`.
pub fn objective(
    params: &ModelParams,
    inputs: &[&[f64]],
    targets: &[LabelTarget],
    lambda: f64,
) -> Result<f64> {
    check_batch(inputs, targets)?;
    let reg = lambda * dot(params.values(), params.values());
    if inputs.is_empty() {
        return Ok(reg);
    }
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += loss(params, x, t)?;
    }
    Ok(total / inputs.len() as f64 + reg)
}

/// A loss of the form `ℓ = z(h_θ(x)) + c · y · h_θ(x)` for binary `y`.
pub trait DecomposableLoss {
    /// `h_θ(x)`.
    fn component(&self, theta: &[f64], x: &[f64]) -> f64;
    /// The constant `c`.
    fn constant(&self) -> f64;
    /// The outer function `z`.
    fn outer(&self, h: f64) -> f64;
    /// `max_θ ‖∇_θ h_θ(x)‖`.
    fn max_component_gradient_norm(&self, x: &[f64]) -> f64;

    fn reconstruct(&self, theta: &[f64], x: &[f64], y: f64) -> f64 {
        let h = self.component(theta, x);
        self.outer(h) + self.constant() * y * h
    }
}

/// Binary logistic loss with `h = −θᵀx`, `c = 1`, `z(h) = −log(eʰ / (1 + eʰ))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticDecomposition;

impl DecomposableLoss for LogisticDecomposition {
    fn component(&self, theta: &[f64], x: &[f64]) -> f64 {
        -dot(theta, x)
    }

    fn constant(&self) -> f64 {
        1.0
    }

    fn outer(&self, h: f64) -> f64 {
        softplus(-h)
    }

    fn max_component_gradient_norm(&self, x: &[f64]) -> f64 {
        crate::numeric::norm(x)
    }
}
