//! Model specifications, losses, gradients, and the local training step.
//!
//! Three model kinds are supported. Linear and multinomial logistic
//! regression with a positive l2 coefficient are L-smooth and strongly
//! convex (the convexity modulus is at least the l2 coefficient); the
//! one-hidden-layer tanh network is not convex and is only used for
//! qualitative runs.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;

use crate::dataset::{Dataset, Label, LabeledExample};
use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    MlpOneHidden,
}

/// Shape and regularization of the model.
///
/// Parameter layout per kind:
/// - linear regression: `[w; input_dim]`
/// - logistic regression: class-major `[w_c; input_dim]` for c in `0..classes`
/// - one-hidden-layer MLP: `W1 (hidden x input)`, `b1 (hidden)`,
///   `W2 (classes x hidden)`, `b2 (classes)`, concatenated in that order.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub classes: usize,
    pub hidden_units: usize,
    pub l2: f64,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize, l2: f64) -> Self {
        ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim,
            classes: 0,
            hidden_units: 0,
            l2,
        }
    }

    pub fn logistic_regression(input_dim: usize, classes: usize, l2: f64) -> Self {
        ModelSpec {
            kind: ModelKind::LogisticRegression,
            input_dim,
            classes,
            hidden_units: 0,
            l2,
        }
    }

    pub fn mlp(input_dim: usize, hidden_units: usize, classes: usize, l2: f64) -> Self {
        ModelSpec {
            kind: ModelKind::MlpOneHidden,
            input_dim,
            classes,
            hidden_units,
            l2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidParam("input_dim must be >= 1".into()));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return Err(Error::InvalidParam("l2 must be finite and >= 0".into()));
        }
        match self.kind {
            ModelKind::LinearRegression => Ok(()),
            ModelKind::LogisticRegression => {
                if self.classes < 2 {
                    return Err(Error::InvalidParam(
                        "logistic regression needs classes >= 2".into(),
                    ));
                }
                Ok(())
            }
            ModelKind::MlpOneHidden => {
                if self.classes < 2 || self.hidden_units == 0 {
                    return Err(Error::InvalidParam(
                        "mlp needs classes >= 2 and hidden_units >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression => self.input_dim,
            ModelKind::LogisticRegression => self.classes * self.input_dim,
            ModelKind::MlpOneHidden => {
                self.hidden_units * self.input_dim
                    + self.hidden_units
                    + self.classes * self.hidden_units
                    + self.classes
            }
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self.kind, ModelKind::LinearRegression)
    }

    /// True when per-client losses are strongly convex (modulus `l2`).
    pub fn is_convex(&self) -> bool {
        !matches!(self.kind, ModelKind::MlpOneHidden)
    }
}

fn real_label(example: &LabeledExample) -> Result<f64> {
    match example.label {
        Label::Real(y) => Ok(y),
        Label::Class(_) => Err(Error::LabelKind("regression model, class label")),
    }
}

fn class_label(example: &LabeledExample, classes: usize) -> Result<usize> {
    match example.label {
        Label::Class(c) if c < classes => Ok(c),
        Label::Class(_) => Err(Error::LabelKind("class index out of range")),
        Label::Real(_) => Err(Error::LabelKind("classification model, real label")),
    }
}

fn check_example_dim(spec: &ModelSpec, example: &LabeledExample) -> Result<()> {
    if example.features.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: example.features.len(),
        });
    }
    Ok(())
}

/// Class logits for one example; also returns the hidden activations for the
/// MLP so backprop can reuse them.
fn logits(spec: &ModelSpec, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match spec.kind {
        ModelKind::LinearRegression => unreachable!("no logits for regression"),
        ModelKind::LogisticRegression => {
            let d = spec.input_dim;
            let z = (0..spec.classes)
                .map(|c| {
                    params[c * d..(c + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, xi)| w * xi)
                        .sum()
                })
                .collect();
            (z, Vec::new())
        }
        ModelKind::MlpOneHidden => {
            let (d, h, c) = (spec.input_dim, spec.hidden_units, spec.classes);
            let w1 = &params[..h * d];
            let b1 = &params[h * d..h * d + h];
            let w2 = &params[h * d + h..h * d + h + c * h];
            let b2 = &params[h * d + h + c * h..];
            let hidden: Vec<f64> = (0..h)
                .map(|j| {
                    let pre: f64 = w1[j * d..(j + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, xi)| w * xi)
                        .sum::<f64>()
                        + b1[j];
                    pre.tanh()
                })
                .collect();
            let z = (0..c)
                .map(|k| {
                    w2[k * h..(k + 1) * h]
                        .iter()
                        .zip(&hidden)
                        .map(|(w, hj)| w * hj)
                        .sum::<f64>()
                        + b2[k]
                })
                .collect();
            (z, hidden)
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn example_loss(spec: &ModelSpec, params: &[f64], example: &LabeledExample) -> Result<f64> {
    check_example_dim(spec, example)?;
    match spec.kind {
        ModelKind::LinearRegression => {
            let y = real_label(example)?;
            let pred: f64 = params
                .iter()
                .zip(&example.features)
                .map(|(w, x)| w * x)
                .sum();
            Ok(0.5 * (pred - y) * (pred - y))
        }
        ModelKind::LogisticRegression | ModelKind::MlpOneHidden => {
            let y = class_label(example, spec.classes)?;
            let (z, _) = logits(spec, params, &example.features);
            Ok(log_sum_exp(&z) - z[y])
        }
    }
}

fn mean_loss_over(spec: &ModelSpec, params: &ParamVector, batch: &[&LabeledExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.check_dim(spec.param_dim())?;
    let mut total = 0.0;
    for example in batch {
        total += example_loss(spec, params.as_slice(), example)?;
    }
    let value = total / batch.len() as f64 + 0.5 * spec.l2 * params.norm_sq();
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "loss" });
    }
    Ok(value)
}

/// Mean per-example loss plus `(l2/2)‖params‖²`.
pub fn loss(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    let refs: Vec<&LabeledExample> = data.examples().iter().collect();
    mean_loss_over(spec, params, &refs)
}

fn accumulate_example_grad(
    spec: &ModelSpec,
    params: &[f64],
    example: &LabeledExample,
    grad: &mut [f64],
) -> Result<()> {
    check_example_dim(spec, example)?;
    let x = &example.features;
    match spec.kind {
        ModelKind::LinearRegression => {
            let y = real_label(example)?;
            let pred: f64 = params.iter().zip(x).map(|(w, xi)| w * xi).sum();
            let r = pred - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += r * xi;
            }
        }
        ModelKind::LogisticRegression => {
            let y = class_label(example, spec.classes)?;
            let d = spec.input_dim;
            let (z, _) = logits(spec, params, x);
            let lse = log_sum_exp(&z);
            for c in 0..spec.classes {
                let p = (z[c] - lse).exp();
                let delta = p - if c == y { 1.0 } else { 0.0 };
                for (g, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += delta * xi;
                }
            }
        }
        ModelKind::MlpOneHidden => {
            let y = class_label(example, spec.classes)?;
            let (d, h, c) = (spec.input_dim, spec.hidden_units, spec.classes);
            let (z, hidden) = logits(spec, params, x);
            let lse = log_sum_exp(&z);
            let delta_out: Vec<f64> = (0..c)
                .map(|k| (z[k] - lse).exp() - if k == y { 1.0 } else { 0.0 })
                .collect();
            let w2 = &params[h * d + h..h * d + h + c * h];
            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            for k in 0..c {
                for j in 0..h {
                    gw2[k * h + j] += delta_out[k] * hidden[j];
                }
                gb2[k] += delta_out[k];
            }
            for j in 0..h {
                let upstream: f64 = (0..c).map(|k| delta_out[k] * w2[k * h + j]).sum();
                let delta_pre = upstream * (1.0 - hidden[j] * hidden[j]);
                for (g, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *g += delta_pre * xi;
                }
                gb1[j] += delta_pre;
            }
        }
    }
    Ok(())
}

fn batch_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[&LabeledExample],
) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.check_dim(spec.param_dim())?;
    let mut grad = vec![0.0; spec.param_dim()];
    for example in batch {
        accumulate_example_grad(spec, params.as_slice(), example, &mut grad)?;
    }
    let inv = 1.0 / batch.len() as f64;
    for (g, w) in grad.iter_mut().zip(params.as_slice()) {
        *g = *g * inv + spec.l2 * w;
    }
    ParamVector::new(grad)
}

/// Gradient of the batch-mean loss, including the l2 term.
pub fn gradient(spec: &ModelSpec, params: &ParamVector, batch: &Dataset) -> Result<ParamVector> {
    let refs: Vec<&LabeledExample> = batch.examples().iter().collect();
    batch_gradient(spec, params, &refs)
}

/// Fraction of examples whose argmax logit matches the class label.
/// Logit ties resolve to the lowest class index.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    if !spec.is_classification() {
        return Err(Error::NotClassification);
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.check_dim(spec.param_dim())?;
    let mut correct = 0usize;
    for example in data.examples() {
        check_example_dim(spec, example)?;
        let y = class_label(example, spec.classes)?;
        let (z, _) = logits(spec, params.as_slice(), &example.features);
        let mut best = 0usize;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Learning-rate schedule across communication rounds (1-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    /// Fixed rate for the whole run.
    Constant,
    /// Multiply by `factor` once per `interval` rounds.
    DecayEvery { factor: f64, interval: usize },
    /// `beta / t`, the schedule used for convergence experiments. Ignores
    /// the base rate; round 0 state uses `beta`.
    InverseTime { beta: f64 },
}

impl LrSchedule {
    pub fn rate_at(&self, base: f64, round: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::DecayEvery { factor, interval } => {
                let decays = round.saturating_sub(1) / interval.max(1);
                base * factor.powi(decays as i32)
            }
            LrSchedule::InverseTime { beta } => beta / round.max(1) as f64,
        }
    }
}

/// Per-round local training configuration. The learning rate here is the
/// already-resolved rate for the round being trained.
#[derive(Clone, Copy, Debug)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// FedProx proximal coefficient; 0 recovers plain FedAvg local SGD.
    pub proximal_mu: f64,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParam("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParam("learning_rate must be > 0".into()));
        }
        if self.proximal_mu < 0.0 {
            return Err(Error::InvalidParam("proximal_mu must be >= 0".into()));
        }
        Ok(())
    }
}

/// Run `epochs` passes of mini-batch SGD over `data`, starting from
/// `params_in`.
///
/// Each epoch shuffles the dataset with `rng` and slices it into batches of
/// `batch_size` (the trailing batch may be short). When `proximal_mu > 0`
/// the step minimizes `F_k(w) + (mu/2)‖w − anchor‖²`, where `anchor` is the
/// broadcast global model for the round.
pub fn local_sgd(
    spec: &ModelSpec,
    params_in: &ParamVector,
    data: &Dataset,
    cfg: &LocalTrainConfig,
    anchor: &ParamVector,
    rng: &mut ChaCha12Rng,
) -> Result<ParamVector> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params_in.check_dim(spec.param_dim())?;
    anchor.check_dim(spec.param_dim())?;

    let mut w = params_in.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> =
                chunk.iter().map(|&i| &data.examples()[i]).collect();
            let grad = batch_gradient(spec, &w, &batch)?;
            let mut next = Vec::with_capacity(w.dim());
            for i in 0..w.dim() {
                let mut g = grad[i];
                if cfg.proximal_mu > 0.0 {
                    g += cfg.proximal_mu * (w[i] - anchor[i]);
                }
                next.push(w[i] - cfg.learning_rate * g);
            }
            w = ParamVector::new(next)?;
        }
    }
    Ok(w)
}
