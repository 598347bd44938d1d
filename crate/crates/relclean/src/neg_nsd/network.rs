//! One-hidden-layer network with a classification head and a confidence head,
//! trained by mini-batch gradient descent with hand-written backpropagation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::objective::{sample_loss, sample_loss_grad};
use crate::error::{Error, Result};

const MODEL_MAGIC: &str = "relclean-confidence-model";
const MODEL_VERSION: u32 = 1;
const CONFIDENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// `exp(-a²)` of a linear pre-activation.
    Gaussian,
    /// `exp(-e^β ‖z - μ‖²)` around a learned center `μ` (the unit's weight
    /// row) with learned log-precision `β` (its bias). Decays to zero in every
    /// direction away from the centers.
    Radial,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Gaussian => (-a * a).exp(),
            Activation::Radial => (-a).exp(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Gaussian => -2.0 * a * h,
            Activation::Radial => -h,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Gaussian => "gaussian",
            Activation::Radial => "radial",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "gaussian" => Some(Activation::Gaussian),
            "radial" => Some(Activation::Radial),
            _ => None,
        }
    }
}

/// Architecture and initialisation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub activation: Activation,
    /// Initial bias of the confidence logit.
    pub confidence_bias: f64,
}

/// Parameter layout inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    input: usize,
    hidden: usize,
    classes: usize,
}

impl Layout {
    fn w_hidden(&self) -> usize {
        0
    }
    fn b_hidden(&self) -> usize {
        self.hidden * self.input
    }
    fn w_class(&self) -> usize {
        self.b_hidden() + self.hidden
    }
    fn b_class(&self) -> usize {
        self.w_class() + self.classes * self.hidden
    }
    fn w_conf(&self) -> usize {
        self.b_class() + self.classes
    }
    fn b_conf(&self) -> usize {
        self.w_conf() + self.hidden
    }
    fn len(&self) -> usize {
        self.b_conf() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceModel {
    layout: Layout,
    activation: Activation,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    params: Vec<f64>,
    class_weights: Vec<f64>,
    lambda: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    pub probs: Vec<f64>,
    pub confidence: f64,
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl ConfidenceModel {
    /// Randomly initialised model. Inputs are standardised with the per-column
    /// mean and standard deviation of `standardize_on`.
    pub fn init(
        shape: NetworkShape,
        standardize_on: &[&[f64]],
        class_weights: Vec<f64>,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if shape.input_dim == 0 || shape.hidden == 0 || shape.n_classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "network dimensions must be positive, got {}x{}x{}",
                shape.input_dim, shape.hidden, shape.n_classes
            )));
        }
        if class_weights.len() != shape.n_classes {
            return Err(Error::InvalidConfig(format!(
                "{} class weights for {} classes",
                class_weights.len(),
                shape.n_classes
            )));
        }
        let layout = Layout {
            input: shape.input_dim,
            hidden: shape.hidden,
            classes: shape.n_classes,
        };
        let (input_shift, input_scale) = standardizer(standardize_on, shape.input_dim);

        let mut params = vec![0.0; layout.len()];
        let hidden_std = match shape.activation {
            Activation::Tanh => (2.0 / (shape.input_dim + shape.hidden) as f64).sqrt(),
            Activation::Gaussian | Activation::Radial => (1.0 / shape.input_dim as f64).sqrt(),
        };
        let out_std = (2.0 / (shape.hidden + shape.n_classes) as f64).sqrt();
        let hidden_dist = Normal::new(0.0, hidden_std).expect("finite std");
        let out_dist = Normal::new(0.0, out_std).expect("finite std");
        if shape.activation == Activation::Radial {
            // Centers on standardized training rows, width ~ input dimension.
            let unit = Normal::new(0.0, 1.0).expect("finite std");
            for k in 0..shape.hidden {
                let row = &mut params[k * shape.input_dim..(k + 1) * shape.input_dim];
                if standardize_on.is_empty() {
                    row.iter_mut().for_each(|w| *w = unit.sample(rng));
                } else {
                    let x = standardize_on[rng.random_range(0..standardize_on.len())];
                    for (i, w) in row.iter_mut().enumerate() {
                        *w = (x[i] - input_shift[i]) * input_scale[i];
                    }
                }
            }
            let log_precision = -(shape.input_dim as f64).ln();
            params[layout.b_hidden()..layout.w_class()].fill(log_precision);
        } else {
            for w in &mut params[layout.w_hidden()..layout.b_hidden()] {
                *w = hidden_dist.sample(rng);
            }
        }
        for w in &mut params[layout.w_class()..layout.b_class()] {
            *w = out_dist.sample(rng);
        }
        for w in &mut params[layout.w_conf()..layout.b_conf()] {
            *w = out_dist.sample(rng);
        }
        params[layout.b_conf()] = shape.confidence_bias;

        Ok(ConfidenceModel {
            layout,
            activation: shape.activation,
            input_shift,
            input_scale,
            params,
            class_weights,
            lambda,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn hidden_width(&self) -> usize {
        self.layout.hidden
    }

    pub fn n_classes(&self) -> usize {
        self.layout.classes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let l = self.layout;
        let p = &self.params;
        let input: Vec<f64> = x
            .iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(&v, (&m, &s))| (v - m) * s)
            .collect();

        let mut pre = vec![0.0; l.hidden];
        let mut hidden = vec![0.0; l.hidden];
        for k in 0..l.hidden {
            let row = &p[l.w_hidden() + k * l.input..l.w_hidden() + (k + 1) * l.input];
            let a = match self.activation {
                Activation::Radial => {
                    let d2: f64 = row.iter().zip(&input).map(|(m, z)| (z - m) * (z - m)).sum();
                    p[l.b_hidden() + k].exp() * d2
                }
                _ => p[l.b_hidden() + k] + row.iter().zip(&input).map(|(w, z)| w * z).sum::<f64>(),
            };
            pre[k] = a;
            hidden[k] = self.activation.apply(a);
        }

        let mut probs = vec![0.0; l.classes];
        for (j, out) in probs.iter_mut().enumerate() {
            let row = &p[l.w_class() + j * l.hidden..l.w_class() + (j + 1) * l.hidden];
            *out = p[l.b_class() + j] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        softmax_in_place(&mut probs);

        let conf_row = &p[l.w_conf()..l.b_conf()];
        let s = p[l.b_conf()] + conf_row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        let confidence = sigmoid(s).clamp(CONFIDENCE_FLOOR, 1.0 - CONFIDENCE_FLOOR);

        Forward {
            input,
            pre,
            hidden,
            probs,
            confidence,
        }
    }

    /// Class probabilities and confidence for one feature vector.
    pub fn predict(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let f = self.forward(x);
        (f.probs, f.confidence)
    }

    fn one_hot(&self, target: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.layout.classes];
        y[target] = 1.0;
        y
    }

    /// Mean objective over a batch of `(feature, target class)` pairs.
    pub fn batch_loss(&self, xs: &[&[f64]], targets: &[usize]) -> f64 {
        let mut total = 0.0;
        for (x, &t) in xs.iter().zip(targets) {
            let f = self.forward(x);
            let y = self.one_hot(t);
            total += sample_loss(&f.probs, &y, f.confidence, &self.class_weights, self.lambda);
        }
        total / xs.len() as f64
    }

    /// Mean objective and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, xs: &[&[f64]], targets: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let mut d_p = vec![0.0; self.layout.classes];
        let mut d_logits = vec![0.0; self.layout.classes];
        let mut d_hidden = vec![0.0; self.layout.hidden];
        for (x, &t) in xs.iter().zip(targets) {
            let f = self.forward(x);
            let y = self.one_hot(t);
            let (value, d_c) = sample_loss_grad(
                &f.probs,
                &y,
                f.confidence,
                &self.class_weights,
                self.lambda,
                &mut d_p,
            );
            total += value;
            self.accumulate(&f, &d_p, d_c, &mut d_logits, &mut d_hidden, &mut grad);
        }
        let n = xs.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }

    fn accumulate(
        &self,
        f: &Forward,
        d_p: &[f64],
        d_c: f64,
        d_logits: &mut [f64],
        d_hidden: &mut [f64],
        grad: &mut [f64],
    ) {
        let l = self.layout;
        let p = &self.params;

        // softmax: dz_k = p_k (g_k - Σ_j p_j g_j)
        let dot: f64 = f.probs.iter().zip(d_p).map(|(p, g)| p * g).sum();
        for k in 0..l.classes {
            d_logits[k] = f.probs[k] * (d_p[k] - dot);
        }
        // Clamped confidence has zero slope.
        let c = f.confidence;
        let d_s = if c <= CONFIDENCE_FLOOR || c >= 1.0 - CONFIDENCE_FLOOR {
            0.0
        } else {
            d_c * c * (1.0 - c)
        };

        d_hidden.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..l.classes {
            let dz = d_logits[j];
            grad[l.b_class() + j] += dz;
            let base = l.w_class() + j * l.hidden;
            for k in 0..l.hidden {
                grad[base + k] += dz * f.hidden[k];
                d_hidden[k] += dz * p[base + k];
            }
        }
        grad[l.b_conf()] += d_s;
        for k in 0..l.hidden {
            grad[l.w_conf() + k] += d_s * f.hidden[k];
            d_hidden[k] += d_s * p[l.w_conf() + k];
        }

        for k in 0..l.hidden {
            let da = d_hidden[k] * self.activation.derivative(f.pre[k], f.hidden[k]);
            let base = l.w_hidden() + k * l.input;
            if self.activation == Activation::Radial {
                // a = e^β Σ (z - μ)²
                grad[l.b_hidden() + k] += da * f.pre[k];
                let scale = -2.0 * p[l.b_hidden() + k].exp();
                for (i, z) in f.input.iter().enumerate() {
                    grad[base + i] += da * scale * (z - p[base + i]);
                }
            } else {
                grad[l.b_hidden() + k] += da;
                for (i, z) in f.input.iter().enumerate() {
                    grad[base + i] += da * z;
                }
            }
        }
    }

    /// Plain gradient step.
    pub fn step(&mut self, grad: &[f64], learning_rate: f64) {
        for (w, g) in self.params.iter_mut().zip(grad) {
            *w -= learning_rate * g;
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let l = self.layout;
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "activation {}", self.activation.name());
        let _ = writeln!(out, "dims {} {} {}", l.input, l.hidden, l.classes);
        let _ = writeln!(out, "lambda {:e}", self.lambda);
        write_floats(&mut out, "class_weights", &self.class_weights);
        write_floats(&mut out, "input_shift", &self.input_shift);
        write_floats(&mut out, "input_scale", &self.input_scale);
        write_floats(&mut out, "params", &self.params);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::ModelFormat(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| bad(format!("missing {what} line")))
        };

        let header = next("header")?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MODEL_MAGIC) {
            return Err(bad("not a confidence model file".into()));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != MODEL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }

        let activation = keyed(next("activation")?, "activation")?
            .and_then(|v| Activation::parse(v.trim()))
            .ok_or_else(|| bad("unknown activation".into()))?;

        let dims: Vec<usize> = keyed(next("dims")?, "dims")?
            .ok_or_else(|| bad("missing dims".into()))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(format!("bad dimension {v:?}"))))
            .collect::<Result<_>>()?;
        let [input, hidden, classes] = dims[..] else {
            return Err(bad(format!("expected 3 dimensions, got {}", dims.len())));
        };
        if input == 0 || hidden == 0 || classes == 0 {
            return Err(bad("zero dimension".into()));
        }
        let layout = Layout {
            input,
            hidden,
            classes,
        };
        let expected_params = input
            .checked_mul(hidden)
            .zip(classes.checked_mul(hidden))
            .and_then(|(a, b)| a.checked_add(b)?.checked_add(2 * hidden + classes + 1))
            .ok_or_else(|| bad("dimensions overflow".into()))?;

        let lambda = parse_floats(next("lambda")?, "lambda", 1)?[0];
        if lambda < 0.0 {
            return Err(bad("negative lambda".into()));
        }
        let class_weights = parse_floats(next("class_weights")?, "class_weights", classes)?;
        let input_shift = parse_floats(next("input_shift")?, "input_shift", input)?;
        let input_scale = parse_floats(next("input_scale")?, "input_scale", input)?;
        let params = parse_floats(next("params")?, "params", expected_params)?;
        debug_assert_eq!(params.len(), layout.len());

        Ok(ConfidenceModel {
            layout,
            activation,
            input_shift,
            input_scale,
            params,
            class_weights,
            lambda,
        })
    }
}

fn standardizer(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    if rows.is_empty() {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let std = (s / n).sqrt();
            if std > 1e-12 {
                1.0 / std
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn write_floats(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

fn keyed<'a>(line: &'a str, key: &str) -> Result<Option<&'a str>> {
    match line.split_once(' ') {
        Some((k, rest)) if k == key => Ok(Some(rest)),
        _ if line == key => Ok(None),
        _ => Err(Error::ModelFormat(format!("expected {key:?} line"))),
    }
}

fn parse_floats(line: &str, key: &str, expected: usize) -> Result<Vec<f64>> {
    let body = keyed(line, key)?.unwrap_or("");
    let mut values = Vec::with_capacity(expected.min(1 << 20));
    for tok in body.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::ModelFormat(format!("{key}: bad number {tok:?}")))?;
        if !v.is_finite() {
            return Err(Error::ModelFormat(format!("{key}: non-finite value")));
        }
        values.push(v);
        if values.len() > expected {
            break;
        }
    }
    if values.len() != expected {
        return Err(Error::ModelFormat(format!(
            "{key}: expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Training controls for [`train_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep the confidence-logit bias at its initial value.
    pub freeze_confidence_bias: bool,
}

/// Full-set objective before training and after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Mini-batch gradient descent over `(feature, class)` samples.
pub fn train_model(
    shape: NetworkShape,
    features: &[&[f64]],
    targets: &[usize],
    class_weights: Vec<f64>,
    lambda: f64,
    settings: TrainSettings,
) -> Result<(ConfidenceModel, TrainReport)> {
    if features.is_empty() {
        return Err(Error::Precondition("no training samples".into()));
    }
    if settings.batch_size == 0 || !(settings.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut model = ConfidenceModel::init(shape, features, class_weights, lambda, &mut rng)?;

    let initial_loss = model.batch_loss(features, targets);
    if !initial_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_losses = Vec::with_capacity(settings.epochs);
    let mut xs: Vec<&[f64]> = Vec::with_capacity(settings.batch_size);
    let mut ts: Vec<usize> = Vec::with_capacity(settings.batch_size);
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(settings.batch_size) {
            xs.clear();
            ts.clear();
            for &i in chunk {
                xs.push(features[i]);
                ts.push(targets[i]);
            }
            let (value, mut grad) = model.loss_and_grad(&xs, &ts);
            if settings.freeze_confidence_bias {
                grad[model.layout.b_conf()] = 0.0;
            }
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            model.step(&grad, settings.learning_rate);
        }
        let full = model.batch_loss(features, targets);
        if !full.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(full);
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            epoch_losses,
        },
    ))
}
