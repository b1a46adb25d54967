//! Small differentiable classifiers with analytic loss and gradient.
//!
//! Two kinds are supported: softmax regression (convex, the workhorse for
//! convergence diagnostics) and a one-hidden-layer ReLU MLP. Parameters are
//! packed into a flat [`ParamVector`] layer by layer, weights row-major and
//! then biases:
//!
//! - softmax regression: `W (classes x input)`, `b (classes)`
//! - MLP: `W1 (hidden x input)`, `b1 (hidden)`, `W2 (classes x hidden)`,
//!   `b2 (classes)`
//!
//! The loss is mean cross-entropy over the dataset plus
//! `l2_reg / 2 * ||w||^2` over the whole parameter vector.

use crate::error::{Error, Result};
use crate::vecnum::{ParamVector, RngStream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    SoftmaxRegression,
    MlpOneHidden { hidden_dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub l2_reg: f64,
}

impl ModelSpec {
    pub fn softmax(input_dim: usize, num_classes: usize, l2_reg: f64) -> Self {
        ModelSpec { kind: ModelKind::SoftmaxRegression, input_dim, num_classes, l2_reg }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize, l2_reg: f64) -> Self {
        ModelSpec { kind: ModelKind::MlpOneHidden { hidden_dim }, input_dim, num_classes, l2_reg }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidParam("input_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidParam("num_classes must be >= 2".into()));
        }
        if !self.l2_reg.is_finite() || self.l2_reg < 0.0 {
            return Err(Error::InvalidParam("l2_reg must be >= 0".into()));
        }
        if let ModelKind::MlpOneHidden { hidden_dim: 0 } = self.kind {
            return Err(Error::InvalidParam("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Total parameter count implied by the spec.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::SoftmaxRegression => self.num_classes * (self.input_dim + 1),
            ModelKind::MlpOneHidden { hidden_dim } => {
                hidden_dim * (self.input_dim + 1) + self.num_classes * (hidden_dim + 1)
            }
        }
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.param_dim())
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.dim() != self.param_dim() {
            return Err(Error::DimMismatch { expected: self.param_dim(), got: w.dim() });
        }
        Ok(())
    }
}

/// Row-major feature matrix plus dense integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParam("input_dim must be >= 1".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::InvalidParam(format!(
                "feature buffer holds {} values, expected {} rows x {} columns",
                features.len(),
                labels.len(),
                input_dim
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite feature value".into()));
        }
        Ok(LabeledDataset { features, labels, input_dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding the given rows (indices may repeat).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset { features, labels, input_dim: self.input_dim }
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidParam("dataset is empty".into()));
        }
        Ok(())
    }

    fn check_labels(&self, num_classes: usize) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidParam(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(())
    }
}

struct SoftmaxView<'a> {
    w: &'a [f64],
    b: &'a [f64],
}

fn softmax_view<'a>(spec: &ModelSpec, w: &'a ParamVector) -> SoftmaxView<'a> {
    let d = spec.input_dim;
    let c = spec.num_classes;
    let s = w.as_slice();
    SoftmaxView { w: &s[..c * d], b: &s[c * d..c * d + c] }
}

/// Log-sum-exp with max subtraction; returns (lse, max index with ties to
/// the lowest class id).
fn log_sum_exp(logits: &[f64]) -> (f64, usize) {
    let mut max = f64::NEG_INFINITY;
    let mut argmax = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > max {
            max = z;
            argmax = i;
        }
    }
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    (max + sum.ln(), argmax)
}

/// Per-example forward pass writing logits into `out`.
fn logits_into(spec: &ModelSpec, w: &ParamVector, x: &[f64], out: &mut Vec<f64>, hidden: &mut Vec<f64>) {
    let d = spec.input_dim;
    let c = spec.num_classes;
    out.clear();
    match spec.kind {
        ModelKind::SoftmaxRegression => {
            let view = softmax_view(spec, w);
            for k in 0..c {
                let row = &view.w[k * d..(k + 1) * d];
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + view.b[k];
                out.push(z);
            }
        }
        ModelKind::MlpOneHidden { hidden_dim } => {
            let s = w.as_slice();
            let (w1, rest) = s.split_at(hidden_dim * d);
            let (b1, rest) = rest.split_at(hidden_dim);
            let (w2, b2) = rest.split_at(c * hidden_dim);
            hidden.clear();
            for j in 0..hidden_dim {
                let row = &w1[j * d..(j + 1) * d];
                let a: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b1[j];
                hidden.push(a.max(0.0));
            }
            for k in 0..c {
                let row = &w2[k * hidden_dim..(k + 1) * hidden_dim];
                let z: f64 = row.iter().zip(hidden.iter()).map(|(p, q)| p * q).sum::<f64>() + b2[k];
                out.push(z);
            }
        }
    }
}

/// Mean cross-entropy over `data` plus the l2 penalty.
pub fn loss(spec: &ModelSpec, w: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    spec.validate()?;
    spec.check_params(w)?;
    data.check_nonempty()?;
    data.check_labels(spec.num_classes)?;
    if data.input_dim() != spec.input_dim {
        return Err(Error::DimMismatch { expected: spec.input_dim, got: data.input_dim() });
    }
    let mut logits = Vec::with_capacity(spec.num_classes);
    let mut hidden = Vec::new();
    let mut total = 0.0;
    for i in 0..data.len() {
        logits_into(spec, w, data.row(i), &mut logits, &mut hidden);
        let (lse, _) = log_sum_exp(&logits);
        total += lse - logits[data.label(i)];
    }
    let mean = total / data.len() as f64;
    let reg = 0.5 * spec.l2_reg * w.dot(w);
    let value = mean + reg;
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "loss", iteration: 0 });
    }
    Ok(value)
}

/// Analytic gradient of [`loss`] with respect to `w`.
pub fn grad(spec: &ModelSpec, w: &ParamVector, data: &LabeledDataset) -> Result<ParamVector> {
    spec.validate()?;
    spec.check_params(w)?;
    data.check_nonempty()?;
    data.check_labels(spec.num_classes)?;
    if data.input_dim() != spec.input_dim {
        return Err(Error::DimMismatch { expected: spec.input_dim, got: data.input_dim() });
    }
    let d = spec.input_dim;
    let c = spec.num_classes;
    let n = data.len() as f64;
    let mut g = vec![0.0; spec.param_dim()];
    let mut logits = Vec::with_capacity(c);
    let mut hidden = Vec::new();
    let mut probs = vec![0.0; c];

    for i in 0..data.len() {
        let x = data.row(i);
        logits_into(spec, w, x, &mut logits, &mut hidden);
        let (lse, _) = log_sum_exp(&logits);
        for k in 0..c {
            probs[k] = (logits[k] - lse).exp();
        }
        probs[data.label(i)] -= 1.0;
        match spec.kind {
            ModelKind::SoftmaxRegression => {
                for k in 0..c {
                    let coef = probs[k] / n;
                    let row = &mut g[k * d..(k + 1) * d];
                    for (gj, xj) in row.iter_mut().zip(x) {
                        *gj += coef * xj;
                    }
                    g[c * d + k] += coef;
                }
            }
            ModelKind::MlpOneHidden { hidden_dim } => {
                let s = w.as_slice();
                let w2 = &s[hidden_dim * (d + 1)..hidden_dim * (d + 1) + c * hidden_dim];
                let off_w1 = 0;
                let off_b1 = hidden_dim * d;
                let off_w2 = hidden_dim * (d + 1);
                let off_b2 = off_w2 + c * hidden_dim;
                for k in 0..c {
                    let coef = probs[k] / n;
                    for j in 0..hidden_dim {
                        g[off_w2 + k * hidden_dim + j] += coef * hidden[j];
                    }
                    g[off_b2 + k] += coef;
                }
                for j in 0..hidden_dim {
                    if hidden[j] <= 0.0 {
                        continue;
                    }
                    let mut da = 0.0;
                    for k in 0..c {
                        da += probs[k] / n * w2[k * hidden_dim + j];
                    }
                    let row = &mut g[off_w1 + j * d..off_w1 + (j + 1) * d];
                    for (gj, xj) in row.iter_mut().zip(x) {
                        *gj += da * xj;
                    }
                    g[off_b1 + j] += da;
                }
            }
        }
    }

    if spec.l2_reg > 0.0 {
        for (gi, wi) in g.iter_mut().zip(w.as_slice()) {
            *gi += spec.l2_reg * wi;
        }
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", iteration: 0 });
    }
    ParamVector::from_vec(g)
}

/// Shuffled mini-batch SGD for `epochs` passes, deterministic given the
/// stream. The final partial batch of each epoch is processed as-is.
pub fn local_sgd(
    spec: &ModelSpec,
    w0: &ParamVector,
    data: &LabeledDataset,
    lr: f64,
    batch: usize,
    epochs: usize,
    stream: &RngStream,
) -> Result<ParamVector> {
    spec.validate()?;
    spec.check_params(w0)?;
    data.check_nonempty()?;
    data.check_labels(spec.num_classes)?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidParam(format!("learning rate must be > 0, got {lr}")));
    }
    if batch == 0 || batch > data.len() {
        return Err(Error::InvalidParam(format!(
            "batch size {batch} must be in 1..={}",
            data.len()
        )));
    }
    let mut w = w0.clone();
    let mut rng = stream.rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let minibatch = data.subset(chunk);
            let g = grad(spec, &w, &minibatch)?;
            w.add_scaled(-lr, &g);
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite { what: "sgd iterate", iteration: epochs });
    }
    Ok(w)
}

/// Fraction of argmax-correct predictions; ties break toward the lowest
/// class id.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    spec.validate()?;
    spec.check_params(w)?;
    data.check_nonempty()?;
    data.check_labels(spec.num_classes)?;
    let mut logits = Vec::with_capacity(spec.num_classes);
    let mut hidden = Vec::new();
    let mut hits = 0usize;
    for i in 0..data.len() {
        logits_into(spec, w, data.row(i), &mut logits, &mut hidden);
        let (_, argmax) = log_sum_exp(&logits);
        if argmax == data.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Per-example cross-entropy loss and max predicted probability; the
/// attack-feature pair used by membership inference.
pub fn example_scores(
    spec: &ModelSpec,
    w: &ParamVector,
    data: &LabeledDataset,
) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    spec.check_params(w)?;
    data.check_nonempty()?;
    data.check_labels(spec.num_classes)?;
    let mut logits = Vec::with_capacity(spec.num_classes);
    let mut hidden = Vec::new();
    let mut out = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        logits_into(spec, w, data.row(i), &mut logits, &mut hidden);
        let (lse, argmax) = log_sum_exp(&logits);
        let ce = lse - logits[data.label(i)];
        let max_prob = (logits[argmax] - lse).exp();
        out.push((ce, max_prob));
    }
    Ok(out)
}
