//! Downstream classifier: L2-regularised logistic regression fitted by
//! full-batch gradient descent on the protected-free feature encoding.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::table::{DataTable, Encoder, NumericRange};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("training data contains a single label class")]
    SingleClassTraining,
    #[error("table schema does not match the model's training schema")]
    SchemaMismatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2: f64,
    pub epochs: usize,
    /// Step size; `None` uses `1 / L` for the loss's gradient Lipschitz bound `L`.
    pub lr: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { l2: 1e-4, epochs: 500, lr: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub favourable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub encoder: Encoder,
    /// Mean regularised loss before each step and after the last one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_history: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Row-compressed design matrix. One-hot blocks leave most entries zero, so
/// products skip them; nonzeros keep their column order.
struct SparseRows {
    offsets: Vec<usize>,
    columns: Vec<usize>,
    values: Vec<f64>,
    ncols: usize,
}

impl SparseRows {
    fn from_dense(x: ArrayView2<'_, f64>) -> Self {
        let mut offsets = Vec::with_capacity(x.nrows() + 1);
        let mut columns = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    columns.push(j);
                    values.push(v);
                }
            }
            offsets.push(columns.len());
        }
        Self { offsets, columns, values, ncols: x.ncols() }
    }

    fn nrows(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.columns[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `X·w + bias`
    fn affine(&self, w: &[f64], bias: f64) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.row(i).fold(0.0, |acc, (j, v)| acc + v * w[j]) + bias).collect()
    }

    /// `Xᵀ·r`
    fn transpose_times(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, &ri) in r.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * ri;
            }
        }
        out
    }
}

fn sparse_loss_and_gradient(x: &SparseRows, y: ArrayView1<'_, f64>, weights: &[f64], bias: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.nrows() as f64;
    let z = x.affine(weights, bias);
    let mut loss = 0.0;
    let mut residual = Vec::with_capacity(z.len());
    for (&zi, &yi) in z.iter().zip(y.iter()) {
        // y·(-log σ(z)) + (1-y)·(-log(1-σ(z))) = softplus(z) - y·z
        loss += softplus(zi) - yi * zi;
        residual.push(sigmoid(zi) - yi);
    }
    let norm2: f64 = weights.iter().map(|w| w * w).sum();
    loss = loss / n + 0.5 * l2 * norm2;
    let mut grad_w = x.transpose_times(&residual);
    for (g, &w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    let grad_b = residual.iter().sum::<f64>() / n;
    (loss, grad_w, grad_b)
}

/// Mean logistic loss plus `l2/2 · ‖w‖²` and its gradient `(∂w, ∂b)`.
pub fn loss_and_gradient(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    weights: ArrayView1<'_, f64>,
    bias: f64,
    l2: f64,
) -> (f64, Array1<f64>, f64) {
    let (loss, grad_w, grad_b) = sparse_loss_and_gradient(&SparseRows::from_dense(x), y, &weights.to_vec(), bias, l2);
    (loss, Array1::from(grad_w), grad_b)
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n` by power iteration, padded by 1%.
fn gram_spectral_bound(x: &SparseRows) -> f64 {
    let n = x.nrows() as f64;
    let d = x.ncols;
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let xv = x.affine(&v[..d], v[d]);
        let mut next = x.transpose_times(&xv);
        next.push(xv.iter().sum());
        next.iter_mut().for_each(|e| *e /= n);
        let norm = next.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-9 * norm;
        lambda = norm;
        v = next.into_iter().map(|e| e / norm).collect();
        if converged {
            break;
        }
    }
    lambda * 1.01
}

/// Step size `1 / L` with `L = λmax/4 + l2`, under which gradient descent on
/// this loss never increases it.
pub fn safe_learning_rate(x: ArrayView2<'_, f64>, l2: f64) -> f64 {
    sparse_learning_rate(&SparseRows::from_dense(x), l2)
}

fn sparse_learning_rate(x: &SparseRows, l2: f64) -> f64 {
    let lipschitz = 0.25 * gram_spectral_bound(x) + l2;
    if lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        1.0
    }
}

/// Gradient descent from zero on an already-encoded design matrix.
pub fn fit_encoded(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, config: &TrainConfig) -> (Array1<f64>, f64, Vec<f64>) {
    let x = SparseRows::from_dense(x);
    let lr = config.lr.unwrap_or_else(|| sparse_learning_rate(&x, config.l2));
    let mut w = vec![0.0; x.ncols];
    let mut b = 0.0;
    let mut history = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, gw, gb) = sparse_loss_and_gradient(&x, y, &w, b, config.l2);
        history.push(loss);
        for (wj, g) in w.iter_mut().zip(gw) {
            *wj -= lr * g;
        }
        b -= lr * gb;
    }
    history.push(sparse_loss_and_gradient(&x, y, &w, b, config.l2).0);
    (Array1::from(w), b, history)
}

fn targets(table: &DataTable) -> Array1<f64> {
    table.favourable_labels().into_iter().map(|f| if f { 1.0 } else { 0.0 }).collect()
}

pub fn train(table: &DataTable, config: &TrainConfig) -> Result<LogisticModel, ClassifierError> {
    if config.l2 < 0.0 || config.lr.is_some_and(|lr| lr.is_nan() || lr <= 0.0) {
        return Err(ClassifierError::InvalidConfig(format!("{config:?}")));
    }
    let labels = table.favourable_labels();
    if !(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y)) {
        return Err(ClassifierError::SingleClassTraining);
    }
    let encoder = Encoder::fit(table, false, false);
    let x = encoder.transform(table).map_err(|_| ClassifierError::SchemaMismatch)?.values;
    let (w, b, loss_history) = fit_encoded(x.view(), targets(table).view(), config);
    Ok(LogisticModel { weights: w.to_vec(), bias: b, threshold: 0.5, encoder, loss_history })
}

impl LogisticModel {
    /// Untrained model: zero weights over `encoder`'s dimensions.
    pub fn zeros(encoder: Encoder) -> Self {
        Self { weights: vec![0.0; encoder.n_dims()], bias: 0.0, threshold: 0.5, encoder, loss_history: Vec::new() }
    }

    pub fn scaling(&self) -> Vec<NumericRange> {
        self.encoder.scaling()
    }

    pub fn design_matrix(&self, table: &DataTable) -> Result<Array2<f64>, ClassifierError> {
        Ok(self.encoder.transform(table).map_err(|_| ClassifierError::SchemaMismatch)?.values)
    }

    pub fn predict(&self, table: &DataTable) -> Result<Vec<Prediction>, ClassifierError> {
        let x = self.design_matrix(table)?;
        let w = ArrayView1::from(&self.weights);
        Ok(x.dot(&w)
            .iter()
            .map(|&z| {
                let probability = sigmoid(z + self.bias);
                Prediction { probability, favourable: probability >= self.threshold }
            })
            .collect())
    }
}

/// A downstream model that can be swapped for logistic regression.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &str;
    fn fit_predict(&self, train: &DataTable, test: &DataTable) -> Result<Vec<Prediction>, ClassifierError>;
}

#[derive(Debug, Clone, Default)]
pub struct LogisticRegression {
    pub config: TrainConfig,
}

impl Classifier for LogisticRegression {
    fn name(&self) -> &str {
        "logistic_regression"
    }

    fn fit_predict(&self, train_table: &DataTable, test: &DataTable) -> Result<Vec<Prediction>, ClassifierError> {
        train(train_table, &self.config)?.predict(test)
    }
}
