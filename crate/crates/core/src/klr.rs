//! Per-neuron kernel logistic regression.
//!
//! Neuron `i` predicts `p(s_i = +1 | xi^mu) = sigmoid((K alpha_i)_mu)`. Each
//! neuron is fitted independently by full-batch, fixed-step gradient descent
//! on
//!
//! ```text
//! L(alpha) = -sum_mu [t_mu log p_mu + (1 - t_mu) log(1 - p_mu)] + (lambda / 2) alpha^T K alpha
//! ```
//!
//! starting from `alpha = 0`, with gradient `K (p - t + lambda alpha)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelConfig, PatternSet};

/// Slack on the per-epoch loss increase, relative to `max(1, |L|)`.
pub const DESCENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            learning_rate: 0.1,
            max_epochs: 100_000,
            grad_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Argument(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be positive".into()));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::Argument(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        Ok(())
    }
}

/// Binary targets `t_mu = (xi^mu_i + 1) / 2` for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTargets {
    t: DVector<f64>,
}

impl NeuronTargets {
    pub fn for_neuron(patterns: &PatternSet, neuron: usize) -> Self {
        let t = DVector::from_iterator(
            patterns.num_patterns(),
            patterns
                .iter()
                .map(|row| if row[neuron] > 0 { 1.0 } else { 0.0 }),
        );
        Self { t }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Argument("targets must be 0 or 1".into()));
        }
        Ok(Self {
            t: DVector::from_iterator(bits.len(), bits.iter().map(|&b| f64::from(b))),
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Trained dual weights; column `i` belongs to neuron `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    pub alpha: DMatrix<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub trained_epochs: usize,
}

impl DualWeights {
    pub fn zeros(num_patterns: usize, num_neurons: usize, gamma: f64, lambda: f64) -> Self {
        Self {
            alpha: DMatrix::zeros(num_patterns, num_neurons),
            gamma,
            lambda,
            trained_epochs: 0,
        }
    }

    pub fn num_patterns(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn num_neurons(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn column(&self, neuron: usize) -> DVector<f64> {
        self.alpha.column(neuron).into_owned()
    }

    /// Header `P N gamma lambda epochs`, then `P` rows of `N` values with 17
    /// significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {} {}\n",
            self.num_patterns(),
            self.num_neurons(),
            self.gamma,
            self.lambda,
            self.trained_epochs
        );
        for r in 0..self.num_patterns() {
            let row: Vec<String> = (0..self.num_neurons())
                .map(|c| format!("{:.16e}", self.alpha[(r, c)]))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "empty weights file"))?
            .split_whitespace()
            .collect();
        if header.len() != 5 {
            return Err(Error::parse(
                origin,
                "header must be `P N gamma lambda epochs`",
            ));
        }
        let bad = |what: &str| Error::parse(origin, format!("bad {what} in header"));
        let p: usize = header[0].parse().map_err(|_| bad("P"))?;
        let n: usize = header[1].parse().map_err(|_| bad("N"))?;
        let gamma: f64 = header[2].parse().map_err(|_| bad("gamma"))?;
        let lambda: f64 = header[3].parse().map_err(|_| bad("lambda"))?;
        let trained_epochs: usize = header[4].parse().map_err(|_| bad("epochs"))?;
        let mut values = Vec::with_capacity(p * n);
        let mut rows = 0;
        for line in lines {
            let row = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(origin, format!("bad value in row {rows}")))?;
            if row.len() != n {
                return Err(Error::parse(
                    origin,
                    format!("row {rows} has {} values, expected {n}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(
                    origin,
                    format!("non-finite weight in row {rows}"),
                ));
            }
            values.extend(row);
            rows += 1;
        }
        if rows != p {
            return Err(Error::parse(
                origin,
                format!("expected {p} rows, found {rows}"),
            ));
        }
        Ok(Self {
            alpha: DMatrix::from_row_slice(p, n, &values),
            gamma,
            lambda,
            trained_epochs,
        })
    }
}

pub fn write_weights(weights: &DualWeights, path: &Path) -> Result<()> {
    std::fs::write(path, weights.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<DualWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DualWeights::from_text(&text, path)
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(h))` without overflow or cancellation.
fn softplus(h: f64) -> f64 {
    if h > 0.0 {
        h + (-h).exp().ln_1p()
    } else {
        h.exp().ln_1p()
    }
}

/// Bernoulli variance `p (1 - p)` at field `h`, computed as
/// `sigmoid(h) sigmoid(-h)` so it keeps full relative precision deep into
/// saturation instead of rounding to zero once `p` rounds to 1.
pub fn bernoulli_variance(h: f64) -> f64 {
    sigmoid(h) * sigmoid(-h)
}

fn check_dims(alpha_col: &DVector<f64>, k: &GramMatrix) -> Result<()> {
    if alpha_col.len() != k.size() {
        return Err(Error::Dimension(format!(
            "alpha has length {}, Gram matrix is {}x{}",
            alpha_col.len(),
            k.size(),
            k.size()
        )));
    }
    Ok(())
}

fn check_targets(targets: &NeuronTargets, k: &GramMatrix) -> Result<()> {
    if targets.len() != k.size() {
        return Err(Error::Dimension(format!(
            "targets have length {}, Gram matrix is {}x{}",
            targets.len(),
            k.size(),
            k.size()
        )));
    }
    Ok(())
}

/// Pre-sigmoid fields `h = K alpha`.
pub fn fields(alpha_col: &DVector<f64>, k: &GramMatrix) -> Result<DVector<f64>> {
    check_dims(alpha_col, k)?;
    Ok(k.values() * alpha_col)
}

pub fn predict_probs(alpha_col: &DVector<f64>, k: &GramMatrix) -> Result<DVector<f64>> {
    Ok(fields(alpha_col, k)?.map(sigmoid))
}

// Cross-entropy in softplus form: -[t log s(h) + (1-t) log(1 - s(h))] = softplus(h) - t h.
fn loss_from_fields(
    h: &DVector<f64>,
    alpha_col: &DVector<f64>,
    t: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let data: f64 = h
        .iter()
        .zip(t.iter())
        .map(|(&hm, &tm)| softplus(hm) - tm * hm)
        .sum();
    data + 0.5 * lambda * alpha_col.dot(h)
}

pub fn loss(
    alpha_col: &DVector<f64>,
    k: &GramMatrix,
    targets: &NeuronTargets,
    lambda: f64,
) -> Result<f64> {
    check_targets(targets, k)?;
    let h = fields(alpha_col, k)?;
    Ok(loss_from_fields(&h, alpha_col, targets.values(), lambda))
}

/// `K (p - t) + lambda K alpha`.
pub fn loss_gradient(
    alpha_col: &DVector<f64>,
    k: &GramMatrix,
    targets: &NeuronTargets,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_targets(targets, k)?;
    let h = fields(alpha_col, k)?;
    let residual = residual(&h, alpha_col, targets.values(), lambda);
    Ok(k.values() * residual)
}

fn residual(
    h: &DVector<f64>,
    alpha_col: &DVector<f64>,
    t: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    DVector::from_iterator(
        h.len(),
        h.iter()
            .zip(t.iter())
            .zip(alpha_col.iter())
            .map(|((&hm, &tm), &am)| sigmoid(hm) - tm + lambda * am),
    )
}

/// Fits one column by fixed-step gradient descent. Returns the column and the
/// number of updates applied.
pub fn train_neuron(
    k: &GramMatrix,
    targets: &NeuronTargets,
    cfg: &TrainConfig,
    neuron: usize,
) -> Result<(DVector<f64>, usize)> {
    check_targets(targets, k)?;
    let p = k.size();
    let t = targets.values();
    let kmat = k.values();
    let mut alpha = DVector::zeros(p);
    let mut h = DVector::zeros(p);
    let mut grad = DVector::zeros(p);
    let mut prev_loss: Option<f64> = None;

    for epoch in 0..=cfg.max_epochs {
        h.gemv(1.0, kmat, &alpha, 0.0);
        let current = loss_from_fields(&h, &alpha, t, cfg.lambda);
        if !current.is_finite() {
            return Err(Error::Divergence {
                neuron,
                epoch,
                reason: format!("loss became {current}"),
            });
        }
        if let Some(prev) = prev_loss {
            if current > prev + DESCENT_TOLERANCE * prev.abs().max(1.0) {
                return Err(Error::Divergence {
                    neuron,
                    epoch,
                    reason: format!("loss increased from {prev} to {current}"),
                });
            }
        }
        prev_loss = Some(current);

        let r = residual(&h, &alpha, t, cfg.lambda);
        grad.gemv(1.0, kmat, &r, 0.0);
        if grad.norm() < cfg.grad_tol || epoch == cfg.max_epochs {
            return Ok((alpha, epoch));
        }
        alpha.axpy(-cfg.learning_rate, &grad, 1.0);
    }
    unreachable!("loop returns on its final epoch")
}

/// Trains every neuron independently; columns are assembled in neuron order,
/// so the result does not depend on scheduling.
pub fn train(
    patterns: &PatternSet,
    kcfg: &KernelConfig,
    tcfg: &TrainConfig,
) -> Result<DualWeights> {
    tcfg.validate()?;
    let k = gram(patterns, kcfg)?;
    train_with_gram(patterns, &k, tcfg)
}

pub fn train_with_gram(
    patterns: &PatternSet,
    k: &GramMatrix,
    tcfg: &TrainConfig,
) -> Result<DualWeights> {
    tcfg.validate()?;
    if k.size() != patterns.num_patterns() {
        return Err(Error::Dimension(
            "Gram matrix does not match pattern count".into(),
        ));
    }
    let columns: Vec<Result<(DVector<f64>, usize)>> = (0..patterns.num_neurons())
        .into_par_iter()
        .map(|i| train_neuron(k, &NeuronTargets::for_neuron(patterns, i), tcfg, i))
        .collect();

    let mut weights = DualWeights::zeros(
        patterns.num_patterns(),
        patterns.num_neurons(),
        k.gamma(),
        tcfg.lambda,
    );
    for (i, col) in columns.into_iter().enumerate() {
        let (alpha, epochs) = col?;
        weights.alpha.set_column(i, &alpha);
        weights.trained_epochs = weights.trained_epochs.max(epochs);
    }
    Ok(weights)
}
