//! Fisher information geometry of a single neuron's logistic model.
//!
//! For dual weights `alpha` and Gram matrix `K` the Fisher metric is
//! `G = K D K` with `D = diag(p_mu (1 - p_mu))`. No `1/P` averaging is
//! applied; an averaged convention would divide every eigenvalue by `P`.
//!
//! Inverses of `G` are spectral pseudo-inverses restricted to modes with
//! `lambda_k > rel_cutoff * lambda_1`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelConfig, PatternSet};
use crate::klr::{bernoulli_variance, fields, loss_gradient, sigmoid, DualWeights, NeuronTargets};

pub const DEFAULT_REL_CUTOFF: f64 = 1e-10;

/// Negative eigenvalues down to this fraction of `lambda_1` are roundoff.
const PSD_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub values: DMatrix<f64>,
    pub neuron_index: usize,
    pub source_gamma: f64,
}

impl FisherMatrix {
    /// Wraps a symmetric matrix, e.g. a synthetic metric.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension("Fisher matrix must be square".into()));
        }
        let sym = (&values + values.transpose()) * 0.5;
        Ok(Self {
            values: sym,
            neuron_index: 0,
            source_gamma: f64::NAN,
        })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Eigen-decomposition of a Fisher matrix, eigenvalues in nonincreasing
/// order and clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherSpectrum {
    pub eigenvalues: DVector<f64>,
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
    pub lambda_max: f64,
    /// Stable rank; 0 when the spectrum is degenerate.
    pub d_eff: f64,
    pub ratio_2_1: f64,
    pub ratio_tail: f64,
    /// All eigenvalues are zero (total information collapse).
    pub degenerate: bool,
}

impl FisherSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `lambda_k / lambda_1` for every mode; NaN when degenerate.
    pub fn normalized(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| {
                if self.degenerate {
                    f64::NAN
                } else {
                    l / self.lambda_max
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// `||grad L||^2`
    pub euclid_norm_sq: f64,
    /// `grad L^T G^+ grad L` over retained modes.
    pub riemann_norm_sq: f64,
    /// `||grad L - lambda_1 (v_1 . nat) v_1|| / max(||grad L||, 1e-30)`
    pub rank1_residual: f64,
    pub nat_grad_norm: f64,
    pub cutoff_used: f64,
    pub retained_modes: usize,
    pub degenerate: bool,
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

/// `G = K D K`, symmetrized as `(G + G^T) / 2`.
///
/// `D` uses the unclamped model probabilities, so saturated patterns
/// contribute (almost) nothing.
pub fn fisher_matrix(alpha_col: &DVector<f64>, k: &GramMatrix) -> Result<FisherMatrix> {
    let h = fields(alpha_col, k)?;
    let d = h.map(bernoulli_variance);
    let mut kd = k.values().clone();
    for (mut col, &dm) in kd.column_iter_mut().zip(d.iter()) {
        col *= dm;
    }
    let g = &kd * k.values();
    let values = (&g + g.transpose()) * 0.5;
    Ok(FisherMatrix {
        values,
        neuron_index: 0,
        source_gamma: k.gamma(),
    })
}

/// The Fisher matrix from its definition as an expected score outer product.
///
/// For pattern `mu` the Bernoulli log-likelihood has score
/// `(s - p_mu) k_mu` with `s` in `{0, 1}`. The expectation over
/// `s ~ Bernoulli(p_mu)` is taken by enumerating both outcomes, and the
/// per-pattern terms are summed uniformly over the stored patterns.
pub fn fim_empirical_oracle(alpha_col: &DVector<f64>, k: &GramMatrix) -> Result<FisherMatrix> {
    check_dims(alpha_col, k)?;
    let p_dim = k.size();
    let kmat = k.values();
    let mut g = DMatrix::zeros(p_dim, p_dim);
    for mu in 0..p_dim {
        let mut h = 0.0;
        for nu in 0..p_dim {
            h += kmat[(mu, nu)] * alpha_col[nu];
        }
        let p_on = sigmoid(h);
        let p_off = sigmoid(-h);
        // (probability of s, s - p)
        let outcomes = [(p_on, p_off), (p_off, -p_on)];
        for (prob, centered) in outcomes {
            for a in 0..p_dim {
                let sa = centered * kmat[(a, mu)];
                for b in 0..p_dim {
                    g[(a, b)] += prob * sa * centered * kmat[(b, mu)];
                }
            }
        }
    }
    Ok(FisherMatrix {
        values: g,
        neuron_index: 0,
        source_gamma: k.gamma(),
    })
}

/// Stable rank `(sum lambda)^2 / sum lambda^2`.
pub fn effective_dimension(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::Argument(
            "eigenvalues must be finite and nonnegative".into(),
        ));
    }
    let top = eigenvalues.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(Error::DegenerateSpectrum(
            "no strictly positive eigenvalue".into(),
        ));
    }
    // Scaling by the largest eigenvalue keeps tiny spectra from underflowing.
    let (s1, s2) = eigenvalues.iter().fold((0.0, 0.0), |(s1, s2), &l| {
        let x = l / top;
        (s1 + x, s2 + x * x)
    });
    // Cauchy-Schwarz bounds the ratio by the positive count; clamp rounding.
    let positive = eigenvalues.iter().filter(|&&l| l > 0.0).count() as f64;
    Ok((s1 * s1 / s2).clamp(1.0, positive))
}

pub fn spectrum(g: &FisherMatrix) -> Result<FisherSpectrum> {
    if g.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "Fisher matrix of neuron {} has non-finite entries",
            g.neuron_index
        )));
    }
    let n = g.size();
    if n == 0 {
        return Err(Error::Dimension("empty Fisher matrix".into()));
    }
    let eig = SymmetricEigen::new(g.values.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let raw_top = eig.eigenvalues[order[0]];
    let raw_bottom = eig.eigenvalues[order[n - 1]];
    if raw_bottom < -PSD_SLACK * raw_top.max(0.0) && raw_bottom < -f64::MIN_POSITIVE {
        return Err(Error::Numeric(format!(
            "Fisher matrix of neuron {} is not positive semidefinite: eigenvalues {raw_top:e} .. {raw_bottom:e}",
            g.neuron_index
        )));
    }

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    let lambda_max = eigenvalues[0];
    let degenerate = lambda_max <= 0.0;
    let (d_eff, ratio_2_1, ratio_tail) = if degenerate {
        (0.0, 0.0, 0.0)
    } else {
        let d_eff = effective_dimension(eigenvalues.as_slice())?;
        let r21 = if n > 1 {
            eigenvalues[1] / lambda_max
        } else {
            0.0
        };
        (d_eff, r21, eigenvalues[n - 1] / lambda_max)
    };

    Ok(FisherSpectrum {
        eigenvalues,
        eigenvectors,
        lambda_max,
        d_eff,
        ratio_2_1,
        ratio_tail,
        degenerate,
    })
}

/// Number of modes with `lambda_k > rel_cutoff * lambda_1`.
fn retained(spec: &FisherSpectrum, rel_cutoff: f64) -> usize {
    let threshold = rel_cutoff * spec.lambda_max;
    spec.eigenvalues
        .iter()
        .take_while(|&&l| l > threshold)
        .count()
}

fn check_cutoff(rel_cutoff: f64) -> Result<()> {
    if !(rel_cutoff > 0.0 && rel_cutoff < 1.0) {
        return Err(Error::Argument(format!(
            "rel_cutoff must lie in (0, 1), got {rel_cutoff}"
        )));
    }
    Ok(())
}

/// `G^+ grad` over the retained modes; returns the direction and the number
/// of modes kept.
pub fn natural_gradient(
    grad: &DVector<f64>,
    spec: &FisherSpectrum,
    rel_cutoff: f64,
) -> Result<(DVector<f64>, usize)> {
    check_cutoff(rel_cutoff)?;
    if grad.len() != spec.len() {
        return Err(Error::Dimension(format!(
            "gradient has length {}, spectrum has {} modes",
            grad.len(),
            spec.len()
        )));
    }
    if spec.degenerate {
        return Err(Error::DegenerateSpectrum(
            "natural gradient undefined for a zero metric".into(),
        ));
    }
    let kept = retained(spec, rel_cutoff);
    let mut nat = DVector::zeros(grad.len());
    for k in 0..kept {
        let v = spec.eigenvectors.column(k);
        let coeff = v.dot(grad) / spec.eigenvalues[k];
        nat.axpy(coeff, &v, 1.0);
    }
    Ok((nat, kept))
}

/// Euclidean and Riemannian views of one gradient under a given spectrum.
pub fn report_for_gradient(
    grad: &DVector<f64>,
    spec: &FisherSpectrum,
    rel_cutoff: f64,
) -> Result<GradientReport> {
    check_cutoff(rel_cutoff)?;
    let euclid_norm_sq = grad.norm_squared();
    let grad_norm = euclid_norm_sq.sqrt();
    if spec.degenerate {
        // The rank-one approximation is the zero vector.
        return Ok(GradientReport {
            euclid_norm_sq,
            riemann_norm_sq: 0.0,
            rank1_residual: if grad_norm > 0.0 { 1.0 } else { 0.0 },
            nat_grad_norm: 0.0,
            cutoff_used: rel_cutoff,
            retained_modes: 0,
            degenerate: true,
        });
    }
    let (nat, kept) = natural_gradient(grad, spec, rel_cutoff)?;
    let riemann_norm_sq: f64 = (0..kept)
        .map(|k| {
            let c = spec.eigenvectors.column(k).dot(grad);
            c * c / spec.eigenvalues[k]
        })
        .sum();
    let v1 = spec.eigenvectors.column(0);
    let amplified = v1 * (spec.lambda_max * v1.dot(&nat));
    let rank1_residual = (grad - amplified).norm() / grad_norm.max(1e-30);
    Ok(GradientReport {
        euclid_norm_sq,
        riemann_norm_sq,
        rank1_residual,
        nat_grad_norm: nat.norm(),
        cutoff_used: rel_cutoff,
        retained_modes: kept,
        degenerate: false,
    })
}

/// Spectrum and gradient report for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronAnalysis {
    pub neuron: usize,
    pub spectrum: FisherSpectrum,
    pub report: GradientReport,
}

pub fn analyze_neuron(
    alpha_col: &DVector<f64>,
    k: &GramMatrix,
    targets: &NeuronTargets,
    lambda: f64,
    rel_cutoff: f64,
) -> Result<(FisherSpectrum, GradientReport)> {
    let grad = loss_gradient(alpha_col, k, targets, lambda)?;
    let spec = spectrum(&fisher_matrix(alpha_col, k)?)?;
    let report = report_for_gradient(&grad, &spec, rel_cutoff)?;
    Ok((spec, report))
}

pub fn gradient_report(
    alpha_col: &DVector<f64>,
    k: &GramMatrix,
    targets: &NeuronTargets,
    lambda: f64,
    rel_cutoff: f64,
) -> Result<GradientReport> {
    analyze_neuron(alpha_col, k, targets, lambda, rel_cutoff).map(|(_, r)| r)
}

/// Analyzes every neuron of a trained network, in neuron order.
pub fn analyze_network(
    patterns: &PatternSet,
    weights: &DualWeights,
    rel_cutoff: f64,
) -> Result<Vec<NeuronAnalysis>> {
    if weights.num_patterns() != patterns.num_patterns()
        || weights.num_neurons() != patterns.num_neurons()
    {
        return Err(Error::Dimension(format!(
            "weights are {}x{}, patterns are {}x{}",
            weights.num_patterns(),
            weights.num_neurons(),
            patterns.num_patterns(),
            patterns.num_neurons()
        )));
    }
    let k = gram(patterns, &KernelConfig::rbf(weights.gamma)?)?;
    analyze_network_with_gram(patterns, weights, &k, rel_cutoff)
}

pub fn analyze_network_with_gram(
    patterns: &PatternSet,
    weights: &DualWeights,
    k: &GramMatrix,
    rel_cutoff: f64,
) -> Result<Vec<NeuronAnalysis>> {
    (0..weights.num_neurons())
        .into_par_iter()
        .map(|i| {
            let targets = NeuronTargets::for_neuron(patterns, i);
            let (spectrum, report) =
                analyze_neuron(&weights.column(i), k, &targets, weights.lambda, rel_cutoff)
                    .map_err(|e| match e {
                        Error::Numeric(msg) => Error::Numeric(format!("neuron {i}: {msg}")),
                        other => other,
                    })?;
            Ok(NeuronAnalysis {
                neuron: i,
                spectrum,
                report,
            })
        })
        .collect()
}

/// `neuron,k,lambda_k,lambda_k_over_lambda_1`, with `k` starting at 1.
pub fn spectrum_csv(analyses: &[NeuronAnalysis]) -> String {
    let mut out = String::from("neuron,k,lambda_k,lambda_k_over_lambda_1\n");
    for a in analyses {
        for (k, (lambda, ratio)) in a
            .spectrum
            .eigenvalues
            .iter()
            .zip(a.spectrum.normalized())
            .enumerate()
        {
            let _ = writeln!(out, "{},{},{},{}", a.neuron, k + 1, lambda, ratio);
        }
    }
    out
}

pub fn report_csv(analyses: &[NeuronAnalysis]) -> String {
    let mut out = String::from(
        "neuron,euclid_norm_sq,riemann_norm_sq,nat_grad_norm,rank1_residual,lambda_max,d_eff,retained_modes,cutoff\n",
    );
    for a in analyses {
        let r = &a.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            a.neuron,
            r.euclid_norm_sq,
            r.riemann_norm_sq,
            r.nat_grad_norm,
            r.rank1_residual,
            a.spectrum.lambda_max,
            a.spectrum.d_eff,
            r.retained_modes,
            r.cutoff_used
        );
    }
    out
}
