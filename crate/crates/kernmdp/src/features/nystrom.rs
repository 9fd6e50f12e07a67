//! Nyström embeddings over a variance-sampled dictionary.
//!
//! Each candidate point (a visited state-action pair) is included in the
//! dictionary independently with probability `min{η·σ̃²(z), 1}`, where σ̃² is
//! the posterior variance under the previous episode's model: points the
//! model is already sure about are rarely kept. The embedding of a new input
//! is `φ̃(x) = (K_D^{1/2})† k_D(x)`, the projection of `k(x, ·)` onto the
//! span of the dictionary, computed through a symmetric eigendecomposition
//! with a relative eigenvalue cutoff.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Eigenvalues below this fraction of the largest are treated as zero when
/// inverting the dictionary Gram matrix.
pub const EIGENVALUE_CUTOFF: f64 = 1e-10;

/// Inflation factor `λ = (1+ε)/(1−ε)` of the variance sandwich.
pub fn lambda_for(epsilon: f64) -> f64 {
    (1.0 + epsilon) / (1.0 - epsilon)
}

/// Oversampling rate `η = 6λ·ln(12T/δ)/ε²` controlling inclusion
/// probabilities.
pub fn eta_for(epsilon: f64, delta: f64, horizon_t: usize) -> f64 {
    6.0 * lambda_for(epsilon) * (12.0 * horizon_t as f64 / delta).ln() / (epsilon * epsilon)
}

/// One sampling decision, kept for reproducibility dumps and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionRecord {
    pub point: Vec<f64>,
    pub probability: f64,
    pub accepted: bool,
}

/// A sampled dictionary with its precomputed projection factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromDictionary {
    anchors: Vec<Vec<f64>>,
    /// `rank × anchors` factor equal to `diag(λ_i^{-1/2})·U_rᵀ` from the
    /// eigendecomposition of the anchor Gram matrix.
    projection: Vec<Vec<f64>>,
    pub inclusion_log: Vec<InclusionRecord>,
    pub eta: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

/// Sample a dictionary from `candidates` with per-point inclusion
/// probability `min{eta·variance, 1}` and precompute its projection factor.
/// An empty acceptance yields a usable zero-map dictionary.
pub fn resample_dictionary<R: Rng + ?Sized>(
    kernel: &KernelSpec,
    candidates: &[Vec<f64>],
    variances: &[f64],
    eta: f64,
    lambda: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<NystromDictionary> {
    if candidates.len() != variances.len() {
        return Err(Error::Dimension { expected: candidates.len(), got: variances.len() });
    }
    if let Some(bad) = variances.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Input(format!("variances must be non-negative, got {bad}")));
    }
    let mut anchors = Vec::new();
    let mut inclusion_log = Vec::with_capacity(candidates.len());
    for (point, &var) in candidates.iter().zip(variances) {
        let probability = (eta * var).min(1.0);
        let accepted = rng.gen_range(0.0..1.0) < probability;
        if accepted {
            anchors.push(point.clone());
        }
        inclusion_log.push(InclusionRecord { point: point.clone(), probability, accepted });
    }
    let projection = projection_factor(kernel, &anchors)?;
    Ok(NystromDictionary { anchors, projection, inclusion_log, eta, lambda, epsilon })
}

fn projection_factor(kernel: &KernelSpec, anchors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = anchors.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    kernel.validate(anchors[0].len())?;
    let mut gram = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let v = kernel.eval_unchecked(&anchors[i], &anchors[j]);
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }
    let (vals, vecs) = gram
        .eigh(UPLO::Lower)
        .map_err(|_| Error::Factorization { context: "dictionary gram matrix", size: d })?;
    let cutoff = EIGENVALUE_CUTOFF * vals.iter().fold(0.0f64, |m, &v| m.max(v)).max(f64::MIN_POSITIVE);
    let mut rows = Vec::new();
    for (idx, &val) in vals.iter().enumerate() {
        if val > cutoff {
            let scale = 1.0 / val.sqrt();
            rows.push(vecs.column(idx).iter().map(|&u| scale * u).collect());
        }
    }
    Ok(rows)
}

impl NystromDictionary {
    /// Dictionary over an already-chosen anchor set — for callers that run
    /// the inclusion draws themselves. The inclusion log stays empty.
    pub fn from_anchors(
        kernel: &KernelSpec,
        anchors: Vec<Vec<f64>>,
        eta: f64,
        lambda: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let projection = projection_factor(kernel, &anchors)?;
        Ok(Self { anchors, projection, inclusion_log: Vec::new(), eta, lambda, epsilon })
    }

    /// Dictionary with no anchors: the embedding is the zero map and callers
    /// fall back to the prior variance.
    pub fn empty(eta: f64, lambda: f64, epsilon: f64) -> Self {
        Self {
            anchors: Vec::new(),
            projection: Vec::new(),
            inclusion_log: Vec::new(),
            eta,
            lambda,
            epsilon,
        }
    }

    /// Number of accepted anchor points.
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    /// Embedding dimension: the retained rank of the anchor Gram matrix
    /// (0 for an empty dictionary).
    pub fn dim(&self) -> usize {
        self.projection.len()
    }

    /// Project `k(x, ·)` onto the dictionary span: returns
    /// `(K_D^{1/2})†·k_D(x)`, a vector of length [`dim`](Self::dim).
    pub fn embed(&self, kernel: &KernelSpec, x: &[f64]) -> Result<Array1<f64>> {
        if self.is_empty() {
            return Ok(Array1::zeros(0));
        }
        let kd: Vec<f64> =
            self.anchors.iter().map(|a| kernel.eval(a, x)).collect::<Result<_>>()?;
        let mut out = Array1::zeros(self.projection.len());
        for (r, row) in self.projection.iter().enumerate() {
            out[r] = row.iter().zip(&kd).map(|(p, k)| p * k).sum();
        }
        Ok(out)
    }
}
