//! Feature-space ridge regression with confidence widths.
//!
//! Both agents model the reward and the transition mean through the same
//! machinery: observations are embedded by a [`FeatureMap`] (QFF or Nyström),
//! a regularized least-squares posterior is maintained over the weights, and
//! a closed-form width `β` turns posterior deviations into confidence bands.
//!
//! The transition channel with `m` outputs is handled as scalar regression on
//! stacked inputs `(z, i)` — the output index is appended as one extra input
//! coordinate — so a single posterior covers all coordinates and the width
//! formula sees one log-determinant.

use ndarray::prelude::*;
use ndarray_linalg::{Diag, SolveTriangular, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::nystrom::NystromDictionary;
use crate::features::qff::QffMap;
use crate::kernel::{cholesky_with_jitter, KernelSpec};

/// The embedding used by a channel. QFF is a fixed map; Nyström depends on
/// the sampled dictionary and needs the kernel to evaluate `k_D(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    Qff { map: QffMap },
    Nystrom { dict: NystromDictionary, kernel: KernelSpec },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Qff { map } => map.dim(),
            FeatureMap::Nystrom { dict, .. } => dict.dim(),
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Array1<f64>> {
        match self {
            FeatureMap::Qff { map } => map.embed(x),
            FeatureMap::Nystrom { dict, kernel } => dict.embed(kernel, x),
        }
    }

    /// Prior variance at a point: `k(x,x)` for Nyström, `φ(x)ᵀφ(x)` for QFF
    /// (which approximates `k(x,x)` by construction).
    pub fn prior_variance(&self, x: &[f64]) -> Result<f64> {
        match self {
            FeatureMap::Qff { map } => {
                let phi = map.embed(x)?;
                Ok(phi.dot(&phi))
            }
            FeatureMap::Nystrom { kernel, .. } => kernel.eval(x, x),
        }
    }
}

/// Regularized least-squares state over feature weights:
/// `Ṽ = Φ̃ᵀΦ̃ + ridge·I`, `θ̃ = Ṽ⁻¹Φ̃ᵀy`.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    dim: usize,
    ridge: f64,
    precision: Array2<f64>,
    chol: Array2<f64>,
    moment: Array1<f64>,
    theta: Array1<f64>,
    logdet_ratio: f64,
    observations: usize,
}

impl PosteriorState {
    pub fn new(dim: usize, ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge > 0.0) {
            return Err(Error::Input(format!("ridge must be positive and finite, got {ridge}")));
        }
        let precision = Array2::eye(dim) * ridge;
        let chol = Array2::eye(dim) * ridge.sqrt();
        Ok(Self {
            dim,
            ridge,
            precision,
            chol,
            moment: Array1::zeros(dim),
            theta: Array1::zeros(dim),
            logdet_ratio: 0.0,
            observations: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    pub fn precision(&self) -> &Array2<f64> {
        &self.precision
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    /// `ln det(Ṽ) − ln det(ridge·I)`; zero with no data, non-decreasing as
    /// rows arrive.
    pub fn logdet_ratio(&self) -> f64 {
        self.logdet_ratio
    }

    /// Append observation rows, returning the updated state. Feature width
    /// must match; a width change means the feature map was rebuilt and the
    /// caller must reconstruct the posterior from raw history instead.
    pub fn append_observations(
        &self,
        features: ArrayView2<f64>,
        targets: ArrayView1<f64>,
    ) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::Dimension { expected: features.nrows(), got: targets.len() });
        }
        if features.nrows() == 0 {
            return Ok(self.clone());
        }
        if features.ncols() != self.dim {
            return Err(Error::RebuildRequired { expected: self.dim, got: features.ncols() });
        }
        if self.dim == 0 {
            let mut next = self.clone();
            next.observations += features.nrows();
            return Ok(next);
        }
        let precision = &self.precision + &features.t().dot(&features);
        let moment = &self.moment + &features.t().dot(&targets);
        let (chol, _) = cholesky_with_jitter(&precision, "posterior precision")?;
        let theta = solve_spd(&chol, &moment)?;
        let logdet: f64 = (0..self.dim).map(|i| chol[[i, i]].ln()).sum::<f64>() * 2.0;
        let logdet_ratio = logdet - self.dim as f64 * self.ridge.ln();
        Ok(Self {
            dim: self.dim,
            ridge: self.ridge,
            precision,
            chol,
            moment,
            theta,
            logdet_ratio,
            observations: self.observations + features.nrows(),
        })
    }

    /// Posterior mean of the function value at an embedded point.
    pub fn mean(&self, phi: &Array1<f64>) -> f64 {
        self.theta.dot(phi)
    }

    /// `φᵀṼ⁻¹φ`, the normalized predictive variance of the weights along φ.
    pub fn quad_form(&self, phi: &Array1<f64>) -> Result<f64> {
        if self.dim == 0 {
            return Ok(0.0);
        }
        let half = self
            .chol
            .solve_triangular(UPLO::Lower, Diag::NonUnit, phi)
            .map_err(|_| Error::Factorization { context: "posterior quad form", size: self.dim })?;
        Ok(half.dot(&half))
    }

    /// Lower-Cholesky factor of the precision matrix.
    pub fn chol(&self) -> &Array2<f64> {
        &self.chol
    }
}

fn solve_spd(chol: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let n = chol.nrows();
    let half = chol
        .solve_triangular(UPLO::Lower, Diag::NonUnit, rhs)
        .map_err(|_| Error::Factorization { context: "spd solve forward", size: n })?;
    let upper = chol.t().to_owned();
    upper
        .solve_triangular(UPLO::Upper, Diag::NonUnit, &half)
        .map_err(|_| Error::Factorization { context: "spd solve backward", size: n })
}

/// What a channel models: a scalar reward, or an `m`-output transition mean
/// regressed through stacked `(z, index)` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    Reward,
    Transition { output_dim: usize },
}

impl ChannelKind {
    pub fn output_dim(&self) -> usize {
        match self {
            ChannelKind::Reward => 1,
            ChannelKind::Transition { output_dim } => *output_dim,
        }
    }
}

/// Confidence-band half-width for a Nyström (dictionary) channel whose
/// posterior has the given information log-determinant ratio:
/// `(σ/√ridge)·√(2(ln(6/δ) + ½·logdet)) + B·(1 + 1/√(1−ε))`.
pub fn nystrom_width(
    noise_scale: f64,
    ridge: f64,
    rkhs_bound: f64,
    epsilon: f64,
    delta: f64,
    logdet_ratio: f64,
) -> f64 {
    noise_scale / ridge.sqrt() * (2.0 * ((6.0 / delta).ln() + 0.5 * logdet_ratio)).sqrt()
        + rkhs_bound * (1.0 + 1.0 / (1.0 - epsilon).sqrt())
}

/// Confidence-band half-width for a quadrature-feature channel:
/// `B + (σ/√ridge)·√(2(ln(3/δ) + ½·logdet))`.
pub fn qff_width(
    noise_scale: f64,
    ridge: f64,
    rkhs_bound: f64,
    delta: f64,
    logdet_ratio: f64,
) -> f64 {
    rkhs_bound
        + noise_scale / ridge.sqrt() * (2.0 * ((3.0 / delta).ln() + 0.5 * logdet_ratio)).sqrt()
}

/// Append the output-index coordinate to a state-action vector. With one
/// output the coordinate is constantly zero; otherwise indices spread evenly
/// over [0, 1] so an index-sensitive kernel factor can separate them.
pub fn stacked_input(z: &[f64], index: usize, output_dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(z.len() + 1);
    v.extend_from_slice(z);
    let coord =
        if output_dim <= 1 { 0.0 } else { index as f64 / (output_dim - 1) as f64 };
    v.push(coord);
    v
}

/// A regression channel with its confidence-band bookkeeping.
#[derive(Debug, Clone)]
pub struct ConfidenceChannel {
    pub kind: ChannelKind,
    pub map: FeatureMap,
    pub posterior: PosteriorState,
    pub noise_scale: f64,
    pub rkhs_bound: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub horizon_t: usize,
    /// Coefficient of the QFF-mode additive slack `c·B/T`.
    pub slack_coeff: f64,
}

impl ConfidenceChannel {
    /// Fresh channel with no observations.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ChannelKind,
        map: FeatureMap,
        ridge: f64,
        noise_scale: f64,
        rkhs_bound: f64,
        epsilon: f64,
        delta: f64,
        horizon_t: usize,
        slack_coeff: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Input(format!("epsilon must be in [0, 1), got {epsilon}")));
        }
        if !(0.0 < delta && delta < 6.0) {
            return Err(Error::Input(format!("delta must be in (0, 6), got {delta}")));
        }
        let posterior = PosteriorState::new(map.dim(), ridge)?;
        Ok(Self {
            kind,
            map,
            posterior,
            noise_scale,
            rkhs_bound,
            epsilon,
            delta,
            horizon_t,
            slack_coeff,
        })
    }

    /// Build a channel and feed it the full raw history in one step — the
    /// per-episode reconstruction path used whenever the feature map changed.
    #[allow(clippy::too_many_arguments)]
    pub fn from_history(
        kind: ChannelKind,
        map: FeatureMap,
        ridge: f64,
        noise_scale: f64,
        rkhs_bound: f64,
        epsilon: f64,
        delta: f64,
        horizon_t: usize,
        slack_coeff: f64,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<Self> {
        let mut channel = Self::new(
            kind,
            map,
            ridge,
            noise_scale,
            rkhs_bound,
            epsilon,
            delta,
            horizon_t,
            slack_coeff,
        )?;
        channel.append(inputs, targets)?;
        Ok(channel)
    }

    /// Embed raw inputs (already stacked for transition channels) and fold
    /// them into the posterior.
    pub fn append(&mut self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<()> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension { expected: inputs.len(), got: targets.len() });
        }
        if inputs.is_empty() {
            return Ok(());
        }
        let d = self.map.dim();
        let mut features = Array2::zeros((inputs.len(), d));
        for (r, x) in inputs.iter().enumerate() {
            let phi = self.map.embed(x)?;
            features.row_mut(r).assign(&phi);
        }
        let y = Array1::from_iter(targets.iter().copied());
        self.posterior = self.posterior.append_observations(features.view(), y.view())?;
        Ok(())
    }

    /// Posterior mean and deviation at a raw input. The deviation is the
    /// mode-appropriate σ̃: Nyström keeps the unexplained prior mass
    /// `k(z,z) − φ̃ᵀφ̃` while QFF's map is global so only the weight
    /// uncertainty remains.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let phi = self.map.embed(x)?;
        let mean = self.posterior.mean(&phi);
        let quad = self.posterior.quad_form(&phi)?;
        let var = match &self.map {
            FeatureMap::Nystrom { kernel, .. } => {
                (kernel.eval(x, x)? - phi.dot(&phi)).max(0.0) + self.posterior.ridge() * quad
            }
            FeatureMap::Qff { .. } => self.posterior.ridge() * quad,
        };
        Ok((mean, var.max(0.0).sqrt()))
    }

    /// Per-output means and deviations of a transition channel at a
    /// state-action pair (before index stacking).
    pub fn predict_vector(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.kind.output_dim();
        let mut means = Vec::with_capacity(m);
        let mut devs = Vec::with_capacity(m);
        for i in 0..m {
            let (mu, sigma) = self.predict(&stacked_input(z, i, m))?;
            means.push(mu);
            devs.push(sigma);
        }
        Ok((means, devs))
    }

    /// Confidence multiplier for the current posterior. Nyström:
    /// `(σ/√ridge)·√(2(ln(6/δ) + ½·logdet_ratio)) + B(1 + 1/√(1−ε))`;
    /// QFF: `B + (σ/√ridge)·√(2(ln(3/δ) + ½·logdet_ratio))`.
    pub fn compute_width(&self) -> f64 {
        match &self.map {
            FeatureMap::Nystrom { .. } => nystrom_width(
                self.noise_scale,
                self.posterior.ridge(),
                self.rkhs_bound,
                self.epsilon,
                self.delta,
                self.posterior.logdet_ratio(),
            ),
            FeatureMap::Qff { .. } => qff_width(
                self.noise_scale,
                self.posterior.ridge(),
                self.rkhs_bound,
                self.delta,
                self.posterior.logdet_ratio(),
            ),
        }
    }

    /// Additive band slack: `c·B/T` in QFF mode, zero in Nyström mode.
    pub fn slack(&self) -> f64 {
        match &self.map {
            FeatureMap::Qff { .. } => {
                self.slack_coeff * self.rkhs_bound / self.horizon_t as f64
            }
            FeatureMap::Nystrom { .. } => 0.0,
        }
    }

    /// Whether a scalar candidate value is inside the band at `x`.
    pub fn membership_scalar(&self, value: f64, x: &[f64]) -> Result<bool> {
        let (mean, sigma) = self.predict(x)?;
        Ok((value - mean).abs() <= self.compute_width() * sigma + self.slack())
    }

    /// Whether a candidate output vector is inside the joint band at a
    /// state-action pair: `‖v − μ̃(z)‖₂ ≤ β·‖σ̃(z)‖₂ + slack`.
    pub fn membership_vector(&self, values: &[f64], z: &[f64]) -> Result<bool> {
        let m = self.kind.output_dim();
        if values.len() != m {
            return Err(Error::Dimension { expected: m, got: values.len() });
        }
        let (means, devs) = self.predict_vector(z)?;
        let diff: f64 = values
            .iter()
            .zip(&means)
            .map(|(v, mu)| (v - mu) * (v - mu))
            .sum::<f64>()
            .sqrt();
        let band: f64 = devs.iter().map(|s| s * s).sum::<f64>().sqrt();
        Ok(diff <= self.compute_width() * band + self.slack())
    }
}
