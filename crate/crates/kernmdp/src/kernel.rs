//! Kernel functions and exact Gaussian process posteriors.
//!
//! A [`KernelSpec`] describes a positive-semidefinite kernel on a box-shaped
//! input domain: squared-exponential, Matérn (half-integer orders), normalized
//! linear, and additive/product composites whose leaves each act on a slice of
//! the input vector. Every family is normalized so that `k(x, x) <= 1` on the
//! unit box, which downstream confidence-width formulas rely on.
//!
//! A [`GramState`] holds a set of visited inputs together with the Cholesky
//! factor of `K + ridge*I`. It answers exact posterior mean/variance queries
//! and reports the achieved information gain `0.5 * ln det(I + K/ridge)`, the
//! quantity the width and dictionary-size diagnostics are stated in.

use ndarray::prelude::*;
use ndarray_linalg::{Cholesky, Diag, SolveTriangular, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Kernel specification
// ---------------------------------------------------------------------------

/// One leaf of an additive or product composite: a kernel applied to the
/// half-open coordinate range `slice = [start, end)` of the input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPart {
    pub kernel: KernelSpec,
    pub slice: [usize; 2],
}

/// Serializable kernel description.
///
/// The JSON form tags the family, e.g. `{"family": "se", "lengthscale": 0.2}`
/// or `{"family": "matern", "lengthscale": 0.5, "nu": 1.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k(x, y) = exp(-r^2 / (2 l^2))` with `r = |x - y|`.
    Se { lengthscale: f64 },
    /// Matérn kernel in the closed half-integer forms, `nu` in {0.5, 1.5, 2.5}:
    ///
    /// - `nu = 0.5`: `exp(-r/l)`
    /// - `nu = 1.5`: `(1 + sqrt(3) r/l) exp(-sqrt(3) r/l)`
    /// - `nu = 2.5`: `(1 + sqrt(5) r/l + 5 r^2/(3 l^2)) exp(-sqrt(5) r/l)`
    Matern { lengthscale: f64, nu: f64 },
    /// Dot product divided by the input dimension, so the diagonal stays
    /// within `[0, 1]` on the unit box.
    Linear,
    /// Mean of the leaf kernels (sum rescaled by `1/c` for `c` leaves), each
    /// applied to its own input slice.
    Additive { parts: Vec<KernelPart> },
    /// Product of the leaf kernels, each applied to its own input slice.
    Product { parts: Vec<KernelPart> },
}

impl KernelSpec {
    /// Check structural validity against inputs of width `input_dim`:
    /// positive finite lengthscales, a supported Matérn order, non-empty
    /// composites, and slices that stay inside the input vector.
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if input_dim == 0 {
            return Err(Error::Input("kernel input dimension must be >= 1".into()));
        }
        match self {
            KernelSpec::Se { lengthscale } => check_lengthscale(*lengthscale),
            KernelSpec::Matern { lengthscale, nu } => {
                check_lengthscale(*lengthscale)?;
                if ![0.5, 1.5, 2.5].contains(nu) {
                    return Err(Error::Input(format!(
                        "matern order nu={nu} unsupported; use 0.5, 1.5, or 2.5"
                    )));
                }
                Ok(())
            }
            KernelSpec::Linear => Ok(()),
            KernelSpec::Additive { parts } | KernelSpec::Product { parts } => {
                if parts.is_empty() {
                    return Err(Error::Input("composite kernel needs at least one part".into()));
                }
                for part in parts {
                    let [start, end] = part.slice;
                    if start >= end || end > input_dim {
                        return Err(Error::Input(format!(
                            "kernel slice [{start}, {end}) invalid for input dimension {input_dim}"
                        )));
                    }
                    part.kernel.validate(end - start)?;
                }
                Ok(())
            }
        }
    }

    /// Evaluate the kernel at a pair of points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::Dimension { expected: x.len(), got: y.len() });
        }
        if x.is_empty() {
            return Err(Error::Input("kernel inputs must be non-empty".into()));
        }
        if !x.iter().chain(y).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("kernel input".into()));
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluation body without the per-call shape checks; used by the Gram
    /// builders after validating once.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Se { lengthscale } => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-r2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelSpec::Matern { lengthscale, nu } => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                let s = r2.sqrt() / lengthscale;
                if *nu == 0.5 {
                    (-s).exp()
                } else if *nu == 1.5 {
                    let u = 3f64.sqrt() * s;
                    (1.0 + u) * (-u).exp()
                } else {
                    let u = 5f64.sqrt() * s;
                    (1.0 + u + u * u / 3.0) * (-u).exp()
                }
            }
            KernelSpec::Linear => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                dot / x.len() as f64
            }
            KernelSpec::Additive { parts } => {
                let sum: f64 = parts
                    .iter()
                    .map(|p| p.kernel.eval_unchecked(slice_of(x, p), slice_of(y, p)))
                    .sum();
                sum / parts.len() as f64
            }
            KernelSpec::Product { parts } => parts
                .iter()
                .map(|p| p.kernel.eval_unchecked(slice_of(x, p), slice_of(y, p)))
                .product(),
        }
    }
}

fn slice_of<'a>(x: &'a [f64], part: &KernelPart) -> &'a [f64] {
    &x[part.slice[0]..part.slice[1]]
}

fn check_lengthscale(l: f64) -> Result<()> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("lengthscale must be positive and finite, got {l}")))
    }
}

// ---------------------------------------------------------------------------
// Gram matrices and Cholesky with jitter escalation
// ---------------------------------------------------------------------------

/// Lower-Cholesky factorization of a symmetric matrix, retrying with a
/// diagonal jitter escalating from 1e-10 to 1e-6 (one decade per attempt)
/// when the bare factorization fails. Returns the factor and the jitter that
/// was actually applied (0.0 on a clean first attempt).
pub fn cholesky_with_jitter(a: &Array2<f64>, context: &'static str) -> Result<(Array2<f64>, f64)> {
    if let Ok(l) = a.cholesky(UPLO::Lower) {
        return Ok((l, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-6 {
        let mut bumped = a.clone();
        for i in 0..bumped.nrows() {
            bumped[[i, i]] += jitter;
        }
        if let Ok(l) = bumped.cholesky(UPLO::Lower) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Factorization { context, size: a.nrows() })
}

/// Visited inputs plus the factored regularized Gram matrix `K + ridge*I`.
#[derive(Debug, Clone)]
pub struct GramState {
    kernel: KernelSpec,
    points: Vec<Vec<f64>>,
    ridge: f64,
    gram: Array2<f64>,
    chol: Array2<f64>,
    jitter: f64,
}

impl GramState {
    /// Build the Gram matrix of `points` under `kernel` and factor
    /// `K + ridge*I`. An empty point set is allowed and yields a usable
    /// prior-only state.
    pub fn build(kernel: KernelSpec, points: Vec<Vec<f64>>, ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge > 0.0) {
            return Err(Error::Input(format!("ridge must be positive and finite, got {ridge}")));
        }
        if let Some(first) = points.first() {
            kernel.validate(first.len())?;
            if points.iter().any(|p| p.len() != first.len()) {
                return Err(Error::Input("gram points must share one dimension".into()));
            }
        }
        let t = points.len();
        let mut gram = Array2::zeros((t, t));
        let rows = crate::parallel::map_indexed(t, |i| {
            let mut row = vec![0.0; t];
            for (j, q) in points.iter().enumerate().take(i + 1) {
                row[j] = kernel.eval_unchecked(&points[i], q);
            }
            row
        });
        for (i, row) in rows.iter().enumerate() {
            for j in 0..=i {
                gram[[i, j]] = row[j];
                gram[[j, i]] = row[j];
            }
        }
        let mut reg = gram.clone();
        for i in 0..t {
            reg[[i, i]] += ridge;
        }
        let (chol, jitter) = if t > 0 {
            cholesky_with_jitter(&reg, "gram state build")?
        } else {
            (Array2::zeros((0, 0)), 0.0)
        };
        Ok(Self { kernel, points, ridge, gram, chol, jitter })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// Jitter that the factorization needed; 0.0 in the common case.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Kernel vector from the visited points to a query.
    pub fn kernel_vector(&self, query: &[f64]) -> Result<Array1<f64>> {
        if let Some(first) = self.points.first() {
            if query.len() != first.len() {
                return Err(Error::Dimension { expected: first.len(), got: query.len() });
            }
        }
        Ok(Array1::from_iter(
            self.points.iter().map(|p| self.kernel.eval_unchecked(p, query)),
        ))
    }

    /// Exact posterior mean and variance at `query` for noisy targets
    /// regularized by `ridge`:
    ///
    /// `mean = k(q)^T (K + ridge I)^-1 y`
    /// `var  = k(q, q) - k(q)^T (K + ridge I)^-1 k(q)`
    ///
    /// With no data this is the prior `(0, k(q, q))`. Variance is clamped at
    /// zero against floating-point cancellation.
    pub fn exact_posterior(&self, targets: &[f64], query: &[f64]) -> Result<(f64, f64)> {
        let prior = self.kernel.eval(query, query)?;
        if self.is_empty() {
            if !targets.is_empty() {
                return Err(Error::Dimension { expected: 0, got: targets.len() });
            }
            return Ok((0.0, prior));
        }
        if targets.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: targets.len() });
        }
        let kq = self.kernel_vector(query)?;
        let half = self
            .chol
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &kq)
            .map_err(|_| Error::Factorization { context: "posterior solve", size: self.len() })?;
        let y = Array1::from_iter(targets.iter().copied());
        let wy = self
            .chol
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &y)
            .map_err(|_| Error::Factorization { context: "posterior solve", size: self.len() })?;
        let mean = half.dot(&wy);
        let var = (prior - half.dot(&half)).max(0.0);
        Ok((mean, var))
    }

    /// Posterior means and the full joint posterior covariance over a batch
    /// of queries (kernel scale, no noise factor):
    ///
    /// `mean_i = k(q_i)^T (K + ridge I)^-1 y`
    /// `cov_ij = k(q_i, q_j) - k(q_i)^T (K + ridge I)^-1 k(q_j)`
    ///
    /// One factorization solve serves every query, so the cost is
    /// `O(t^2 q + t q^2)` instead of `q` independent `O(t^2)` solves plus a
    /// covariance that per-query calls cannot produce at all.
    pub fn batch_posterior(
        &self,
        targets: &[f64],
        queries: &[Vec<f64>],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let q = queries.len();
        let mut prior = Array2::zeros((q, q));
        for i in 0..q {
            for j in 0..=i {
                let v = self.kernel.eval(&queries[i], &queries[j])?;
                prior[[i, j]] = v;
                prior[[j, i]] = v;
            }
        }
        if self.is_empty() {
            if !targets.is_empty() {
                return Err(Error::Dimension { expected: 0, got: targets.len() });
            }
            return Ok((Array1::zeros(q), prior));
        }
        if targets.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: targets.len() });
        }
        let t = self.len();
        let mut cross = Array2::zeros((t, q));
        for (col, query) in queries.iter().enumerate() {
            let kq = self.kernel_vector(query)?;
            cross.column_mut(col).assign(&kq);
        }
        let half = self
            .chol
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &cross)
            .map_err(|_| Error::Factorization { context: "batch posterior solve", size: t })?;
        let y = Array1::from_iter(targets.iter().copied());
        let wy = self
            .chol
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &y)
            .map_err(|_| Error::Factorization { context: "batch posterior solve", size: t })?;
        let means = half.t().dot(&wy);
        let cov = &prior - &half.t().dot(&half);
        Ok((means, cov))
    }

    /// Achieved information gain of the visited set,
    /// `0.5 * ln det(I + K / ridge)`, computed from the Cholesky diagonal.
    /// Empty state gives 0.
    pub fn log_det_information(&self) -> f64 {
        let t = self.len();
        if t == 0 {
            return 0.0;
        }
        let log_det_reg: f64 = (0..t).map(|i| self.chol[[i, i]].ln()).sum::<f64>() * 2.0;
        0.5 * (log_det_reg - t as f64 * self.ridge.ln())
    }
}
