//! Quadrature Fourier features for squared-exponential kernels.
//!
//! The SE kernel's spectral density is Gaussian, so Gauss–Hermite quadrature
//! of the Fourier integral gives a deterministic feature map: with `d̄` nodes
//! per input dimension and `q` input dimensions, the map stacks `d = d̄^q`
//! cosine features and `d` sine features,
//!
//! `φ(x) = [√ν_i · cos((√2/l)·ω_iᵀx), √ν_i · sin((√2/l)·ω_iᵀx)]`,
//!
//! where the `ω_i` range over the q-fold Cartesian product of the Hermite
//! roots and `ν_i` are the matching product quadrature weights. Then
//! `φ(x)ᵀφ(y) ≈ k_SE(x, y)` uniformly, with the analytic error bound of
//! [`error_bound`].

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported Hermite order; root/weight computation is validated up
/// to here and degrades numerically beyond it.
pub const MAX_HERMITE_ORDER: usize = 64;

/// Hard cap on the per-map frequency count `d̄^q`.
pub const MAX_FREQUENCIES: usize = 1_000_000;

/// All real roots of the physicists' Hermite polynomial `H_order`, sorted
/// ascending. Computed as eigenvalues of the Golub–Welsch tridiagonal matrix
/// and symmetrized about zero.
pub fn hermite_roots(order: usize) -> Result<Vec<f64>> {
    if order == 0 || order > MAX_HERMITE_ORDER {
        return Err(Error::Input(format!(
            "hermite order must be in 1..={MAX_HERMITE_ORDER}, got {order}"
        )));
    }
    if order == 1 {
        return Ok(vec![0.0]);
    }
    let mut jacobi = Array2::zeros((order, order));
    for k in 1..order {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[[k - 1, k]] = b;
        jacobi[[k, k - 1]] = b;
    }
    let (vals, _) = jacobi
        .eigh(UPLO::Lower)
        .map_err(|_| Error::Factorization { context: "hermite jacobi matrix", size: order })?;
    let mut roots: Vec<f64> = vals.to_vec();
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // enforce exact symmetry so downstream products pair up cleanly
    for i in 0..order / 2 {
        let r = 0.5 * (roots[order - 1 - i] - roots[i]);
        roots[i] = -r;
        roots[order - 1 - i] = r;
    }
    if order % 2 == 1 {
        roots[order / 2] = 0.0;
    }
    Ok(roots)
}

/// Evaluate the physicists' Hermite polynomial `H_order` at `x` by the
/// three-term recurrence.
pub fn hermite_eval(order: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if order == 0 {
        return prev;
    }
    let mut cur = 2.0 * x;
    for n in 1..order {
        let next = 2.0 * x * cur - 2.0 * n as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Quadrature weights paired with [`hermite_roots`]:
/// `ν_j = 2^{d̄−1}·d̄! / (d̄²·H_{d̄−1}(ω_j)²)`. The weights are positive and
/// sum to 1.
pub fn hermite_weights(order: usize, roots: &[f64]) -> Result<Vec<f64>> {
    if roots.len() != order {
        return Err(Error::Dimension { expected: order, got: roots.len() });
    }
    let factorial: f64 = (1..=order).map(|v| v as f64).product();
    let scale = 2f64.powi(order as i32 - 1) * factorial / (order * order) as f64;
    Ok(roots
        .iter()
        .map(|&r| {
            let h = hermite_eval(order - 1, r);
            scale / (h * h)
        })
        .collect())
}

/// Frequencies and weights of a fixed SE feature map on `q` input dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QffMap {
    /// `d × q` quadrature nodes, the Cartesian product of the 1-D roots.
    pub frequencies: Vec<Vec<f64>>,
    /// Product quadrature weight per frequency; sums to 1.
    pub weights: Vec<f64>,
    pub lengthscale: f64,
    pub input_dim: usize,
    pub nodes_per_dim: usize,
}

/// Build the feature map for an SE kernel with the given lengthscale on
/// `input_dim`-dimensional inputs, using `nodes_per_dim` Hermite nodes per
/// dimension. The embedding dimension is `2 · nodes_per_dim^input_dim`.
pub fn build_qff(lengthscale: f64, input_dim: usize, nodes_per_dim: usize) -> Result<QffMap> {
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::Input(format!(
            "lengthscale must be positive and finite, got {lengthscale}"
        )));
    }
    if input_dim == 0 {
        return Err(Error::Input("input_dim must be >= 1".into()));
    }
    let mut d: usize = 1;
    for _ in 0..input_dim {
        d = d.checked_mul(nodes_per_dim).unwrap_or(usize::MAX);
        if d > MAX_FREQUENCIES {
            return Err(Error::Input(format!(
                "frequency count {nodes_per_dim}^{input_dim} exceeds the cap of {MAX_FREQUENCIES}"
            )));
        }
    }
    let roots = hermite_roots(nodes_per_dim)?;
    let weights_1d = hermite_weights(nodes_per_dim, &roots)?;
    let mut frequencies = Vec::with_capacity(d);
    let mut weights = Vec::with_capacity(d);
    // mixed-radix enumeration: the last input dimension cycles fastest
    for flat in 0..d {
        let mut idx = flat;
        let mut freq = vec![0.0; input_dim];
        let mut weight = 1.0;
        for dim in (0..input_dim).rev() {
            let j = idx % nodes_per_dim;
            idx /= nodes_per_dim;
            freq[dim] = roots[j];
            weight *= weights_1d[j];
        }
        frequencies.push(freq);
        weights.push(weight);
    }
    Ok(QffMap { frequencies, weights, lengthscale, input_dim, nodes_per_dim })
}

impl QffMap {
    /// Embedding dimension `2d`.
    pub fn dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    /// Embed one input: `d` cosine features followed by `d` sine features.
    pub fn embed(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, got: x.len() });
        }
        let d = self.frequencies.len();
        let scale = std::f64::consts::SQRT_2 / self.lengthscale;
        let mut out = Array1::zeros(2 * d);
        for (i, (freq, &nu)) in self.frequencies.iter().zip(&self.weights).enumerate() {
            let arg = scale * freq.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let root_nu = nu.sqrt();
            out[i] = root_nu * arg.cos();
            out[d + i] = root_nu * arg.sin();
        }
        Ok(out)
    }
}

/// Analytic sup-norm bound on `|k_SE(x,y) − φ(x)ᵀφ(y)|` over the unit box for
/// a map with `nodes_per_dim = m` on `q` input dimensions:
/// `q·2^{q−1} · (1/(√2·m^m)) · (e/(4l²))^m`, evaluated in log space so large
/// `m` cannot overflow.
pub fn error_bound(lengthscale: f64, input_dim: usize, nodes_per_dim: usize) -> f64 {
    let q = input_dim as f64;
    let m = nodes_per_dim as f64;
    let ln_bound = q.ln() + (q - 1.0) * 2f64.ln() - 0.5 * 2f64.ln() - m * m.ln()
        + m * (1.0 - (4.0 * lengthscale * lengthscale).ln());
    ln_bound.exp()
}

/// Nodes-per-dimension needed for a target horizon: the smallest integer at
/// least `max{⌈1/l²⌉, ⌈6·ln T / ln(4/e)⌉}`. The second term makes the error
/// bound decay like T⁻⁶.
pub fn qff_schedule(lengthscale: f64, horizon_t: usize) -> Result<usize> {
    if horizon_t < 2 {
        return Err(Error::Input(format!("schedule needs T >= 2, got {horizon_t}")));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::Input(format!(
            "lengthscale must be positive and finite, got {lengthscale}"
        )));
    }
    let smooth = (1.0 / (lengthscale * lengthscale)).ceil() as usize;
    let horizon = (6.0 * (horizon_t as f64).ln() / (4f64.ln() - 1.0)).ceil() as usize;
    Ok(smooth.max(horizon).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(x: &[f64], y: &[f64], l: f64) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-r2 / (2.0 * l * l)).exp()
    }

    #[test]
    fn roots_of_small_orders() {
        assert_eq!(hermite_roots(1).unwrap(), vec![0.0]);
        let r2 = hermite_roots(2).unwrap();
        assert!((r2[0] + 0.707_106_8).abs() < 1e-7);
        assert!((r2[1] - 0.707_106_8).abs() < 1e-7);
        let r3 = hermite_roots(3).unwrap();
        assert!((r3[0] + 1.224_744_9).abs() < 1e-7);
        assert_eq!(r3[1], 0.0);
        assert!((r3[2] - 1.224_744_9).abs() < 1e-7);
    }

    #[test]
    fn roots_are_symmetric_up_to_the_cap() {
        for order in [5, 16, 33, 64] {
            let roots = hermite_roots(order).unwrap();
            for i in 0..order {
                assert!(
                    (roots[i] + roots[order - 1 - i]).abs() < 1e-12,
                    "order {order} root {i}"
                );
            }
        }
    }

    #[test]
    fn roots_reject_out_of_range_orders() {
        assert!(hermite_roots(0).is_err());
        assert!(hermite_roots(65).is_err());
    }

    #[test]
    fn roots_are_actual_roots() {
        for order in [2, 5, 12, 30] {
            let roots = hermite_roots(order).unwrap();
            for &r in &roots {
                // relative to the polynomial's scale near the root
                let v = hermite_eval(order, r);
                let next = hermite_eval(order, r + 1e-7);
                assert!(v.abs() < (next - v).abs(), "order {order} residual {v}");
            }
        }
    }

    #[test]
    fn weights_of_small_orders() {
        let r2 = hermite_roots(2).unwrap();
        let w2 = hermite_weights(2, &r2).unwrap();
        assert!((w2[0] - 0.5).abs() < 1e-12);
        assert!((w2[1] - 0.5).abs() < 1e-12);
        let r3 = hermite_roots(3).unwrap();
        let w3 = hermite_weights(3, &r3).unwrap();
        assert!((w3[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((w3[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w3[2] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        for order in [2, 3, 8, 32, 64] {
            let roots = hermite_roots(order).unwrap();
            let weights = hermite_weights(order, &roots).unwrap();
            let sum: f64 = weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "order {order}: sum {sum}");
            assert!(weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn single_node_map_is_the_constant_kernel() {
        let map = build_qff(0.7, 1, 1).unwrap();
        assert_eq!(map.frequencies, vec![vec![0.0]]);
        assert_eq!(map.weights, vec![1.0]);
        let phi = map.embed(&[0.3]).unwrap();
        assert_eq!(phi.to_vec(), vec![1.0, 0.0]);
        let psi = map.embed(&[0.9]).unwrap();
        assert_eq!(phi.dot(&psi), 1.0);
    }

    #[test]
    fn eight_nodes_match_se_to_1e6() {
        let map = build_qff(1.0, 1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let x = [rng.gen_range(0.0..1.0)];
            let y = [rng.gen_range(0.0..1.0)];
            let approx = map.embed(&x).unwrap().dot(&map.embed(&y).unwrap());
            worst = worst.max((se(&x, &y, 1.0) - approx).abs());
        }
        assert!(worst <= 1e-6, "worst error {worst}");
    }

    #[test]
    fn analytic_bound_dominates_observed_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for nodes in [4, 6, 8] {
            let map = build_qff(1.0, 1, nodes).unwrap();
            let bound = error_bound(1.0, 1, nodes);
            let mut worst = 0.0f64;
            for _ in 0..2000 {
                let x = [rng.gen_range(0.0..1.0)];
                let y = [rng.gen_range(0.0..1.0)];
                let approx = map.embed(&x).unwrap().dot(&map.embed(&y).unwrap());
                worst = worst.max((se(&x, &y, 1.0) - approx).abs());
            }
            assert!(worst <= bound, "nodes {nodes}: error {worst} > bound {bound}");
        }
    }

    #[test]
    fn embedded_diagonal_within_bound_of_one() {
        let map = build_qff(0.5, 2, 8).unwrap();
        let bound = error_bound(0.5, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let phi = map.embed(&x).unwrap();
            let diag = phi.dot(&phi);
            assert!(diag <= 1.0 + bound, "diag {diag} bound {bound}");
        }
    }

    #[test]
    fn product_weights_match_dimension_product() {
        let map = build_qff(0.5, 2, 3).unwrap();
        assert_eq!(map.frequencies.len(), 9);
        assert_eq!(map.dim(), 18);
        let sum: f64 = map.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // corner frequency pairs the extreme root with itself
        let r3 = hermite_roots(3).unwrap();
        assert_eq!(map.frequencies[0], vec![r3[0], r3[0]]);
        assert_eq!(map.frequencies[8], vec![r3[2], r3[2]]);
        assert!((map.weights[0] - 1.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn frequency_cap_is_enforced() {
        let err = build_qff(0.5, 7, 8).unwrap_err();
        assert!(err.to_string().contains("1000000"), "unexpected message: {err}");
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(qff_schedule(1.0, 2).unwrap(), 11);
        assert_eq!(qff_schedule(0.1, 2).unwrap(), 100);
        assert_eq!(qff_schedule(1.0, 1000).unwrap(), 108);
        assert!(qff_schedule(1.0, 1).is_err());
    }

    #[test]
    fn map_serde_round_trip() {
        let map = build_qff(0.5, 2, 3).unwrap();
        let json = serde_json::to_string(&map).unwrap();
        let back: QffMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);
    }
}
