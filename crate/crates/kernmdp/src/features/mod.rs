//! Finite-dimensional kernel approximations.
//!
//! Two schemes with complementary trade-offs:
//!
//! - [`qff`]: deterministic quadrature Fourier features for
//!   squared-exponential kernels. The map is fixed ahead of time from
//!   Gauss–Hermite nodes, so its quality is independent of the data, with an
//!   analytic sup-norm error bound that decays super-exponentially in the
//!   nodes-per-dimension count.
//! - [`nystrom`]: data-dependent embeddings onto a sampled dictionary of
//!   visited points, where each point's inclusion probability is proportional
//!   to its current posterior variance. Works for any kernel and adapts its
//!   size to the effective dimension of the data.

pub mod nystrom;
pub mod qff;
