//! Reverse-mode differentiation over the model's closed primitive set.
//!
//! Nodes hold vectors, not scalars: each composite (manifold linear map,
//! midpoint, bundle convolution, φ scores, contrastive loss) is one tape
//! entry with a hand-derived vector-Jacobian product. Non-differentiable
//! points (zero norms, clamp edges) take subgradient zero.

mod check;
mod ops;
mod tape;

pub use check::{grad_check, GradCheckReport, GRAD_CHECK_ABS_FLOOR};
pub use ops::DropoutMask;
pub use tape::{GradientMap, Tape, Var};

#[cfg(test)]
mod tests;
