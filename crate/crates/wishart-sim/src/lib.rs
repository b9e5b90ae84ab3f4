//! Simulation engine for Wishart processes and affine diffusions on
//! positive semidefinite matrices.
//!
//! The processes solve
//!
//! ```text
//! dX_t = (alpha_bar + B(X_t)) dt + sqrt(X_t) dW_t a + a^T dW_t^T sqrt(X_t)
//! ```
//!
//! with the Wishart case alpha_bar = alpha a^T a, B(x) = b x + x b^T. The
//! engine provides exact sampling of any Wishart marginal law (through a
//! splitting of the generator into commuting single-coordinate operators),
//! second and third order weak discretization schemes, the closed-form
//! characteristic function for verification, and a deterministic parallel
//! Monte-Carlo driver.

pub mod error;
pub mod matkernel;
pub mod oracle;
pub mod randkit;
pub mod schemes;
pub mod wishart_exact;

pub use error::{Result, SimError};
