//! Entropy-drop variance regularization for repeated-block encoders.
//!
//! * [`entropy`]: Kozachenko-Leonenko kNN differential entropy and a
//!   diagonal-Gaussian proxy, both differentiable on a [`tensor::Tape`].
//! * [`regularizer`]: per-block entropy drops, their variance `L_b`, and the
//!   masked `E_loss` total.
//! * [`encoder`]: a small fully connected encoder with activation capture,
//!   SGD training on `task + E_loss`, and the mask-sweep experiment driver.
//! * [`corruption`] and [`audit`]: seeded input noise and a z-score band on
//!   `L_b` that flags anomalous inputs.
//! * [`io`]: the ELFT tensor format, run directories, reports and plots.
//!
//! Entropies are in nats throughout.

pub mod audit;
pub mod cli;
pub mod corruption;
pub mod encoder;
pub mod entropy;
pub mod error;
pub mod io;
pub mod regularizer;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
