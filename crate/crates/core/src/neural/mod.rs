//! Dense neural core: residual adapters, classification head, binary
//! cross-entropy, explicit gradients, Adam and a finite-difference verifier.
//!
//! All parameters live in one flat `f64` vector whose block layout is fixed by
//! [`Layout`]: every adapter layer contributes `W1 (hidden x d)`, `b1 (hidden)`,
//! `W2 (d x hidden)`, `b2 (d)` in that order, followed by the head `w (d)` and
//! `b (1)`. Matrices are row-major.

mod adam;
mod checkpoint;
mod gradcheck;
mod layout;
mod loss;
mod network;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, GeneratorBlockSnapshot, HypernetSection, LAYOUT_VERSION};
pub use gradcheck::finite_diff_check;
pub use layout::{AdapterOffsets, Block, Layout, NetShape, ParamVector};
pub use loss::{bce_loss, sigmoid};
pub use network::{adapter_forward, backward, forward_logit, head_forward, Network};
