//! Deep S4/S6 state-space models with a pluggable parameter-efficient
//! fine-tuning framework and machine-checkable equivalence oracles.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`rng`], [`gradcheck`]: a minimal dense-tensor
//!   engine with reverse-mode differentiation, deterministic seeded
//!   randomness, and a finite-difference gradient checker.
//! - [`ssm`]: discretization rules, diagonal recurrences, convolution
//!   kernels, and the selective scan as plain numeric routines.
//! - [`model`]: differentiable deep S4 layers, a simplified S6 block with
//!   input projection, and stacked models with an optional readout head.
//! - [`peft`]: the adapter framework (full tuning, LoRA, BitFit,
//!   prompt/prefix tuning, initial-state tuning, SDLoRA with dimension
//!   selection) with exact trainable-parameter accounting.
//! - [`oracles`]: executable forms of the equivalence results the
//!   architecture satisfies (prefix-to-state equivalence, projection
//!   absorption, essential-parameter counting, sparse-dimension embedding).
//! - [`train`]: optimizers, losses, and the seeded training loop.
//! - [`harness`]: experiment configs, synthetic tasks, sweeps, checkpoints,
//!   CSV metrics, SVG plots, and the command-line interface.
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

pub mod autodiff;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod params;
pub mod peft;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod train;
