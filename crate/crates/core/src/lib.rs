//! Domain-decomposed physics-informed neural networks (FBPINNs) with Adam and
//! block-sparse Gauss–Newton training.
//!
//! - [`jet`]: second-order Taylor jets for spatial derivatives.
//! - [`net`]: dense `tanh` networks with a flat parameter vector.
//! - [`decomp`]: overlapping subdomains, cosine windows, normalization and
//!   hard boundary constraints.
//! - [`problems`]: the model ODE and Helmholtz problems and collocation grids.
//! - [`model`]: the windowed ansatz, residual rows and the loss.
//! - [`optim`]: Adam, Gram assembly, dense and block-CG solves, training loop.
//! - [`harness`]: run configuration, experiment driver and file outputs.

pub mod decomp;
pub mod harness;
pub mod jet;
pub mod model;
pub mod net;
pub mod optim;
pub mod problems;
