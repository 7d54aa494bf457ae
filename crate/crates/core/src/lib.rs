//! Uncertainty-guided class-imbalance learning for multi-view message graphs.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core can be embedded
//! anywhere; file formats, the CLI and exports live in the `ucl-cli` crate.
//!
//! Layout:
//! - [`numkit`]: dense matrices, special functions, a reverse-mode tape and
//!   finite-difference gradient checking.
//! - [`graphs`]: per-view message graphs, edge quality and the synthetic
//!   long-tail generator.
//! - [`encoder`]: the temporal-attention GNN producing per-view embeddings.
//! - [`evidential`]: opinions, Dempster fusion, the Dirichlet error loss and
//!   the calibration loss.
//! - [`boundary`]: prototypes, margin policies, the uncertainty-guided
//!   contrastive loss and the cross-view consistency loss.
//! - [`harness`]: configuration, the training loop and evaluation.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod boundary;
pub mod encoder;
pub mod error;
pub mod evidential;
pub mod graphs;
pub mod harness;
pub mod numkit;

pub use error::{Error, Result};
