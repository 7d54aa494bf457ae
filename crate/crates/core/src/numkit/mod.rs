//! Dense numeric kernel: matrices, special functions, reverse-mode
//! differentiation and finite-difference gradient checking.

pub mod gradcheck;
pub mod matrix;
pub mod special;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::Matrix;
pub use special::{digamma, ln_gamma, trigamma};
pub use tape::{Gradients, Tape, TemporalNeighborhood, Var};
