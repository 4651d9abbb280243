//! Dense matrices and the reverse-mode tape every model component runs on.

mod dropout;
mod matrix;
mod tape;

pub use dropout::Dropout;
pub use matrix::Matrix;
pub use tape::{Gradients, OpKind, Tape, Var};

/// Floor applied inside `ln` by the classification loss.
pub const LOG_FLOOR: f64 = 1e-12;
