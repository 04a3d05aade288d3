//! Dense matrices, a reverse-mode tape, parameter storage and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{finite_diff_check, relative_deviation, GradCheckReport, ParamDeviation, GRAD_FLOOR};
pub use matrix::DenseMatrix;
pub use params::ParamStore;
pub use tape::{segment_softmax_values, Elementwise, Tape, Var};
