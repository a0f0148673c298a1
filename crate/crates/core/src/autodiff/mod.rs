//! Minimal reverse-mode automatic differentiation over dense row-major
//! arrays, plus the Adam optimizer and a finite-difference checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_update, sgd_update, AdamState};
pub use gradcheck::{eval_f64, finite_diff_check, precision_gap, Objective, RandomGraph};
pub use params::ParamStore;
pub use tape::{Bound, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

use std::collections::BTreeMap;

/// Reverse sweep from `loss`, keyed by the names in `bound`.
pub fn backward(
    tape: &Tape<f32>,
    loss: Var,
    bound: &Bound,
) -> crate::Result<BTreeMap<String, Tensor>> {
    Ok(tape.backward(loss)?.named(bound, tape))
}
