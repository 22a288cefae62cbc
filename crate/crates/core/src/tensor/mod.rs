//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every operation of one forward pass; [`Var`] handles
//! point into it. Parameters live in a [`ParamStore`] outside the tape and
//! are updated by [`AdamState::step`] after each backward sweep.

mod adam;
mod gradcheck;
mod ops;
mod param;
mod tape;
mod value;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_in, GradCheck, MAX_CHECK_ELEMENTS};
pub use param::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Mode, Tape, Var};
pub use value::{Tensor, MAX_RANK};
