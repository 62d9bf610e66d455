//! Reverse-mode differentiation for the fixed graphs this crate builds, plus a
//! central-difference checker.

mod gradcheck;
mod tape;

pub use gradcheck::{
    finite_diff_check, GradCheckConfig, GradCheckReport, ParamGroup, Worst, FULL_CHECK_LIMIT,
    SAMPLES_PER_GROUP,
};
pub use tape::{Gradients, Op, Tape, Var};

