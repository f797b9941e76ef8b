#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN

pub mod numfmt;
pub mod resonator;
pub mod actuation;
pub mod device;
pub mod optics;
pub mod trajectory;
pub mod lm;
pub mod calibrate;
pub mod io;
