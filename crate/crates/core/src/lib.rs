//! Neck-based program specialization over a small load/store IR.
//!
//! The pipeline mines a neck (the point where configuration logic hands off
//! to main logic), interprets the program up to it with the supplied inputs,
//! converts the captured state to constants and simplifies the result.

pub mod analysis;
pub mod constconv;
pub mod harness;
pub mod interp;
pub mod ir;
pub mod neck;
pub mod pipeline;
pub mod simplify;
