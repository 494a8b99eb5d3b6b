//! Exact quenched computations: forward and backward propagation of the
//! transition operator, tail fields over all starting sites at once, and the
//! quenched moments of the current built from them.

mod current;
mod field;
pub mod oracle;

pub use current::{
    martingale_defect, quenched_current_moments, quenched_mean_current, required_span, start_window, suggested_span, CurrentMoments,
    CurrentOptions, Cutoff, Occupation,
};
pub use field::{evolve_backward, evolve_pmf, floor_cut, joint_tail_field, tail_field, tail_field_side, Side, SiteField};
