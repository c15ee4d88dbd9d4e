//! Trajectory-coherent semiclassical solutions of the nonlocal Hartree-type
//! equation, with a split-step grid solver as an independent reference.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod moments;
pub mod multiindex;
pub mod gauss1d;
pub mod green;
pub mod ode;
pub mod oracle;
pub mod quad;
pub mod scaling;
pub mod states;
pub mod variations;
