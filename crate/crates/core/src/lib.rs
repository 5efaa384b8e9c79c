//! Aggregated frequency-reserve bidding for groups of flexible buildings.
//!
//! Each building describes its thermal dynamics and comfort limits as a
//! [`model::BuildingModel`]. Affine decision rules turn the robust reserve
//! constraints into a finite convex set ([`robust_policy`]), which the
//! buildings use to negotiate a joint, time-constant bid with ADMM, either
//! through a coordinator ([`admm`]) or over a ring without one
//! ([`decentral`]). [`outcomes`] turns any intermediate iterate into a
//! feasible bid and splits the market reward across the group.

// Negated comparisons deliberately reject NaN; indexed loops follow the
// matrix algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod admm;
pub mod decentral;
mod error;
pub mod model;
pub mod outcomes;
pub mod qp;
pub mod robust_policy;
mod serde_util;

pub use error::{Error, Result};
