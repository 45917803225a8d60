//! Detection of the next-best pairwise interaction for a Poisson GLM.
//!
//! The pipeline boosts a fixed benchmark GLM with a combined actuarial neural
//! network, ranks the interactions the network has learned from its weight
//! matrices, and confirms the winner with small offset GLMs.

// `!(x > 0.0)` is used on purpose so NaN fails the check too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cann;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod glm;
pub mod io;
pub mod nid;
pub mod pipeline;
pub mod poisson;
pub mod selection;
pub mod tuning;

pub use error::{Error, Result};
pub use exec::Exec;
