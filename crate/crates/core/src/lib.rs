//! Black-box dataset inference against classification services.
//!
//! A pool of candidate datasets is organized into a [`hierarchy::ConceptHierarchy`];
//! [`attack::run_adi`] samples from it, queries an [`oracle::Oracle`] and steers
//! probability mass toward the classes the target model was trained on.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod datapool;
pub mod error;
pub mod hierarchy;
pub mod inversion;
pub mod metrics;
pub mod oracle;

pub use error::{Error, Result};
