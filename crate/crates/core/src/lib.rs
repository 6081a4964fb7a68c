//! Active transfer learning for 2D membrane segmentation of EM-like images.
//!
//! The pipeline, bottom to top:
//!
//! - [`data`]: raster containers, labeled/unlabeled pools, seeded RNG streams,
//!   PGM and manifest persistence.
//! - [`model`]: a small U-Net with dropout, trained from scratch with Adam.
//! - [`mmd`]: squared maximum mean discrepancy between embedded image sets and
//!   optimal source selection.
//! - [`uncertainty`]: MC-dropout entropy scores.
//! - [`sampling`]: batch selection strategies over the unlabeled pool.
//! - [`adapt`]: the budgeted active adaptation loop and its baselines.
//! - [`segeval`]: seeded watershed, variation of information, aggregation.
//! - [`stats`]: Mann-Whitney U, UPGMA clustering, Fowlkes-Mallows and
//!   permutation tests.
//! - [`synth`]: deterministic multi-domain synthetic tissue benchmarks.
//! - [`pretrain`]: per-domain source model training.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod data;
pub mod error;
pub mod mmd;
pub mod model;
pub mod pretrain;
pub mod sampling;
pub mod segeval;
pub mod stats;
pub mod synth;
pub mod uncertainty;

mod numeric;

pub use error::{Error, Result};
