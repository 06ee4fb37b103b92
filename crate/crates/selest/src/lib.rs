//! Learned selectivity estimation for conjunctive point and range queries.
//!
//! Two complementary estimators over a dictionary-encoded relation:
//!
//! - an unsupervised ensemble of masked autoregressive density models over
//!   bit-encoded tuples ([`made`]), with range support by exhaustive
//!   enumeration, uniform sampling or adaptive importance sampling
//!   ([`range`]);
//! - a supervised regressor from featurized queries to transformed
//!   selectivity ([`supervised`]).
//!
//! The [`relation`] module holds the exact scan oracle both are evaluated
//! against, [`eval`] the q-error metric, baselines and grouped reports, and
//! [`persist`] the versioned file formats the CLI speaks.

pub mod encoding;
pub mod error;
pub mod eval;
pub mod made;
pub mod neural;
pub mod persist;
pub mod range;
pub mod relation;
pub mod rng;
pub mod supervised;
pub mod synth;

pub use error::{Error, Result};
pub use relation::{PointQuery, Query, RangeQuery, RawRangeQuery, Relation};
