//! Orthogonal range-maximum queries over planar points in rank space.
//!
//! The input is a set of `n` points whose x-coordinates, y-coordinates and
//! priorities each form a permutation of `{0, .., n-1}`. A query is an
//! axis-parallel rectangle with 2, 3 or 4 bounded sides (inclusive
//! boundaries); the answer is the point of maximum priority inside it.
//!
//! Module map:
//!
//! - [`points`] - point sets, query rectangles, rank reduction, and the
//!   brute-force oracle everything else is tested against
//! - [`bits`] - packed bit vectors with rank/select, unary streams
//! - [`globals`] - the shared counting/reporting/selection structure all
//!   recursive sub-problems map through
//! - [`slab`] - translating between a sub-problem's local coordinates and
//!   top-level coordinates without per-problem tables
//! - [`influence`] - lines of influence for 2-sided queries and their
//!   entropy-bounded encoding
//! - [`two_sided`] - the region-decomposed 2-sided query structure and the
//!   succinct index over a point provider
//! - [`tree`] - the recursive slab decomposition answering 2-/3-/4-sided
//!   queries
//! - [`format`] - text point/query files, the binary index file, and space
//!   accounting

pub mod bits;
pub mod format;
pub mod globals;
pub mod influence;
pub mod points;
pub mod slab;
pub mod tree;
pub mod two_sided;

#[cfg(test)]
pub(crate) mod testutil;

pub use points::{brute_force_max, rank_reduce, reflect, Candidate, CoordMaps, Corner, PointSet, QueryRect};
pub use tree::{BuildConfig, RangeMaxIndex};
