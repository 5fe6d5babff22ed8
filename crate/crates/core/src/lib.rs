//! Soft-label prototypes for few-shot classification.
//!
//! Class centroids of a support set are grouped onto a small number of lines
//! ([`linefit`]); two prototypes are opened at the ends of every line and
//! their soft labels are chosen by a linear program ([`protogen`], backed by
//! the dense simplex in [`lpsolve`]) so that each class wins its own stretch
//! of the line. Queries are classified by a distance-weighted soft-label kNN
//! ([`slpknn`]), and [`harness`] runs the whole pipeline over N-way k-shot
//! episodes.

pub mod dataio;
pub mod error;
pub mod harness;
pub mod linefit;
pub mod lpsolve;
pub mod protogen;
pub mod slpknn;
pub mod vectorspace;

pub use error::{Error, ErrorKind, Result};
