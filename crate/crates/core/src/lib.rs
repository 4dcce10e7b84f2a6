//! Compression of reversible continuous-time Markov chains onto a subset of
//! states.
//!
//! The crate builds the symmetrized generator of a reversible chain, computes
//! committors and the induced chain on a selected set, constructs the marked
//! chain on the augmented state space, evaluates projective and
//! structure-preserving compressions together with their error bounds, selects
//! states greedily by nuclear maximization, and samples trajectories for
//! Monte-Carlo corroboration.
//!
//! ```
//! use markov_compress::{chain, committor, fixtures, subset::IndexSet};
//!
//! let lap = chain::symmetrize(&fixtures::k3()).unwrap();
//! let set = IndexSet::new(3, &[0, 1]).unwrap();
//! let bundle = committor::committor_closed_form(&lap, &set).unwrap();
//! assert!((bundle.committor[(2, 0)] - 0.5).abs() < 1e-12);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod committor;
pub mod compress;
pub mod error;
pub mod fixtures;
pub mod induced;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod marked;
pub mod select;
pub mod simulate;
pub mod subset;

pub use error::{Error, Result};
