//! Claim clustering, mutation measurement and survival modelling for
//! timestamped, embedded social-media posts.

pub mod aat;
pub mod ann;
pub mod claim_graph;
pub mod corpus;
pub mod drift;
pub mod error;
pub mod plot;
pub mod psylex;
pub mod survival;
pub mod synth;
pub mod union_find;
pub mod vector;

pub use error::{Error, Result};
pub use nalgebra;
