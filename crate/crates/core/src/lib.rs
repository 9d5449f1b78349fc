//! Quick-thoughts sentence representation learning.
//!
//! Sentences are encoded by two separately parameterized encoders `f` and
//! `g`. Training classifies the true neighbouring sentence among the other
//! sentences of a contiguous minibatch, scoring candidates by the inner
//! product `f(s)ᵀ g(c)`. At test time a sentence is represented by
//! `[f(s) g(s)]`.

pub mod cli;
pub mod corpus;
pub mod embedder;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod numkern;
pub mod objective;
pub mod optim;
pub mod trainer;

pub use error::{QtError, Result};
