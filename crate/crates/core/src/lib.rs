//! Wrinkle defects in curved composite laminates: random-field description,
//! misalignment extraction from ultrasound scans, Bayesian calibration and
//! strength propagation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod bayes;
pub mod klfield;
pub mod mfia;
pub mod optim;
pub mod propagate;

pub use error::{Error, Result};

// the guide's snippets run as doctests
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/random_field.md")]
    mod random_field {}
    #[doc = include_str!("../../../book/src/misalignment.md")]
    mod misalignment {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
