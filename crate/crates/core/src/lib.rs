//! Feedback particle filters with probabilistic data association.
//!
//! The crate covers the single-target PDA-FPF, the joint multi-target
//! JPDA-FPF, linear-Gaussian references, a SIR particle-filter baseline and
//! a one-dimensional grid solver for the conditional density, together with
//! the scenario simulator and tracking metrics used to compare them.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circular;
pub mod ensemble;
pub mod error;
pub mod fpf;
pub mod gain;
pub mod jpda;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod pda;
pub mod sirpf;

pub use ensemble::Ensemble;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/feedback-particle-filter.md")]
    mod feedback_particle_filter {}
    #[doc = include_str!("../../../book/src/association.md")]
    mod association {}
    #[doc = include_str!("../../../book/src/joint-association.md")]
    mod joint_association {}
    #[doc = include_str!("../../../book/src/references.md")]
    mod references {}
}
