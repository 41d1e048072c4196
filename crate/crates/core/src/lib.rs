//! Pain detection from the eye region of partially occluded faces.
//!
//! The guide in `book/` walks through the pipeline; its code blocks run
//! as doctests of this crate.

pub mod baseline;
pub mod dataset;
pub mod deep;
pub mod eval;
pub mod experiment;
pub mod preprocess;
pub mod pspi;
pub mod smoothing;
pub mod synth;

pub use dataset::PainLabel;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/labels.md")]
    mod labels {}
    #[doc = include_str!("../../../book/src/crops.md")]
    mod crops {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/deep.md")]
    mod deep {}
    #[doc = include_str!("../../../book/src/smoothing.md")]
    mod smoothing {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
