pub mod clustering;
pub mod config;
pub mod consensus;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod maintenance;
pub mod mln;
mod metric;
pub mod rng;
pub mod speech;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/clusterers.md")]
    mod clusterers {}
    #[doc = include_str!("../../../book/src/maintenance.md")]
    mod maintenance {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/speech.md")]
    mod speech {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
