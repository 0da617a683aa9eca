//! Multi-range relational graph construction and gated relational message
//! passing, on top of a small reverse-mode differentiation core with an
//! exact floating-point-operation counter.

pub mod costmodel;
pub mod error;
pub mod graphbuild;
pub mod layers;
pub mod models;
pub mod oracles;
pub mod params;
pub mod relgraph;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/relational-graphs.md")]
    mod relational_graphs {}
    #[doc = include_str!("../../../book/src/message-passing.md")]
    mod message_passing {}
    #[doc = include_str!("../../../book/src/flops.md")]
    mod flops {}
    #[doc = include_str!("../../../book/src/kg-training.md")]
    mod kg_training {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
