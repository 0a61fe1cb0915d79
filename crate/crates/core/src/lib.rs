pub mod cube;
pub mod data;
pub mod error;
pub mod grouping;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod params;
pub mod ssb;
pub mod tensor;
pub mod train;

pub use cube::HsiCube;
pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/grouping.md")]
    mod grouping {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/losses-metrics.md")]
    mod losses_metrics {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
