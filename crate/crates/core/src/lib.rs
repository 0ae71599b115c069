pub mod audio;
pub mod cli;
pub mod datamix;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pooling;
pub mod training;
pub mod viz;

pub use error::{Error, Result};

// Guide chapters run as doctests so their snippets stay in sync with the code.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mixing.md")]
    mod mixing {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
