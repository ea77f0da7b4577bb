pub mod cap;
pub mod config;
pub mod error;
pub mod instance;
pub mod ironing;
pub mod mechanism;
pub mod probkit;
pub mod regions;
pub mod scenarios;
pub mod zoo;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/instances.md")]
    mod instances {}
    #[doc = include_str!("../../../book/src/ironing.md")]
    mod ironing {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/mechanism.md")]
    mod mechanism {}
    #[doc = include_str!("../../../book/src/price-caps.md")]
    mod price_caps {}
    #[doc = include_str!("../../../book/src/structures.md")]
    mod structures {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
