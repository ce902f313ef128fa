#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod cli;
pub mod analysis;
pub mod distributions;
pub mod divergences;
pub mod error;
pub mod mechanisms;
pub mod optim;
pub mod quadrature;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/library.md")]
    struct Library;
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    struct Mechanisms;
    #[doc = include_str!("../../../book/src/accountant.md")]
    struct Accountant;
    #[doc = include_str!("../../../book/src/verify.md")]
    struct Verify;
}
