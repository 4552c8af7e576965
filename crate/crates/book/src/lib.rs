//! The guide under `book/src`, compiled as doc comments so `cargo test`
//! runs every snippet in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/envelopes.md")]
pub mod envelopes {}

#[doc = include_str!("../../../book/src/registry.md")]
pub mod registry {}

#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}

#[doc = include_str!("../../../book/src/negotiation.md")]
pub mod negotiation {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/audit.md")]
pub mod audit {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
