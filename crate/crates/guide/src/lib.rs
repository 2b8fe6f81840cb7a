//! mdbook cannot run snippets that depend on workspace crates, so each
//! chapter is pulled in as a module doc and checked by `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/ordering.md")]
pub mod ordering {}
#[doc = include_str!("../../../book/src/bundles.md")]
pub mod bundles {}
#[doc = include_str!("../../../book/src/defi.md")]
pub mod defi {}
#[doc = include_str!("../../../book/src/synth.md")]
pub mod synth {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
