//! The chapters of the book under `book/src`, compiled as doc comments so
//! `cargo test` runs every snippet.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../book/src/streams.md")]
pub mod streams {}
#[doc = include_str!("../../../book/src/learner.md")]
pub mod learner {}
#[doc = include_str!("../../../book/src/buffers.md")]
pub mod buffers {}
#[doc = include_str!("../../../book/src/dmu.md")]
pub mod dmu {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
