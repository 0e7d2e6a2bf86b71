//! Simulation laboratory for realistic online class-incremental learning.
//!
//! The crate is organised along the life of one experiment:
//!
//! - [`scenario`] draws a task schedule where classes repeat across tasks and
//!   per-class sample sizes are imbalanced.
//! - [`stream`] turns a schedule plus a [`stream::Dataset`] into single-pass
//!   mini-batches.
//! - [`learner`] is a compact softmax classifier trained by online SGD.
//! - [`buffer`] holds exemplars and implements reservoir, interfered-retrieval
//!   and gradient-diversity replay strategies.
//! - [`dmu`] is the dynamic model update gate that decides, batch by batch,
//!   whether the learner trains on the whole incoming batch or only on its
//!   novel-class part.
//! - [`metrics`] builds the task accuracy matrix and average accuracy.
//! - [`harness`] wires everything into deterministic runs and suites.
//!
//! ```
//! use rocil::scenario::{Category, ScenarioConfig};
//!
//! let config = ScenarioConfig::preset(Category::ShortTerm, 74, 10, 7);
//! let scenario = rocil::scenario::build_scenario(&config).unwrap();
//! assert_eq!(scenario.tasks.len(), 10);
//! assert!(rocil::scenario::validate_scenario(&scenario).is_valid());
//! ```

pub mod buffer;
pub mod dmu;
mod error;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod stream;

pub use error::{Error, Result};

/// Class identifier, an index into the class catalog `0..N`.
pub type ClassId = u32;
