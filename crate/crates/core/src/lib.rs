//! ecoevo — reconstructs a service ecosystem's history from interaction
//! events, detects and tracks communities across time, predicts the next
//! evolution event of a community with a random forest, and explains the
//! predictions with exact per-feature attributions.
//!
//! The pipeline stages map onto the modules:
//!
//! 1. [`snapshot`] replays the event log into periodic weighted graphs,
//! 2. [`community`] finds communities per snapshot and scores members,
//! 3. [`tracker`] matches communities across consecutive snapshots and labels
//!    transitions (continuing, growing, shrinking, splitting, merging,
//!    dissolving, forming),
//! 4. [`features`] turns each community into a 15-value descriptor and builds
//!    sliding-window training sequences,
//! 5. [`forest`] trains and evaluates the classifier,
//! 6. [`explain`] attributes predictions to features,
//! 7. [`synth`] generates benchmark datasets with a scripted ground truth,
//! 8. [`pipeline`] orchestrates the staged artifact flow used by the CLI.

pub mod community;
pub mod error;
pub mod explain;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod report;
pub mod snapshot;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
