//! Ego-centered topology measurement: tree-shaped probing from one monitor,
//! periodic measurement rounds, and detection of topology events in the
//! resulting round series.
//!
//! The pipeline runs [`tracetree`] rounds scheduled by [`radar`] over a
//! [`transport`], reduces each raw tree with [`filter`], and stores rounds
//! in the [`roundlog`] text format. [`analytics`] and [`baseline`] work on
//! the stored datasets. [`simnet`] provides a deterministic network to run
//! everything against.

pub mod analytics;
pub mod baseline;
pub mod error;
pub mod export;
pub mod filter;
pub mod model;
pub mod radar;
pub mod roundlog;
pub mod simnet;
pub mod tracetree;
pub mod transport;

pub use error::{
    AnalysisError, LogError, ModelError, RadarError, SimError, TopologyError, TracetreeError,
    TransportError,
};
pub use filter::{filter_tree, FilterReport};
pub use model::{
    FilteredTree, Hop, ProbeRecord, RadarDataset, RawTraceTree, ReplyKind, RoundMeta, RoundRecord,
    Seconds, TreeHop, TtlNode,
};
