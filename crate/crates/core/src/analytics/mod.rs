//! Event detection over a radar dataset: address counts, windowed counts,
//! outlier rounds, components of new addresses and event graphs.

mod components;
mod correlation;
mod event_graph;
mod peaks;
mod series;

pub use components::{
    component_size_distribution, discovery_time, new_address_components, new_addresses,
    union_graph, NewAddressComponent, RoundRange,
};
pub use correlation::{size_vs_discovery_correlation, spearman, Correlation};
pub use event_graph::{event_graph, EventGraph, DEFAULT_BEFORE_WINDOW};
pub use peaks::{detect_peaks, Direction, PeakReport, DEFAULT_SENSITIVITY, MIN_PEAK_POINTS};
pub use series::{
    per_round_ip_count, value_distribution, windowed_ip_count, Series, WindowMode,
    DEFAULT_WINDOW,
};
