use std::net::Ipv4Addr;

use thiserror::Error;

use crate::model::Seconds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("ttl {ttl} outside [1, {max}]")]
    TtlOutOfRange { ttl: u8, max: u8 },
    #[error("record {index}: destination {destination} probed twice at ttl {ttl}")]
    DuplicateProbe {
        index: usize,
        destination: Ipv4Addr,
        ttl: u8,
    },
    #[error("round {next} does not follow round {previous}")]
    RoundOrder { previous: u64, next: u64 },
    #[error("round {index} ends before it starts")]
    RoundTiming { index: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: ttl {ttl} outside [1, {max}]")]
    Range { line: usize, ttl: u64, max: u8 },
    #[error("no `#dataset` header before the first round")]
    MissingHeader,
    #[error("round {0} has no raw records to serialize")]
    NoRawRecords(u64),
    #[error("line {line}: {source}")]
    Model {
        line: usize,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("topology document: {0}")]
    Parse(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("address {address} used by both `{first}` and `{second}`")]
    DuplicateAddress {
        address: Ipv4Addr,
        first: String,
        second: String,
    },
    #[error("{context}: unknown node `{id}`")]
    UnknownNode { context: String, id: String },
    #[error("{context}: `{next_hop}` is not a neighbor of `{node}`")]
    NotNeighbor {
        context: String,
        node: String,
        next_hop: String,
    },
    #[error("node `{node}`: {reason}")]
    InvalidPolicy { node: String, reason: String },
    #[error("balancer `{node}`: {reason}")]
    InvalidBalancer { node: String, reason: String },
    #[error("event #{index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
    #[error("destination {0} has no node and is never added")]
    UnknownDestination(Ipv4Addr),
    #[error("destination {0} is unreachable and no event can change that")]
    UnreachableDestination(Ipv4Addr),
    #[error("per-hop delay must be finite and non-negative")]
    InvalidDelay,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event #{index} at t={at}: {reason}")]
    Scenario {
        index: usize,
        at: Seconds,
        reason: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("transport is closed")]
    Closed,
    /// Sending now would exceed the configured rate; retry at `retry_at`.
    #[error("send rate cap reached, retry at t={retry_at}")]
    Backpressure { retry_at: Seconds },
    #[error("transport failure: {0}")]
    Fault(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TracetreeError {
    #[error("no destination to probe")]
    NoTasks,
    #[error("destination {0} listed twice")]
    DuplicateDestination(Ipv4Addr),
    #[error("assumed distance {distance} of {destination} outside [1, {max_ttl}]")]
    InvalidDistance {
        destination: Ipv4Addr,
        distance: u8,
        max_ttl: u8,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadarError {
    #[error("destination list is empty")]
    NoDestinations,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tracetree(#[from] TracetreeError),
    #[error("round sink: {0}")]
    Sink(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("reference window is empty")]
    EmptyReference,
    #[error("window [{start}, {end}) is empty or inverted")]
    BadRange { start: u64, end: u64 },
    #[error("reference window must end before the observation window starts")]
    Overlap,
    #[error("window starting at round {start} precedes the dataset's first round {first}")]
    BeforeDataset { start: u64, first: u64 },
    #[error("round {0} not in dataset")]
    MissingRound(u64),
    #[error("window width must be at least 1")]
    ZeroWidth,
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("destination {0} is not part of the dataset")]
    UnknownDestination(Ipv4Addr),
}
