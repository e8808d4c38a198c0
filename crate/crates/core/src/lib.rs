//! Claim aggregation: group near-identical social-media posts into claim
//! clusters and pick or generate one representative claim per cluster.

pub mod centrality;
pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod evaluate;
pub mod sidecar;
pub mod simgraph;
pub mod summarize;
