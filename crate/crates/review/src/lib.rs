//! HTTP service that shows ranked claim clusters with blinded summaries
//! and records fact-checker ratings in an append-only log.

pub mod api;
pub mod model;
pub mod session;
pub mod store;

use thiserror::Error;

pub use api::{router, serve, AppState, SCHEMA_VERSION};
pub use model::{aggregate_ratings, effective_ratings, ClusterRecord, Rating, ReviewData, ReviewMethod};
pub use session::{sample_session, ReviewSession};
pub use store::RatingLog;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad review data: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
