//! Persistence and HTTP API for comparisons and the two-step human trial
//! workflow (evaluation, then verification by a different annotator).

pub mod api;
pub mod error;
pub mod simulate;
pub mod store;
pub mod workflow;

pub use error::{Result, ServiceError};
pub use workflow::{App, ServiceConfig};
