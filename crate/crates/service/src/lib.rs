//! HTTP service for the consent ledger.
//!
//! One writer owns the chain; handlers read from a snapshot that is
//! republished after every committed mutation.

pub mod auth;
pub mod cli;
pub mod config;
pub mod error;
pub mod reqlog;
pub mod routes;
pub mod state;

pub use config::ServiceConfig;
pub use error::{ApiError, ServiceError};
pub use routes::router;
pub use state::AppState;
