//! HTTP service and command-line front end over `factrix-core`.

pub mod api;
pub mod error;
pub mod jobs;
pub mod remote;
pub mod server;
pub mod state;
pub mod work;

pub use server::serve;
pub use state::{ApiConfig, AppState, ServeError};
