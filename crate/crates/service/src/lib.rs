//! HTTP/WebSocket service and command line for memcue.

pub mod api;
pub mod cli;
pub mod state;

pub use api::{router, SharedState};
pub use state::{AppState, StateError, StreamEvent};
