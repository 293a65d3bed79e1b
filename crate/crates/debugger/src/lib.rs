//! Sessions over traced procedure runs, the HTTP API, and the bench harness.

pub mod api;
pub mod bench;
pub mod error;
pub mod session;
pub mod workload;

pub use error::SessionError;
pub use session::{Debugger, Session};
pub use tardisp_core as core;
