//! Back-in-time debugging for stored procedures on an insert-only
//! relational store.

pub mod frontend;
pub mod engine;
pub mod runtime;
pub mod storage;
pub mod timetravel;
pub mod tracer;
