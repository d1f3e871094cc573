//! Persistence, bundled fixtures and benchmark runners on top of
//! `agentmem-core`.

pub mod bench;
pub mod fixtures;
pub mod store;
