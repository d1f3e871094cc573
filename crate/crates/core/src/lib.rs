#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod text;
pub mod ui_model;
pub mod embedding;
pub mod experience_memory;
pub mod oracles;
pub mod profile_memory;
pub mod sim_env;
pub mod action_memory;
pub mod agent_rr;
pub mod scheduler;
pub mod exception_handler;
