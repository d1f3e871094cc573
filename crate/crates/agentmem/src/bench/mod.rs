pub mod actions;
pub mod profile;
pub mod schedule;
