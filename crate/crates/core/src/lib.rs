//! Core of the local data hub: the manifest language, the operator engine,
//! the credential broker, the access scheduler and the policy engine.

pub mod broker;
pub mod engine;
pub mod hub;
pub mod manifest;
pub mod policy;
pub mod scheduler;
