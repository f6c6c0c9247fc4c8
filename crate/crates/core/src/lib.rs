//! Core of the literal-communication chat simulator: the session state
//! machine, prompt content, model gateway and the orchestrator that ties
//! them together.

pub mod content;
pub mod driver;
pub mod engine;
pub mod gateway;
pub mod orchestrator;
pub mod store;
pub mod transcript;
