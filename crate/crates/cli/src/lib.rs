//! Command implementations behind the `encircle` binary: single runs, seed
//! batches, verification and the live WebSocket server.

pub mod batch;
pub mod commands;
pub mod seeds;
pub mod serve;

pub use commands::{load_config, run_once, verify_scenario, verify_trace, VerifyReport};
pub use seeds::parse_seeds;
