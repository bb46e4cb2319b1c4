//! Command line and HTTP front end over a persisted corpus.

pub mod commands;
pub mod error;
pub mod response;
pub mod server;
pub mod settings;

pub use error::CliError;
pub use response::{query_id, QueryResponse, RankedDocument};
pub use settings::{load_config, Overrides};
