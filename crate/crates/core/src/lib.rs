pub mod config;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod strategy;
pub mod synth;
mod util;

pub use util::{format_temperature, read_jsonl, sha256_hex, write_jsonl};
