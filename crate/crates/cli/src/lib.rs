//! Library surface of the command-line front end (exposed for the
//! integration tests; the binary lives in `main.rs`).

pub mod config;
