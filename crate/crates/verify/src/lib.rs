//! Home of the `acceptance` test target. It runs every acceptance criterion
//! against the default configuration and prints one PASS or FAIL line each.
//!
//! ```text
//! cargo test --release -p ndnn-verify --test acceptance
//! ```
