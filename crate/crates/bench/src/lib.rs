//! Helpers live in the bench targets; this crate exists for `cargo bench`.
