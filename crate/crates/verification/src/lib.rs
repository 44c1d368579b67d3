//! Holds the acceptance suite (`cargo test -p fuzzcfg-verification`).
//! The package name sorts last so the suite runs after every other test
//! binary in a workspace run.
