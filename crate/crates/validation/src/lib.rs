//! Hosts the workspace acceptance run in `tests/acceptance.rs`.
