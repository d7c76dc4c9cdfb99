//! Empty: the acceptance suite lives in `tests/acceptance.rs`.
