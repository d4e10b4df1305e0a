//! Test-only crate. The acceptance suite lives in `tests/acceptance.rs`;
//! run it with `cargo test -p blinkfit-validation --test acceptance`.
