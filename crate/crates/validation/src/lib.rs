//! Acceptance checks for the conceptprobe workspace live in `tests/`.
