//! Brute-force reference implementations and seeded fixtures for tests.
//!
//! Everything here is written for clarity, not speed, and shares no code
//! with the implementations it checks.

pub mod fixtures;
pub mod oracles;
