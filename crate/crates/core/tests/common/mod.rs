//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod matching;
pub mod transfer;
