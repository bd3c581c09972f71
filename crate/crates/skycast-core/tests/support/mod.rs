//! Shared helpers for the integration suite.
#![allow(dead_code)]

pub mod gradient;
pub mod reference;
pub mod tolerances;
