//! Biographical knowledge store, disambiguating retrieval, benchmark subject
//! sampling and generation, and a stratified multiple-choice evaluation harness.

pub mod benchgen;
pub mod domain;
pub mod embed;
pub mod eval;
pub mod http;
pub mod index;
pub mod ingest;
pub mod io;
mod pool;
pub mod retrieval;
pub mod sampler;
pub mod synth;
