//! Reverse-dictionary probing of causal language models.
//!
//! A model is shown description ⇒ word demonstrations and asked to name the
//! concept behind a new description. This crate builds those prompts, talks
//! to model backends over a small JSON protocol, scores the answers, and
//! analyses the hidden vector at the final delimiter.

pub mod corpus;
pub mod rng;
pub mod stats;
pub mod promptgen;
pub mod lmclient;
pub mod probe;
pub mod represent;
pub mod protoqa;
pub mod harness;
