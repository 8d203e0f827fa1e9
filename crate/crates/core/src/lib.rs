//! Frugal multi-hop retrieval: budgeted ReAct rollouts over a pluggable
//! retriever and policy, best-of-n exploration data generation, stopping
//! rewards with group-relative advantages, and evaluation metrics.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod metrics;
pub mod policy;
pub mod qa;
pub mod retrieval;
pub mod reward;
pub mod rollout;
pub mod util;
