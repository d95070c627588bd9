//! Dense trajectory evaluation for robotic policies.
//!
//! The crate turns judge-produced progress-potential traces into episode
//! metrics and policy audits, checks pairwise evaluators for additive
//! consistency, builds stratified pairwise progress-judgment benchmarks from
//! annotated episodes, and scores judges against them.

pub mod audit;
pub mod benchmark;
pub mod consistency;
pub mod discarded;
pub mod judge;
pub mod metrics;
pub mod normal;
pub mod npy;
pub mod sampler;
pub mod seeding;
pub mod trace;
