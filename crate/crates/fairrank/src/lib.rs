//! Group-fair re-ranking with provable underranking bounds.
//!
//! Takes a merit-ordered ranking of grouped items and re-ranks it so that
//! every window (or block) of `k` consecutive ranks carries between
//! `beta_l k` and `alpha_l k` items of each group `l`, while guaranteeing
//! that no item drops more than a provable factor below its true rank.
//! Ships two comparison baselines (an exact prefix-constrained dynamic
//! program and a greedy minimum-representation selector), evaluation
//! metrics, adversarial lower-bound constructions with brute-force
//! verification oracles, dataset ingestion, and an experiment harness.

pub mod alg;
pub mod baselines;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod verify;
