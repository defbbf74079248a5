//! Anchors rule explanations accelerated by a memory of intermediate rules.
//!
//! A cache miss runs the full greedy Anchors search and stores the rule it
//! certified at the lower intermediate threshold. A cache hit adapts the
//! stored rule of the most similar past input with a horizontal
//! transformation (re-targeting predicates onto the new input's slots) and a
//! vertical one (certifying, or greedily refining, the result).

pub mod anchors;
pub mod bandit;
pub mod bench;
pub mod data;
pub mod engine;
pub mod error;
pub mod memory;
pub mod models;
pub mod par;
pub mod perturb;
pub mod rule;
pub mod transform;

pub use engine::{Domain, Engine, EngineParams, ExplainPath, ExplainReport};
pub use error::{Error, Result};
pub use memory::{MemoryStore, Similarity};
pub use models::{Classifier, Oracle};
pub use par::Execution;
pub use rule::{FeatureValue, Instance, Label, Predicate, Rule, RuleStats};
