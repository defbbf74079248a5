//! The memory-accelerated explainer.
//!
//! A miss runs plain Anchors and remembers `(x, r_mid)`. A hit transforms the
//! nearest remembered rule onto `x` and certifies it. Every explanation
//! reports the oracle-counter delta it caused, which is what the benchmark
//! aggregates.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::anchors::{self, AnchorsParams, SearchConfig, TraceStep};
use crate::bandit::BanditConfig;
use crate::data::{EmbeddingTable, EmpiricalDistribution, FeatureSchema};
use crate::error::{Error, Result};
use crate::memory::{Embedder, MemoryStore, Similarity};
use crate::models::Oracle;
use crate::perturb::PerturbationModel;
use crate::rule::{FeatureValue, Instance, Label, Rule};
use crate::transform::{self, FeatureDistance, TabularDistance, TextDistance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    pub tau_p: f64,
    pub tau_p_mid: f64,
    pub tau_sim: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub batch: usize,
    pub alpha: f64,
    pub max_samples: u64,
    pub arm_budget: u64,
    pub coverage_samples: usize,
    pub seed: u64,
    pub insert_on_hit: bool,
    pub similarity: Similarity,
    pub capacity: Option<usize>,
}

impl Default for EngineParams {
    fn default() -> Self {
        let b = BanditConfig::default();
        let s = SearchConfig::default();
        let a = AnchorsParams::default();
        EngineParams {
            tau_p: a.tau_p,
            tau_p_mid: a.tau_p_mid,
            tau_sim: 0.6,
            delta: b.delta,
            epsilon: b.epsilon,
            batch: b.batch,
            alpha: b.alpha,
            max_samples: s.max_samples,
            arm_budget: s.arm_budget,
            coverage_samples: s.coverage_samples,
            seed: 42,
            insert_on_hit: false,
            similarity: Similarity::Reciprocal,
            capacity: None,
        }
    }
}

impl EngineParams {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: EngineParams = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            bandit: BanditConfig { delta: self.delta, epsilon: self.epsilon, batch: self.batch, alpha: self.alpha },
            max_samples: self.max_samples,
            arm_budget: self.arm_budget,
            coverage_samples: self.coverage_samples,
        }
    }

    pub fn anchors(&self) -> AnchorsParams {
        AnchorsParams { tau_p: self.tau_p, tau_p_mid: self.tau_p_mid, search: self.search() }
    }

    pub fn validate(&self) -> Result<()> {
        self.anchors().validate()?;
        if !(self.tau_sim > 0.0 && self.tau_sim <= 1.0) {
            return Err(Error::Argument(format!("tau_sim must lie in (0, 1], got {}", self.tau_sim)));
        }
        if self.capacity == Some(0) {
            return Err(Error::Argument("memory capacity must be positive".into()));
        }
        Ok(())
    }
}

/// What explanation needs to know about the data: how to perturb, embed and
/// compare feature values.
#[derive(Clone)]
pub struct Domain {
    pub perturbation: PerturbationModel,
    pub embedder: Embedder,
    pub distance: Arc<dyn FeatureDistance + Send + Sync>,
    pub padding: Option<FeatureValue>,
    pub schema_hash: String,
}

impl Domain {
    pub fn tabular(schema: &FeatureSchema, marginals: &EmpiricalDistribution) -> Self {
        Domain {
            perturbation: PerturbationModel::tabular(marginals.clone()),
            embedder: Embedder::tabular(marginals),
            distance: Arc::new(TabularDistance::new(schema.clone())),
            padding: None,
            schema_hash: schema.hash(),
        }
    }

    pub fn text(schema: &FeatureSchema, table: Arc<EmbeddingTable>) -> Result<Self> {
        let padding = schema
            .padding
            .ok_or_else(|| Error::Schema("text schema carries no padding code".into()))?;
        Ok(Domain {
            perturbation: PerturbationModel::text(Arc::clone(&table), padding),
            embedder: Embedder::text(Arc::clone(&table), padding),
            distance: Arc::new(TextDistance::new(table)),
            padding: Some(padding),
            schema_hash: schema.hash(),
        })
    }

    pub fn empty_store(&self, params: &EngineParams) -> MemoryStore {
        MemoryStore::new(self.embedder.dim(), self.schema_hash.clone())
            .with_capacity(params.capacity)
            .with_similarity(params.similarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainPath {
    Miss,
    Hit,
    /// Plain Anchors, no memory involved.
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainReport {
    pub rule: Rule,
    pub target: Label,
    pub certified_precision_lower: f64,
    pub precision_hat: f64,
    pub coverage_hat: f64,
    pub rule_length: usize,
    pub model_queries: u64,
    #[serde(with = "secs")]
    pub wall_time: Duration,
    pub path: ExplainPath,
    pub similarity: Option<f64>,
    pub matched_entry_index: Option<u64>,
    pub exhausted: bool,
    #[serde(skip)]
    pub trace: Vec<TraceStep>,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(Duration::from_secs_f64)
    }
}

/// Plain Anchors wrapped in the same report shape the engine produces.
pub fn baseline_explain(
    oracle: &Oracle,
    domain: &Domain,
    x: &Instance,
    params: &EngineParams,
    seed: u64,
) -> Result<ExplainReport> {
    let start = Instant::now();
    let q0 = oracle.query_count();
    let res = anchors::explain(oracle, &domain.perturbation, x, domain.padding, &params.anchors(), seed)?;
    Ok(ExplainReport {
        rule_length: res.final_rule.len(),
        target: res.target,
        certified_precision_lower: res.precision_lower,
        precision_hat: res.final_stats.precision_hat().unwrap_or(0.0),
        coverage_hat: res.final_stats.coverage_hat().unwrap_or(0.0),
        rule: res.final_rule,
        model_queries: oracle.query_count() - q0,
        wall_time: start.elapsed(),
        path: ExplainPath::Baseline,
        similarity: None,
        matched_entry_index: None,
        exhausted: res.exhausted,
        trace: res.trace,
    })
}

pub struct Engine {
    oracle: Oracle,
    domain: Domain,
    store: MemoryStore,
    params: EngineParams,
}

impl Engine {
    pub fn new(oracle: Oracle, domain: Domain, params: EngineParams) -> Result<Self> {
        params.validate()?;
        let store = domain.empty_store(&params);
        Ok(Engine { oracle, domain, store, params })
    }

    /// Starts from a previously persisted memory.
    pub fn with_store(mut self, store: MemoryStore) -> Result<Self> {
        if store.schema_hash() != self.domain.schema_hash || store.dim() != self.domain.embedder.dim() {
            return Err(Error::IncompatibleMemory(format!(
                "store ({}, dim {}) does not match domain ({}, dim {})",
                store.schema_hash(),
                store.dim(),
                self.domain.schema_hash,
                self.domain.embedder.dim()
            )));
        }
        self.store = store
            .with_capacity(self.params.capacity)
            .with_similarity(self.params.similarity);
        Ok(self)
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn explain(&mut self, x: &Instance, seed: u64) -> Result<ExplainReport> {
        let start = Instant::now();
        let q0 = self.oracle.query_count();
        let emb = self.domain.embedder.embed(x)?;
        let hit = self
            .store
            .find_most_similar(&emb)?
            .filter(|m| m.similarity >= self.params.tau_sim)
            .map(|m| (m.entry.mid_rule.clone(), m.similarity, m.entry.insertion_index));

        let mut report = match hit {
            None => {
                let res = anchors::explain(
                    &self.oracle,
                    &self.domain.perturbation,
                    x,
                    self.domain.padding,
                    &self.params.anchors(),
                    seed,
                )?;
                self.store.insert(emb, x.clone(), res.mid_rule.clone())?;
                ExplainReport {
                    rule_length: res.final_rule.len(),
                    target: res.target,
                    certified_precision_lower: res.precision_lower,
                    precision_hat: res.final_stats.precision_hat().unwrap_or(0.0),
                    coverage_hat: res.final_stats.coverage_hat().unwrap_or(0.0),
                    rule: res.final_rule,
                    model_queries: 0,
                    wall_time: Duration::ZERO,
                    path: ExplainPath::Miss,
                    similarity: None,
                    matched_entry_index: None,
                    exhausted: res.exhausted,
                    trace: res.trace,
                }
            }
            Some((mid, similarity, index)) => {
                let search = self.params.search();
                let base = transform::horizontal_transform(&mid, x, self.domain.distance.as_ref())?;
                let mut est = anchors::sampled_estimator(&self.oracle, &self.domain.perturbation, x, seed, &search)?;
                let target = est.target();
                let r = transform::vertical_transform(&mut est, base, x, self.domain.padding, self.params.tau_p, &search)?;
                if self.params.insert_on_hit {
                    self.store.insert(emb, x.clone(), r.rule.clone())?;
                }
                ExplainReport {
                    rule_length: r.rule.len(),
                    target,
                    certified_precision_lower: r.precision_lower,
                    precision_hat: r.stats.precision_hat().unwrap_or(0.0),
                    coverage_hat: r.stats.coverage_hat().unwrap_or(0.0),
                    rule: r.rule,
                    model_queries: 0,
                    wall_time: Duration::ZERO,
                    path: ExplainPath::Hit,
                    similarity: Some(similarity),
                    matched_entry_index: Some(index),
                    exhausted: r.exhausted,
                    trace: r.trace,
                }
            }
        };
        report.model_queries = self.oracle.query_count() - q0;
        report.wall_time = start.elapsed();
        Ok(report)
    }

    /// Explains `xs` in order against the evolving memory; input `i` uses
    /// seed `base_seed + i`.
    pub fn explain_stream(&mut self, xs: &[Instance], base_seed: u64) -> StreamOutcome {
        let start = Instant::now();
        let q0 = self.oracle.query_count();
        let items: Vec<StreamItem> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| StreamItem {
                index: i,
                result: self.explain(x, base_seed.wrapping_add(i as u64)).map_err(|e| e.to_string()),
            })
            .collect();
        StreamOutcome::new(items, self.oracle.query_count() - q0, start.elapsed())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamItem {
    pub index: usize,
    pub result: std::result::Result<ExplainReport, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamAggregate {
    pub inputs: usize,
    pub hits: usize,
    pub misses: usize,
    pub failures: usize,
    pub hit_rate: f64,
    pub total_queries: u64,
    pub total_time_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamOutcome {
    pub items: Vec<StreamItem>,
    pub aggregate: StreamAggregate,
}

impl StreamOutcome {
    pub fn new(items: Vec<StreamItem>, total_queries: u64, total_time: Duration) -> Self {
        let count = |p: ExplainPath| items.iter().filter(|i| matches!(&i.result, Ok(r) if r.path == p)).count();
        let hits = count(ExplainPath::Hit);
        let misses = count(ExplainPath::Miss);
        let failures = items.iter().filter(|i| i.result.is_err()).count();
        let aggregate = StreamAggregate {
            inputs: items.len(),
            hits,
            misses,
            failures,
            hit_rate: if items.is_empty() { 0.0 } else { hits as f64 / items.len() as f64 },
            total_queries,
            total_time_secs: total_time.as_secs_f64(),
        };
        StreamOutcome { items, aggregate }
    }

    pub fn reports(&self) -> impl Iterator<Item = &ExplainReport> {
        self.items.iter().filter_map(|i| i.result.as_ref().ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BuiltinModel, ModelConfig};
    use crate::rule::Predicate;

    fn binary_domain(n: usize) -> Domain {
        let schema = FeatureSchema::coded(&vec![2; n]);
        Domain::tabular(&schema, &EmpiricalDistribution::uniform(&vec![2; n]))
    }

    fn rule(pairs: &[(usize, u32)]) -> Rule {
        Rule::from_predicates(pairs.iter().map(|&(i, v)| Predicate::new(i, v))).unwrap()
    }

    #[test]
    fn defaults() {
        let p = EngineParams::default();
        assert_eq!((p.tau_p, p.tau_p_mid, p.tau_sim, p.delta, p.seed), (0.95, 0.8, 0.6, 0.6, 42));
        assert!(!p.insert_on_hit);
        p.validate().unwrap();
    }

    #[test]
    fn impossible_similarity_threshold_is_rejected() {
        let p = EngineParams { tau_sim: 1.0 + 1e-9, ..EngineParams::default() };
        assert!(matches!(p.validate(), Err(Error::Argument(_))));
        let o = Oracle::new(BuiltinModel::Constant { label: Label(0), arity: None });
        assert!(Engine::new(o, binary_domain(2), p).is_err());
    }

    #[test]
    fn config_file_overrides_selected_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"tau_sim": 0.75, "seed": 7, "similarity": "exponential"}"#).unwrap();
        let p = EngineParams::from_json_file(&path).unwrap();
        assert_eq!((p.tau_sim, p.seed, p.similarity), (0.75, 7, Similarity::Exponential));
        assert_eq!(p.tau_p, 0.95);
        std::fs::write(&path, r#"{"tau_simm": 0.75}"#).unwrap();
        assert!(matches!(EngineParams::from_json_file(&path), Err(Error::Config(_))));
    }

    #[test]
    fn repeated_input_hits() {
        let o = Oracle::new(BuiltinModel::SingleFeature { feature: 0, arity: Some(2) });
        let mut e = Engine::new(o, binary_domain(2), EngineParams::default()).unwrap();
        let x = Instance::new(vec![1, 1]);
        let out = e.explain_stream(&[x.clone(), x.clone(), x], 42);
        let paths: Vec<ExplainPath> = out.reports().map(|r| r.path).collect();
        assert_eq!(paths, vec![ExplainPath::Miss, ExplainPath::Hit, ExplainPath::Hit]);
        assert_eq!(e.store().len(), 1);
        assert!((out.aggregate.hit_rate - 2.0 / 3.0).abs() < 1e-12);
        let sum: u64 = out.reports().map(|r| r.model_queries).sum();
        assert_eq!(sum, out.aggregate.total_queries);
        assert_eq!(sum, e.oracle().query_count());
        for r in out.reports() {
            assert_eq!(r.rule, rule(&[(0, 1)]));
        }
        assert_eq!(out.reports().nth(1).unwrap().similarity, Some(1.0));
    }

    /// Values in different slots never coincide.
    struct SlotOffset;

    impl FeatureDistance for SlotOffset {
        fn dist(&self, slot_a: usize, a: FeatureValue, slot_b: usize, b: FeatureValue) -> f64 {
            let raw = |s: usize, v: FeatureValue| (10 * s) as f64 + v as f64;
            (raw(slot_a, a) - raw(slot_b, b)).abs()
        }
    }

    fn hit_with_cached(domain: Domain, x: &Instance, cached: Rule) -> (ExplainReport, usize) {
        let o = Oracle::new(BuiltinModel::SingleFeature { feature: 0, arity: Some(2) });
        let mut store = domain.empty_store(&EngineParams::default());
        store.insert(domain.embedder.embed(x).unwrap(), x.clone(), cached).unwrap();
        let mut e = Engine::new(o, domain, EngineParams::default()).unwrap().with_store(store).unwrap();
        let r = e.explain(x, 42).unwrap();
        (r, e.store().len())
    }

    #[test]
    fn hit_path_extends_a_weak_cached_rule() {
        let x = Instance::new(vec![1, 1]);
        let mut domain = binary_domain(2);
        domain.distance = Arc::new(SlotOffset);
        let (r, size) = hit_with_cached(domain, &x, rule(&[(1, 1)]));
        assert_eq!(r.path, ExplainPath::Hit);
        assert_eq!(r.rule, rule(&[(0, 1), (1, 1)]));
        assert_eq!(size, 1);

        // On bare codes both slots of x hold 1, so the cached predicate moves
        // to slot 0 and certifies on its own.
        let (r, _) = hit_with_cached(binary_domain(2), &x, rule(&[(1, 1)]));
        assert_eq!(r.rule, rule(&[(0, 1)]));
    }

    #[test]
    fn miss_path_matches_baseline() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"kind":"conjunction-list","rules":[{"rule":[[0,1],[2,1]],"label":1},{"rule":[[1,0]],"label":2}],"default":0,"arity":4}"#,
        )
        .unwrap();
        let model = BuiltinModel::from_config(cfg).unwrap();
        let domain = binary_domain(4);
        let params = EngineParams::default();
        for (i, bits) in [[1, 0, 1, 0], [0, 1, 1, 1], [1, 1, 1, 1]].iter().enumerate() {
            let x = Instance::new(bits.to_vec());
            let mut e = Engine::new(Oracle::new(model.clone()), domain.clone(), params).unwrap();
            let a = e.explain(&x, 42 + i as u64).unwrap();
            let b = baseline_explain(&Oracle::new(model.clone()), &domain, &x, &params, 42 + i as u64).unwrap();
            assert_eq!(a.path, ExplainPath::Miss);
            assert_eq!(a.rule, b.rule);
            assert_eq!(a.model_queries, b.model_queries);
        }
    }

    #[test]
    fn failures_are_recorded_and_the_stream_continues() {
        let o = Oracle::new(BuiltinModel::Constant { label: Label(0), arity: Some(2) });
        let mut e = Engine::new(o, binary_domain(2), EngineParams::default()).unwrap();
        let out = e.explain_stream(&[Instance::new(vec![0, 1, 1]), Instance::new(vec![0, 1])], 1);
        assert_eq!(out.aggregate.failures, 1);
        assert_eq!(out.aggregate.misses, 1);
        let json = serde_json::to_string(&out.aggregate).unwrap();
        assert!(json.contains("\"hit_rate\":0.0"));
    }
}
