use std::sync::Arc;

use manchors::bench::generate_clustered_workload;
use manchors::data::{ingest_text_reader, EmbeddingTable, EmpiricalDistribution, FeatureSchema};
use manchors::engine::{Domain, Engine, EngineParams, StreamOutcome};
use manchors::models::BuiltinModel;
use manchors::perturb::exact_under_product;
use manchors::{Execution, ExplainPath, Instance, Label, MemoryStore, Oracle};

fn workload_engine(params: EngineParams) -> (Engine, Vec<Instance>) {
    let w = generate_clustered_workload(4, 15, 5, 6, 0.1, 11).unwrap();
    let domain = Domain::tabular(&w.schema, &w.marginals);
    let engine = Engine::new(Oracle::new(w.model), domain, params).unwrap();
    (engine, w.instances)
}

fn check_accounting(engine: &Engine, out: &StreamOutcome, q_before: u64) {
    let sum: u64 = out.reports().map(|r| r.model_queries).sum();
    assert_eq!(sum, out.aggregate.total_queries);
    assert_eq!(engine.oracle().query_count() - q_before, sum);
}

#[test]
fn store_grows_by_misses_and_queries_add_up() {
    let (mut engine, xs) = workload_engine(EngineParams::default());
    let out = engine.explain_stream(&xs, 100);
    assert_eq!(out.aggregate.failures, 0);
    assert_eq!(out.aggregate.hits + out.aggregate.misses, xs.len());
    assert_eq!(engine.store().len(), out.aggregate.misses);
    assert!(out.aggregate.hits > 0, "clustered stream produced no hits");
    check_accounting(&engine, &out, 0);

    let indices: Vec<u64> = engine.store().entries().map(|e| e.insertion_index).collect();
    assert_eq!(indices, (0..indices.len() as u64).collect::<Vec<_>>());
}

#[test]
fn every_rule_covers_its_input() {
    let (mut engine, xs) = workload_engine(EngineParams::default());
    let tau = engine.params().tau_p;
    let out = engine.explain_stream(&xs, 3);
    for (item, x) in out.items.iter().zip(&xs) {
        let r = item.result.as_ref().unwrap();
        assert!(r.rule.matches(x), "input {} not covered by {}", item.index, r.rule);
        assert!(r.exhausted || r.certified_precision_lower >= tau);
        assert_eq!(r.rule_length, r.rule.len());
        match r.path {
            ExplainPath::Hit => assert!(r.similarity.unwrap() >= engine.params().tau_sim),
            ExplainPath::Miss => assert!(r.matched_entry_index.is_none() || r.similarity.unwrap() < engine.params().tau_sim),
            ExplainPath::Baseline => panic!("engine reported a baseline path"),
        }
    }
}

#[test]
fn dissimilar_stream_never_hits() {
    // Distinct corners of a binary cube: pairwise embeddings stay far apart.
    let cards = [2u32; 6];
    let xs: Vec<Instance> = [0u32, 0b111000, 0b000111, 0b101010, 0b010101]
        .iter()
        .map(|m| Instance::new((0..6).map(|i| (m >> i) & 1).collect()))
        .collect();
    let model = BuiltinModel::lookup_from_fn(cards.to_vec(), Execution::Sequential, |z| {
        Label(z.values().iter().sum::<u32>() % 2)
    })
    .unwrap();
    let domain = Domain::tabular(&FeatureSchema::coded(&cards), &EmpiricalDistribution::uniform(&cards));
    let params = EngineParams { tau_sim: 0.5, ..EngineParams::default() };
    let mut engine = Engine::new(Oracle::new(model), domain, params).unwrap();
    let out = engine.explain_stream(&xs, 0);
    assert_eq!(out.aggregate.hits, 0);
    assert_eq!(engine.store().len(), xs.len());
    check_accounting(&engine, &out, 0);
}

#[test]
fn capacity_bounds_the_store() {
    let params = EngineParams { capacity: Some(5), tau_sim: 0.99, ..EngineParams::default() };
    let (mut engine, xs) = workload_engine(params);
    let out = engine.explain_stream(&xs[..20], 0);
    assert!(out.aggregate.misses > 5);
    assert_eq!(engine.store().len(), 5);
}

#[test]
fn persisted_memory_warm_starts_a_new_engine() {
    let (mut engine, xs) = workload_engine(EngineParams::default());
    engine.explain_stream(&xs, 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mem.jsonl");
    engine.store().persist(&path).unwrap();

    let domain = engine.domain().clone();
    let loaded = MemoryStore::load(&path, domain.embedder.dim(), &domain.schema_hash).unwrap();
    assert_eq!(loaded.len(), engine.store().len());
    let w = generate_clustered_workload(4, 15, 5, 6, 0.1, 11).unwrap();
    let mut warm = Engine::new(Oracle::new(w.model), domain, *engine.params()).unwrap().with_store(loaded).unwrap();
    // Stored inputs are at distance zero from themselves.
    let stored: Vec<Instance> = warm.store().entries().map(|e| e.instance.clone()).collect();
    let out = warm.explain_stream(&stored, 500);
    assert_eq!(out.aggregate.hits, stored.len());
    assert_eq!(warm.store().len(), stored.len());

    assert!(MemoryStore::load(&path, warm.domain().embedder.dim(), "other").is_err());
}

const EMBEDDINGS: &[(&str, [f64; 2])] = &[
    ("good", [1.0, 0.0]),
    ("great", [1.05, 0.0]),
    ("fine", [0.9, 0.1]),
    ("bad", [-1.0, 0.0]),
    ("awful", [-1.05, 0.0]),
    ("the", [0.0, 3.0]),
    ("movie", [0.1, 3.0]),
    ("was", [0.0, 3.1]),
];

#[test]
fn text_stream_reuses_rules_for_synonyms() {
    let table = EmbeddingTable::new(EMBEDDINGS.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect()).unwrap();
    let text = "1\tthe movie was good\n1\tthe movie was great\n0\tthe movie was bad\n";
    let ds = ingest_text_reader(text.as_bytes(), &table, 4).unwrap();
    let positive: Vec<u32> = ["good", "great", "fine"].iter().map(|t| table.id(t).unwrap()).collect();
    let cards = ds.schema.cardinalities();
    let model = BuiltinModel::lookup_from_fn(cards, Execution::default(), |z| {
        Label(u32::from(z.values().iter().any(|v| positive.contains(v))))
    })
    .unwrap();
    let reference = model.clone();
    let domain = Domain::text(&ds.schema, Arc::new(table)).unwrap();
    // Mean embeddings dilute one differing token over four slots.
    let params = EngineParams { tau_sim: 0.9, ..EngineParams::default() };
    let mut engine = Engine::new(Oracle::new(model), domain.clone(), params).unwrap();
    let out = engine.explain_stream(&ds.instances, 9);

    let reports: Vec<_> = out.items.iter().map(|i| i.result.as_ref().unwrap()).collect();
    assert_eq!(reports[0].path, ExplainPath::Miss);
    assert_eq!(reports[1].path, ExplainPath::Hit);
    assert_eq!(reports[2].path, ExplainPath::Miss);
    for (r, x) in reports.iter().zip(&ds.instances) {
        assert!(r.rule.matches(x));
        let slots = domain.perturbation.slot_distributions(x).unwrap();
        let (p, _) = exact_under_product(&slots, &r.rule, &reference, r.target, Execution::Sequential).unwrap();
        assert!(p >= 0.9, "precision {p} for {}", r.rule);
    }
}
