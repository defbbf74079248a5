//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! carrying the measured values, then asserts.

mod common;

use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use manchors::anchors::{self, generate_predicates, AnchorsParams, ExactEstimator, SearchConfig};
use manchors::bandit::{kl_bernoulli, kl_lower_bound, kl_upper_bound};
use manchors::bench::{
    compute_sampling_reduction, compute_speedup, generate_clustered_workload, run_paired_benchmark, BenchConfig,
    BenchmarkSummary, Workload,
};
use manchors::data::{EmpiricalDistribution, FeatureSchema};
use manchors::engine::{baseline_explain, Domain, Engine, EngineParams, ExplainPath};
use manchors::memory::MemoryStore;
use manchors::models::{BuiltinModel, Classifier};
use manchors::perturb::{exact_precision_coverage, exact_under_product, product_universe, PerturbationModel};
use manchors::transform::{horizontal_transform, vertical_transform, TabularDistance};
use manchors::{Execution, Instance, Label, Oracle, Predicate, Rule};

fn verdict(id: u32, pass: bool, detail: String) {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn uniform(cards: &[u32]) -> PerturbationModel {
    PerturbationModel::tabular(EmpiricalDistribution::uniform(cards))
}

fn all_rules(cards: &[u32]) -> Vec<Rule> {
    // Every slot is either free or pinned to one of its values.
    let mut rules = vec![Rule::empty()];
    for (i, &c) in cards.iter().enumerate() {
        let mut next = Vec::new();
        for r in &rules {
            next.push(r.clone());
            for v in 0..c {
                next.push(r.conjoin(Predicate::new(i, v)).unwrap());
            }
        }
        rules = next;
    }
    rules
}

#[test]
fn criterion_1_exact_oracle_anchors() {
    let start = Instant::now();
    let model = BuiltinModel::SingleFeature { feature: 0, arity: Some(2) };
    let x = Instance::new(vec![1, 1]);
    let res = anchors::explain(&Oracle::new(model.clone()), &uniform(&[2, 2]), &x, None, &AnchorsParams::default(), 42)
        .unwrap();

    let slots = uniform(&[2, 2]).slot_distributions(&x).unwrap();
    let (u, w) = product_universe(&slots).unwrap();
    let oracle = Oracle::new(model);
    let (p, c) = exact_precision_coverage(&u, &w, &res.final_rule, &oracle, Label(1)).unwrap();

    let candidates: Vec<Rule> = all_rules(&[2, 2]).into_iter().filter(|r| !r.is_empty()).collect();
    let mut best: Option<(f64, Rule)> = None;
    for r in &candidates {
        let Ok((rp, rc)) = exact_precision_coverage(&u, &w, r, &oracle, Label(1)) else { continue };
        if rp >= 0.95 && best.as_ref().is_none_or(|(bc, br)| rc > *bc || (rc == *bc && r.len() < br.len())) {
            best = Some((rc, r.clone()));
        }
    }
    let expected = Rule::from_predicates([Predicate::new(0, 1)]).unwrap();
    let elapsed = start.elapsed();
    let pass = candidates.len() == 8
        && res.final_rule == expected
        && best.as_ref().map(|b| &b.1) == Some(&expected)
        && p == 1.0
        && c == 0.5
        && elapsed < Duration::from_secs(1);
    verdict(
        1,
        pass,
        format!(
            "final {} precision {p} coverage {c}; exhaustive best over {} rules {:?}; {:.3}s",
            res.final_rule,
            candidates.len(),
            best.map(|b| b.1.to_string()),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_certificate_soundness() {
    let start = Instant::now();
    let params = AnchorsParams::default();
    let mut sound = 0;
    for seed in 0..100u64 {
        let n = 2 + (seed % 4) as usize;
        let cards = vec![3; n];
        let (model, x) = common::random_conjunction_model(seed, n, 3);
        let res = anchors::explain(&Oracle::new(model.clone()), &uniform(&cards), &x, None, &params, seed).unwrap();
        let slots = uniform(&cards).slot_distributions(&x).unwrap();
        let (p, _) = exact_under_product(&slots, &res.final_rule, &model, res.target, Execution::Sequential).unwrap();
        if p >= params.tau_p - 0.05 {
            sound += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        sound >= 90 && elapsed < Duration::from_secs(60),
        format!("{sound}/100 final rules with exact precision >= 0.90 (need >= 90); {:.2}s", elapsed.as_secs_f64()),
    );
}

fn workload() -> &'static Workload {
    static W: OnceLock<Workload> = OnceLock::new();
    W.get_or_init(|| generate_clustered_workload(10, 50, 6, 8, 0.1, 42).unwrap())
}

#[test]
fn criterion_3_miss_path_equivalence() {
    let w = workload();
    let domain = Domain::tabular(&w.schema, &w.marginals);
    let params = EngineParams::default();
    let model: Arc<dyn Classifier> = Arc::new(w.model.clone());
    let mut identical = 0;
    for (i, x) in w.instances.iter().take(50).enumerate() {
        let seed = params.seed + i as u64;
        let mut engine = Engine::new(Oracle::from_arc(Arc::clone(&model)), domain.clone(), params).unwrap();
        let ours = engine.explain(x, seed).unwrap();
        let base = baseline_explain(&Oracle::from_arc(Arc::clone(&model)), &domain, x, &params, seed).unwrap();
        let same = ours.path == ExplainPath::Miss
            && ours.rule == base.rule
            && ours.model_queries == base.model_queries
            && ours.certified_precision_lower.to_bits() == base.certified_precision_lower.to_bits()
            && ours.coverage_hat.to_bits() == base.coverage_hat.to_bits();
        identical += usize::from(same);
    }
    verdict(3, identical == 50, format!("{identical}/50 inputs bit-identical to baseline"));
}

fn paired() -> &'static (BenchmarkSummary, Duration) {
    static S: OnceLock<(BenchmarkSummary, Duration)> = OnceLock::new();
    S.get_or_init(|| {
        let w = workload();
        let domain = Domain::tabular(&w.schema, &w.marginals);
        let start = Instant::now();
        let s = run_paired_benchmark(&w.instances, Arc::new(w.model.clone()), &domain, &BenchConfig::default()).unwrap();
        (s, start.elapsed())
    })
}

#[test]
fn criterion_4_acceleration_trend() {
    let (s, elapsed) = paired();
    let red = s.sampling_reduction.unwrap();
    let qsp = s.query_speedup.unwrap();
    let precise = s.hit_precise_fraction.unwrap_or(0.0);
    let pass = s.inputs == 500
        && s.complete
        && red >= 0.30
        && qsp >= 1.3
        && precise >= 0.90
        && *elapsed < Duration::from_secs(600);
    verdict(
        4,
        pass,
        format!(
            "sampling reduction {:.1}% (>= 30%), query speedup {qsp:.2}x (>= 1.3x), hit rules precise {:.1}% (>= 90%); \
             hit rate {:.2}, memory {}, wall speedup {:.2}x, {:.1}s",
            red * 100.0,
            precise * 100.0,
            s.hit_rate,
            s.memory_size,
            s.speedup.unwrap_or(f64::NAN),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_5_fidelity_drift() {
    let (s, _) = paired();
    let cov = s.manchors.coverage.mean / s.baseline.coverage.mean;
    let len = s.manchors.length.mean / s.baseline.length.mean;
    verdict(
        5,
        cov >= 0.90 && len <= 1.25,
        format!(
            "coverage {:.5} vs {:.5} (ratio {cov:.3} >= 0.90), length {:.3} vs {:.3} (ratio {len:.3} <= 1.25)",
            s.manchors.coverage.mean, s.baseline.coverage.mean, s.manchors.length.mean, s.baseline.length.mean
        ),
    );
}

#[test]
fn criterion_6_bandit_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    let mut interior = 0;
    for k in 0..1000 {
        let trials: u64 = rng.random_range(1..5000);
        let p_hat = rng.random_range(0..=trials) as f64 / trials as f64;
        let level: f64 = rng.random_range(0.0..12.0);
        let q: f64 = rng.random_range(0.0..=1.0);

        // Equality is judged against q after clamping into [1e-12, 1 - 1e-12].
        let clamp = |v: f64| v.clamp(1e-12, 1.0 - 1e-12);
        for q in [q, p_hat] {
            let kl = kl_bernoulli(p_hat, q);
            if kl < 0.0 || (kl == 0.0) != (p_hat == clamp(q)) {
                failures.push(format!("#{k} kl({p_hat}, {q}) = {kl}"));
            }
        }
        let (lo, hi) = (kl_lower_bound(p_hat, trials, level), kl_upper_bound(p_hat, trials, level));
        if !(lo <= p_hat && p_hat <= hi) {
            failures.push(format!("#{k} bracket {lo} <= {p_hat} <= {hi}"));
        }
        let more = trials + rng.random_range(1..5000);
        if kl_upper_bound(p_hat, more, level) > hi || kl_lower_bound(p_hat, more, level) < lo {
            failures.push(format!("#{k} monotonicity at trials {trials} -> {more}"));
        }
        for b in [lo, hi] {
            if b > 0.0 && b < 1.0 && b != p_hat {
                interior += 1;
                let residual = (trials as f64 * kl_bernoulli(p_hat, b) - level).abs();
                if residual > 1e-6 {
                    failures.push(format!("#{k} residual {residual:e} at bound {b}"));
                }
            }
        }
    }
    verdict(
        6,
        failures.is_empty(),
        format!("1000 triples, {interior} interior bounds checked, {} violations {:?}", failures.len(), failures.first()),
    );
}

#[test]
fn criterion_7_transform_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Horizontal transform over the workload's raw-unit schema and a coded one.
    let w = workload();
    let raw = TabularDistance::new(w.schema.clone());
    let coded = TabularDistance::new(FeatureSchema::coded(&[8; 6]));
    let mut covered = 0;
    for k in 0..1000 {
        let old: Vec<u32> = (0..6).map(|_| rng.random_range(0..8)).collect();
        let preds: Vec<Predicate> =
            (0..6).filter(|_| rng.random_bool(0.5)).map(|i| Predicate::new(i, old[i])).collect();
        let r_mid = if preds.is_empty() {
            Rule::from_predicates([Predicate::new(0, old[0])]).unwrap()
        } else {
            Rule::from_predicates(preds).unwrap()
        };
        let x_new = Instance::new((0..6).map(|_| rng.random_range(0..8)).collect());
        let dist = if k % 2 == 0 { &raw } else { &coded };
        let out = horizontal_transform(&r_mid, &x_new, dist).unwrap();
        covered += usize::from(out.matches(&x_new) && out.len() <= r_mid.len());
    }

    // Vertical transform on enumerable universes with the exact estimator.
    let mut superset = 0;
    let mut monotone = 0;
    let mut runs = 0;
    let mut first_bad: Option<String> = None;
    for seed in 0..200u64 {
        let n = 3 + (seed % 3) as usize;
        let (model, x) = common::random_conjunction_model(1000 + seed, n, 3);
        let model: Arc<dyn Classifier> = Arc::new(model);
        let slots = uniform(&vec![3; n]).slot_distributions(&x).unwrap();
        let target = model.predict_batch(std::slice::from_ref(&x), Execution::Sequential).unwrap()[0];
        let base = Rule::from_predicates(
            generate_predicates(&x, None).into_iter().filter(|_| rng.random_bool(0.3)),
        )
        .unwrap();
        let mut est = ExactEstimator::new(slots, Arc::clone(&model), target, Execution::Sequential);
        let out = vertical_transform(&mut est, base.clone(), &x, None, 0.95, &SearchConfig::default()).unwrap();
        runs += 1;
        superset += usize::from(base.is_subset_of(&out.rule) && out.rule.matches(&x));
        let precisions: Vec<f64> = out.trace.iter().map(|s| est.exact(&s.rule).unwrap().0).collect();
        if precisions.windows(2).all(|p| p[1] >= p[0] - 1e-12) {
            monotone += 1;
        } else if first_bad.is_none() {
            first_bad = Some(format!("seed {seed}: {precisions:?}"));
        }
    }
    verdict(
        7,
        covered == 1000 && superset == runs && monotone == runs,
        format!(
            "HT covers {covered}/1000; VT superset {superset}/{runs}; VT exact precision non-decreasing {monotone}/{runs} {}",
            first_bad.unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_8_kdtree_equals_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 4;
    let mut store = MemoryStore::new(dim, "acceptance");
    let x = Instance::new(vec![0]);
    for _ in 0..10_000 {
        // Integer grid: many exact duplicates and equidistant neighbours.
        let emb: Vec<f64> = (0..dim).map(|_| rng.random_range(0..6) as f64).collect();
        store.insert(emb, x.clone(), Rule::empty()).unwrap();
    }
    let mut agree = 0;
    for k in 0..1000 {
        let q: Vec<f64> = if k % 2 == 0 {
            (0..dim).map(|_| rng.random_range(-2..14) as f64 / 2.0).collect()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..6.0)).collect()
        };
        let got = store.find_most_similar(&q).unwrap().unwrap().entry.insertion_index;
        agree += usize::from(got == store.linear_scan(&q).unwrap().insertion_index);
    }
    verdict(8, agree == 1000, format!("{agree}/1000 probes agree with linear scan over 10000 entries"));
}

#[test]
fn criterion_9_metric_formulas() {
    let sp = compute_speedup(513.06, 58.70).unwrap();
    let r87 = compute_sampling_reduction(100, 13).unwrap();
    let r54 = compute_sampling_reduction(100, 46).unwrap();
    verdict(
        9,
        (sp - 8.74).abs() <= 0.01 && (r87 - 0.87).abs() < 1e-9 && (r54 - 0.54).abs() < 1e-9,
        format!("speedup {sp:.4} (8.74 +- 0.01), reductions {r87:.4} and {r54:.4}"),
    );
}
