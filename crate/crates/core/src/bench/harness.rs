//! Paired baseline-versus-memory runs over one input stream.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_sampling_reduction, compute_speedup, MeanCi};
use crate::engine::{baseline_explain, Domain, Engine, EngineParams, ExplainPath, ExplainReport};
use crate::error::{Error, Result};
use crate::models::{Classifier, Oracle};
use crate::par::{self, Execution};
use crate::perturb::{exact_under_product, PerturbationSampler, MAX_EXACT_UNIVERSE};
use crate::rule::{Instance, Label, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub params: EngineParams,
    /// Input `i` is explained with seed `base_seed + i` by both methods.
    pub base_seed: u64,
    /// Held-out pool size when the perturbation universe is too large to enumerate.
    pub fidelity_pool: usize,
    pub fidelity_seed: u64,
    /// Runs the two methods on separate threads when parallel.
    pub exec: Execution,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let params = EngineParams::default();
        BenchConfig {
            base_seed: params.seed,
            params,
            fidelity_pool: 50_000,
            fidelity_seed: 7,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Manchors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityMode {
    Exact,
    Pool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRow {
    pub method: Method,
    pub input_index: usize,
    pub path: Option<ExplainPath>,
    pub queries: u64,
    pub time: f64,
    pub precision: Option<f64>,
    pub coverage: Option<f64>,
    pub length: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub total_time_secs: f64,
    pub total_queries: u64,
    pub failures: usize,
    pub precision: MeanCi,
    pub coverage: MeanCi,
    pub length: MeanCi,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColdStartPoint {
    pub inputs: usize,
    pub baseline_mean_time_secs: f64,
    pub manchors_mean_time_secs: f64,
    pub baseline_mean_queries: f64,
    pub manchors_mean_queries: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub inputs: usize,
    pub complete: bool,
    pub fidelity: FidelityMode,
    pub tau_p: f64,
    pub baseline: MethodSummary,
    pub manchors: MethodSummary,
    /// Wall-time ratio.
    pub speedup: Option<f64>,
    /// Query-count ratio.
    pub query_speedup: Option<f64>,
    pub sampling_reduction: Option<f64>,
    pub hit_rate: f64,
    pub memory_size: usize,
    /// Hit-path rules whose exact precision reaches `tau_p - 0.05`.
    pub hit_precise_fraction: Option<f64>,
    pub cold_start: Vec<ColdStartPoint>,
    #[serde(skip)]
    pub rows: Vec<InputRow>,
}

type Outcome = std::result::Result<ExplainReport, String>;

fn run_baseline(model: Arc<dyn Classifier>, domain: &Domain, xs: &[Instance], cfg: &BenchConfig) -> Vec<Outcome> {
    let oracle = Oracle::from_arc(model);
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            baseline_explain(&oracle, domain, x, &cfg.params, cfg.base_seed.wrapping_add(i as u64))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn run_manchors(
    model: Arc<dyn Classifier>,
    domain: &Domain,
    xs: &[Instance],
    cfg: &BenchConfig,
) -> Result<(Vec<Outcome>, usize)> {
    let mut engine = Engine::new(Oracle::from_arc(model), domain.clone(), cfg.params)?;
    let out = engine.explain_stream(xs, cfg.base_seed);
    Ok((out.items.into_iter().map(|i| i.result).collect(), engine.store().len()))
}

/// Scores final rules against quantities computed without the oracle counter.
enum Evaluator {
    Exact,
    Pool { samples: Vec<Instance>, labels: Vec<Label> },
}

impl Evaluator {
    fn for_input(model: &dyn Classifier, domain: &Domain, x: &Instance, index: usize, cfg: &BenchConfig) -> Result<Self> {
        let slots = domain.perturbation.slot_distributions(x)?;
        let size = slots.iter().try_fold(1u64, |acc, s| acc.checked_mul(s.support_len() as u64));
        if size.is_some_and(|n| n <= MAX_EXACT_UNIVERSE) {
            return Ok(Evaluator::Exact);
        }
        let mut sampler =
            PerturbationSampler::new(&domain.perturbation, x.clone(), cfg.fidelity_seed.wrapping_add(index as u64))?;
        let samples = sampler.sample_unconditional(cfg.fidelity_pool);
        let labels = model.predict_batch(&samples, Execution::Sequential)?;
        Ok(Evaluator::Pool { samples, labels })
    }

    fn score(&self, model: &dyn Classifier, domain: &Domain, x: &Instance, rule: &Rule, target: Label) -> Option<(f64, f64)> {
        match self {
            Evaluator::Exact => {
                let slots = domain.perturbation.slot_distributions(x).ok()?;
                exact_under_product(&slots, rule, model, target, Execution::Sequential).ok()
            }
            Evaluator::Pool { samples, labels } => {
                let mut covered = 0usize;
                let mut hits = 0usize;
                for (z, y) in samples.iter().zip(labels) {
                    if rule.matches(z) {
                        covered += 1;
                        hits += usize::from(*y == target);
                    }
                }
                (covered > 0).then(|| (hits as f64 / covered as f64, covered as f64 / samples.len() as f64))
            }
        }
    }
}

fn row(method: Method, index: usize, outcome: &Outcome, fidelity: Option<(f64, f64)>) -> InputRow {
    match outcome {
        Ok(r) => InputRow {
            method,
            input_index: index,
            path: Some(r.path),
            queries: r.model_queries,
            time: r.wall_time.as_secs_f64(),
            precision: fidelity.map(|f| f.0),
            coverage: fidelity.map(|f| f.1),
            length: Some(r.rule_length),
            error: None,
        },
        Err(e) => InputRow {
            method,
            input_index: index,
            path: None,
            queries: 0,
            time: 0.0,
            precision: None,
            coverage: None,
            length: None,
            error: Some(e.clone()),
        },
    }
}

fn summarize(rows: &[&InputRow]) -> MethodSummary {
    let pick = |f: fn(&InputRow) -> Option<f64>| rows.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
    MethodSummary {
        total_time_secs: rows.iter().map(|r| r.time).sum(),
        total_queries: rows.iter().map(|r| r.queries).sum(),
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        precision: MeanCi::of(&pick(|r| r.precision)),
        coverage: MeanCi::of(&pick(|r| r.coverage)),
        length: MeanCi::of(&pick(|r| r.length.map(|l| l as f64))),
    }
}

fn cold_start(base: &[&InputRow], ours: &[&InputRow]) -> Vec<ColdStartPoint> {
    let mut acc = [0.0f64; 4];
    base.iter()
        .zip(ours)
        .enumerate()
        .map(|(i, (b, o))| {
            acc[0] += b.time;
            acc[1] += o.time;
            acc[2] += b.queries as f64;
            acc[3] += o.queries as f64;
            let n = (i + 1) as f64;
            ColdStartPoint {
                inputs: i + 1,
                baseline_mean_time_secs: acc[0] / n,
                manchors_mean_time_secs: acc[1] / n,
                baseline_mean_queries: acc[2] / n,
                manchors_mean_queries: acc[3] / n,
            }
        })
        .collect()
}

pub fn run_paired_benchmark(
    xs: &[Instance],
    model: Arc<dyn Classifier>,
    domain: &Domain,
    cfg: &BenchConfig,
) -> Result<BenchmarkSummary> {
    if xs.is_empty() {
        return Err(Error::Argument("benchmark stream is empty".into()));
    }
    cfg.params.validate()?;
    let (base, ours) = par::join(
        cfg.exec,
        || run_baseline(Arc::clone(&model), domain, xs, cfg),
        || run_manchors(Arc::clone(&model), domain, xs, cfg),
    );
    let (ours, memory_size) = ours?;

    let indices: Vec<usize> = (0..xs.len()).collect();
    let scored: Vec<(InputRow, InputRow, bool)> = par::map_coarse(cfg.exec, &indices, |&i| {
        let x = &xs[i];
        let evaluator = Evaluator::for_input(model.as_ref(), domain, x, i, cfg);
        let fid = |o: &Outcome| match (&evaluator, o) {
            (Ok(ev), Ok(r)) => ev.score(model.as_ref(), domain, x, &r.rule, r.target),
            _ => None,
        };
        let exact = matches!(evaluator, Ok(Evaluator::Exact));
        (row(Method::Baseline, i, &base[i], fid(&base[i])), row(Method::Manchors, i, &ours[i], fid(&ours[i])), exact)
    });

    let all_exact = scored.iter().all(|s| s.2);
    let base_rows: Vec<&InputRow> = scored.iter().map(|s| &s.0).collect();
    let our_rows: Vec<&InputRow> = scored.iter().map(|s| &s.1).collect();
    let baseline = summarize(&base_rows);
    let manchors = summarize(&our_rows);

    let hits: Vec<&&InputRow> = our_rows.iter().filter(|r| r.path == Some(ExplainPath::Hit)).collect();
    let tau = cfg.params.tau_p;
    let hit_precise_fraction = (!hits.is_empty()).then(|| {
        hits.iter().filter(|r| r.precision.is_some_and(|p| p >= tau - 0.05)).count() as f64 / hits.len() as f64
    });

    let summary = BenchmarkSummary {
        inputs: xs.len(),
        complete: baseline.failures == 0 && manchors.failures == 0,
        fidelity: if all_exact { FidelityMode::Exact } else { FidelityMode::Pool },
        tau_p: tau,
        speedup: compute_speedup(baseline.total_time_secs, manchors.total_time_secs).ok(),
        query_speedup: (manchors.total_queries > 0)
            .then(|| baseline.total_queries as f64 / manchors.total_queries as f64),
        sampling_reduction: compute_sampling_reduction(baseline.total_queries, manchors.total_queries).ok(),
        hit_rate: hits.len() as f64 / xs.len() as f64,
        memory_size,
        hit_precise_fraction,
        cold_start: cold_start(&base_rows, &our_rows),
        baseline,
        manchors,
        rows: scored.into_iter().flat_map(|(b, o, _)| [b, o]).collect(),
    };
    Ok(summary)
}

impl BenchmarkSummary {
    pub fn rows_of(&self, method: Method) -> impl Iterator<Item = &InputRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    /// One line per input and method.
    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "input_index", "path", "queries", "time", "precision", "coverage", "length"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let method = match r.method {
                Method::Baseline => "baseline",
                Method::Manchors => "manchors",
            };
            let path = match r.path {
                Some(ExplainPath::Hit) => "hit",
                Some(ExplainPath::Miss) => "miss",
                Some(ExplainPath::Baseline) => "baseline",
                None => "error",
            };
            w.write_record([
                method.to_string(),
                r.input_index.to_string(),
                path.to_string(),
                r.queries.to_string(),
                r.time.to_string(),
                opt(r.precision),
                opt(r.coverage),
                r.length.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
