//! Greedy Anchors search.
//!
//! Each iteration extends the committed rule by one predicate: every
//! extension is a bandit arm, the highest-precision arm is committed, and the
//! search stops once that arm is certified at the output threshold. Along the
//! way the first committed rule certified at the intermediate threshold is
//! kept as the mid rule, which is what the memory caches.
//!
//! The loop is generic over an [`Estimator`] so the same code runs against
//! sampled perturbations or against exact enumeration of a finite universe.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bandit::{self, BanditConfig, Certificate};
use crate::error::{Error, Result};
use crate::models::{Classifier, Oracle};
use crate::par::Execution;
use crate::perturb::{exact_under_product, CoveragePool, PerturbationModel, PerturbationSampler, SlotDistribution};
use crate::rule::{FeatureValue, Instance, Label, Predicate, Rule, RuleStats};

/// Source of precision samples and coverage for candidate rules.
pub trait Estimator {
    /// Draws `count` perturbations under `rule` and returns how many kept
    /// the target label.
    fn sample_precision(&mut self, rule: &Rule, count: usize) -> Result<u64>;

    fn record_coverage(&mut self, rule: &Rule, stats: &mut RuleStats) -> Result<()>;

    /// Cumulative cost so far, in model queries.
    fn queries(&self) -> u64;
}

/// Perturbation sampling against a live oracle with a shared coverage pool.
pub struct SampledEstimator<'a> {
    sampler: PerturbationSampler,
    oracle: &'a Oracle,
    target: Label,
    pool: CoveragePool,
}

impl<'a> SampledEstimator<'a> {
    pub fn new(sampler: PerturbationSampler, oracle: &'a Oracle, target: Label, pool: CoveragePool) -> Self {
        SampledEstimator { sampler, oracle, target, pool }
    }

    pub fn target(&self) -> Label {
        self.target
    }
}

impl Estimator for SampledEstimator<'_> {
    fn sample_precision(&mut self, rule: &Rule, count: usize) -> Result<u64> {
        let mut scratch = RuleStats::default();
        self.sampler
            .estimate_precision(rule, self.oracle, self.target, count, &mut scratch)
    }

    fn record_coverage(&mut self, rule: &Rule, stats: &mut RuleStats) -> Result<()> {
        self.pool.record(rule, stats);
        Ok(())
    }

    fn queries(&self) -> u64 {
        self.oracle.query_count()
    }
}

const EXACT_COVERAGE_SCALE: u64 = 1_000_000_000_000;

/// Exact precision substituted for sampling on enumerable universes.
///
/// A rule's sample stream is deterministic: after `t` trials it reports
/// `round(t * precision)` successes, so the running estimate converges to the
/// exact value without noise.
pub struct ExactEstimator {
    slots: Vec<SlotDistribution>,
    model: Arc<dyn Classifier>,
    target: Label,
    exec: Execution,
    exact: HashMap<Rule, (f64, f64)>,
    emitted: HashMap<Rule, (u64, u64)>,
    trials: u64,
}

impl ExactEstimator {
    pub fn new(slots: Vec<SlotDistribution>, model: Arc<dyn Classifier>, target: Label, exec: Execution) -> Self {
        ExactEstimator {
            slots,
            model,
            target,
            exec,
            exact: HashMap::new(),
            emitted: HashMap::new(),
            trials: 0,
        }
    }

    /// `(precision, coverage)` of `rule`, memoized.
    pub fn exact(&mut self, rule: &Rule) -> Result<(f64, f64)> {
        if let Some(&pc) = self.exact.get(rule) {
            return Ok(pc);
        }
        let pc = exact_under_product(&self.slots, rule, self.model.as_ref(), self.target, self.exec)?;
        self.exact.insert(rule.clone(), pc);
        Ok(pc)
    }
}

impl Estimator for ExactEstimator {
    fn sample_precision(&mut self, rule: &Rule, count: usize) -> Result<u64> {
        let (p, _) = self.exact(rule)?;
        let (succ, trials) = self.emitted.get(rule).copied().unwrap_or((0, 0));
        let t = trials + count as u64;
        let s = ((p * t as f64).round() as u64).clamp(succ, succ + count as u64);
        self.emitted.insert(rule.clone(), (s, t));
        self.trials += count as u64;
        Ok(s - succ)
    }

    fn record_coverage(&mut self, rule: &Rule, stats: &mut RuleStats) -> Result<()> {
        let (_, c) = self.exact(rule)?;
        stats.record_coverage((c * EXACT_COVERAGE_SCALE as f64).round() as u64, EXACT_COVERAGE_SCALE);
        Ok(())
    }

    fn queries(&self) -> u64 {
        self.trials
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub bandit: BanditConfig,
    /// Sample budget for one explanation.
    pub max_samples: u64,
    /// Cap on the samples one certification may draw.
    pub arm_budget: u64,
    /// Size of the shared unconditioned coverage pool.
    pub coverage_samples: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            bandit: BanditConfig::default(),
            max_samples: 100_000,
            arm_budget: 10_000,
            coverage_samples: 10_000,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.bandit.validate()?;
        if self.max_samples == 0 || self.arm_budget == 0 || self.coverage_samples == 0 {
            return Err(Error::Argument("budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: Rule,
    pub precision_hat: f64,
    pub coverage_hat: f64,
    pub queries: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorsResult {
    pub final_rule: Rule,
    pub mid_rule: Rule,
    pub final_stats: RuleStats,
    /// KL lower bound on the final rule's precision.
    pub precision_lower: f64,
    /// Set when the search ran out of predicates or samples uncertified.
    pub exhausted: bool,
    pub target: Label,
    pub trace: Vec<TraceStep>,
}

/// One predicate per slot pinning it to `x`'s own value; padding slots are skipped.
pub fn generate_predicates(x: &Instance, padding: Option<FeatureValue>) -> Vec<Predicate> {
    x.values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| Some(v) != padding)
        .map(|(i, &v)| Predicate::new(i, v))
        .collect()
}

/// Outcome of a greedy refinement run.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub rule: Rule,
    pub stats: RuleStats,
    pub precision_lower: f64,
    pub mid: Option<Rule>,
    pub exhausted: bool,
    /// Committed rule per iteration, starting rule first when it was checked.
    pub trace: Vec<TraceStep>,
}

struct Budget {
    spent: u64,
    limit: u64,
}

impl Budget {
    fn remaining(&self) -> u64 {
        self.limit.saturating_sub(self.spent)
    }
}

struct Search<'e, E: Estimator> {
    est: &'e mut E,
    cfg: SearchConfig,
    budget: Budget,
}

impl<E: Estimator> Search<'_, E> {
    fn pull(&mut self, rule: &Rule, n: usize) -> Result<u64> {
        self.budget.spent += n as u64;
        self.est.sample_precision(rule, n)
    }

    fn certify(&mut self, rule: &Rule, stats: &mut RuleStats, tau: f64, n_arms: usize) -> Result<Certificate> {
        let cap = self.cfg.arm_budget.min(self.budget.remaining());
        let bandit = self.cfg.bandit;
        bandit::certify_precision(stats, |n| self.pull(rule, n), tau, n_arms, &bandit, cap)
    }

    fn step(&self, rule: &Rule, stats: &RuleStats) -> TraceStep {
        TraceStep {
            rule: rule.clone(),
            precision_hat: stats.precision_hat().unwrap_or(0.0),
            coverage_hat: stats.coverage_hat().unwrap_or(0.0),
            queries: self.est.queries(),
        }
    }

    fn finish(&self, rule: Rule, stats: RuleStats, n_arms: usize, exhausted: bool) -> (Rule, RuleStats, f64, bool) {
        let lower = self.cfg.bandit.bound(&stats, n_arms).lower;
        (rule, stats, lower, exhausted)
    }

    /// Grow `start` one predicate at a time until a committed extension is
    /// certified at `tau`.
    fn grow(
        &mut self,
        predicates: &[Predicate],
        start: Rule,
        tau: f64,
        tau_mid: Option<f64>,
        mut trace: Vec<TraceStep>,
    ) -> Result<Refinement> {
        let mut rule = start;
        let mut mid: Option<Rule> = None;
        let mut last_stats = RuleStats::default();
        loop {
            let free: Vec<Predicate> = predicates.iter().copied().filter(|p| !rule.constrains(p.feature)).collect();
            if free.is_empty() || self.budget.remaining() == 0 {
                let mut full = rule;
                for p in free {
                    full = full.conjoin(p)?;
                }
                let mut stats = if full.len() == predicates.len() && trace.last().is_some_and(|s| s.rule == full) {
                    last_stats
                } else {
                    RuleStats::default()
                };
                if stats.total_uncond == 0 {
                    self.est.record_coverage(&full, &mut stats)?;
                }
                let (rule, stats, lower, exhausted) = self.finish(full, stats, 1, true);
                return Ok(Refinement {
                    mid: Some(mid.unwrap_or_else(|| rule.clone())),
                    rule,
                    stats,
                    precision_lower: lower,
                    exhausted,
                    trace,
                });
            }

            let candidates: Vec<Rule> = free.iter().map(|&p| rule.conjoin(p)).collect::<Result<_>>()?;
            let n_arms = candidates.len();
            let mut stats = vec![RuleStats::default(); n_arms];
            for (c, s) in candidates.iter().zip(stats.iter_mut()) {
                self.est.record_coverage(c, s)?;
            }
            let remaining = self.budget.remaining();
            let bandit = self.cfg.bandit;
            let best = bandit::best_candidate(&mut stats, |i, n| self.pull(&candidates[i], n), &bandit, remaining)?;

            let mut best_stats = stats[best];
            let cert = self.certify(&candidates[best], &mut best_stats, tau, n_arms)?;
            stats[best] = best_stats;
            trace.push(self.step(&candidates[best], &stats[best]));

            if cert == Certificate::CertifiedAbove {
                let chosen = self.widest_certified(&candidates, &mut stats, best, tau)?;
                let rule = candidates[chosen].clone();
                let (rule, st, lower, exhausted) = self.finish(rule, stats[chosen], n_arms, false);
                return Ok(Refinement {
                    mid: Some(mid.unwrap_or_else(|| rule.clone())),
                    rule,
                    stats: st,
                    precision_lower: lower,
                    exhausted,
                    trace,
                });
            }

            if let (None, Some(tm)) = (&mid, tau_mid) {
                let mut s = stats[best];
                if self.certify(&candidates[best], &mut s, tm, n_arms)? == Certificate::CertifiedAbove {
                    mid = Some(candidates[best].clone());
                }
                stats[best] = s;
            }
            last_stats = stats[best];
            rule = candidates[best].clone();
        }
    }

    /// Among this iteration's candidates, the certified one with the largest
    /// coverage; ties go to the lexicographically smaller rule. `best` is
    /// already certified.
    fn widest_certified(&mut self, candidates: &[Rule], stats: &mut [RuleStats], best: usize, tau: f64) -> Result<usize> {
        let n_arms = candidates.len();
        let cov = |s: &RuleStats| s.coverage_hat().unwrap_or(0.0);
        let best_key = (cov(&stats[best]), &candidates[best]);
        let mut contenders: Vec<usize> = (0..n_arms)
            .filter(|&i| {
                i != best && {
                    let c = cov(&stats[i]);
                    c > best_key.0 || (c == best_key.0 && candidates[i] < *best_key.1)
                }
            })
            .collect();
        contenders.sort_by(|&a, &b| {
            cov(&stats[b])
                .total_cmp(&cov(&stats[a]))
                .then_with(|| candidates[a].cmp(&candidates[b]))
        });
        for i in contenders {
            if self.budget.remaining() == 0 {
                break;
            }
            let mut s = stats[i];
            let cert = self.certify(&candidates[i], &mut s, tau, n_arms)?;
            stats[i] = s;
            if cert == Certificate::CertifiedAbove {
                return Ok(i);
            }
        }
        Ok(best)
    }
}

/// Greedy growth from `start` (the empty rule for plain Anchors).
pub fn refine(
    est: &mut impl Estimator,
    predicates: &[Predicate],
    start: Rule,
    tau: f64,
    tau_mid: Option<f64>,
    cfg: &SearchConfig,
) -> Result<Refinement> {
    let mut search = Search { est, cfg: *cfg, budget: Budget { spent: 0, limit: cfg.max_samples } };
    search.grow(predicates, start, tau, tau_mid, Vec::new())
}

/// Returns `base` when it is already certified at `tau`; otherwise grows it.
pub fn refine_from_base(
    est: &mut impl Estimator,
    predicates: &[Predicate],
    base: Rule,
    tau: f64,
    cfg: &SearchConfig,
) -> Result<Refinement> {
    let mut search = Search { est, cfg: *cfg, budget: Budget { spent: 0, limit: cfg.max_samples } };
    let mut stats = RuleStats::default();
    search.est.record_coverage(&base, &mut stats)?;
    let cert = search.certify(&base, &mut stats, tau, 1)?;
    let trace = vec![search.step(&base, &stats)];
    if cert == Certificate::CertifiedAbove {
        let (rule, stats, lower, _) = search.finish(base, stats, 1, false);
        return Ok(Refinement { rule, stats, precision_lower: lower, mid: None, exhausted: false, trace });
    }
    search.grow(predicates, base, tau, None, trace)
}

/// Thresholds and budgets for one Anchors explanation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorsParams {
    pub tau_p: f64,
    pub tau_p_mid: f64,
    pub search: SearchConfig,
}

impl Default for AnchorsParams {
    fn default() -> Self {
        AnchorsParams { tau_p: 0.95, tau_p_mid: 0.8, search: SearchConfig::default() }
    }
}

impl AnchorsParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau_p_mid && self.tau_p_mid <= self.tau_p && self.tau_p < 1.0) {
            return Err(Error::Argument(format!(
                "need 0 < tau_p_mid ({}) <= tau_p ({}) < 1",
                self.tau_p_mid, self.tau_p
            )));
        }
        self.search.validate()
    }
}

/// Sampler, coverage pool and target label for explaining `x`: the shared
/// setup of every explanation path. Queries the oracle once for the target.
pub fn sampled_estimator<'a>(
    oracle: &'a Oracle,
    perturbation: &PerturbationModel,
    x: &Instance,
    seed: u64,
    cfg: &SearchConfig,
) -> Result<SampledEstimator<'a>> {
    let target = oracle.predict(x)?;
    let mut sampler = PerturbationSampler::new(perturbation, x.clone(), seed)?;
    let pool = CoveragePool::draw(&mut sampler, cfg.coverage_samples, Execution::default())?;
    Ok(SampledEstimator::new(sampler, oracle, target, pool))
}

/// Plain Anchors explanation of `x`, with the dual-threshold mid rule.
pub fn explain(
    oracle: &Oracle,
    perturbation: &PerturbationModel,
    x: &Instance,
    padding: Option<FeatureValue>,
    params: &AnchorsParams,
    seed: u64,
) -> Result<AnchorsResult> {
    params.validate()?;
    let mut est = sampled_estimator(oracle, perturbation, x, seed, &params.search)?;
    let target = est.target();
    let predicates = generate_predicates(x, padding);
    explain_with(&mut est, &predicates, target, params)
}

/// Anchors over an arbitrary estimator.
pub fn explain_with(
    est: &mut impl Estimator,
    predicates: &[Predicate],
    target: Label,
    params: &AnchorsParams,
) -> Result<AnchorsResult> {
    let r = refine(est, predicates, Rule::empty(), params.tau_p, Some(params.tau_p_mid), &params.search)?;
    Ok(AnchorsResult {
        mid_rule: r.mid.unwrap_or_else(|| r.rule.clone()),
        final_rule: r.rule,
        final_stats: r.stats,
        precision_lower: r.precision_lower,
        exhausted: r.exhausted,
        target,
        trace: r.trace,
    })
}

/// One JSON object per iteration.
pub fn write_trace_jsonl(trace: &[TraceStep], mut w: impl Write) -> Result<()> {
    for step in trace {
        serde_json::to_writer(&mut w, step)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
