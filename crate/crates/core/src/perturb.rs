//! The perturbation distribution around an explained input and the
//! precision/coverage estimators built on it.
//!
//! Both modalities are product distributions over slots: tabular slots draw
//! from the training marginals, text slots keep the anchor token or swap it
//! for one of its nearest neighbours in the embedding table. Conditioning on
//! a rule pins the constrained slots and leaves the rest untouched, so
//! sampling under a rule never needs rejection.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingTable, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::models::{Classifier, Oracle};
use crate::par::{self, Execution};
use crate::rule::{FeatureValue, Instance, Label, Rule, RuleStats};

pub const DEFAULT_TEXT_NEIGHBOURS: usize = 10;
pub const DEFAULT_TEXT_REPLACE_PROB: f64 = 0.5;

/// Where an explained input's perturbations come from.
#[derive(Debug, Clone)]
pub enum PerturbationModel {
    Tabular {
        marginals: EmpiricalDistribution,
    },
    Text {
        table: Arc<EmbeddingTable>,
        padding: FeatureValue,
        neighbours: usize,
        replace_prob: f64,
    },
}

impl PerturbationModel {
    pub fn tabular(marginals: EmpiricalDistribution) -> Self {
        PerturbationModel::Tabular { marginals }
    }

    pub fn text(table: Arc<EmbeddingTable>, padding: FeatureValue) -> Self {
        PerturbationModel::Text {
            table,
            padding,
            neighbours: DEFAULT_TEXT_NEIGHBOURS,
            replace_prob: DEFAULT_TEXT_REPLACE_PROB,
        }
    }

    /// Per-slot distributions of the perturbations around `anchor`.
    pub fn slot_distributions(&self, anchor: &Instance) -> Result<Vec<SlotDistribution>> {
        match self {
            PerturbationModel::Tabular { marginals } => {
                if marginals.arity() != anchor.arity() {
                    return Err(Error::Schema(format!(
                        "anchor arity {} vs marginals arity {}",
                        anchor.arity(),
                        marginals.arity()
                    )));
                }
                marginals
                    .slots()
                    .iter()
                    .map(|freqs| {
                        let support = freqs
                            .iter()
                            .enumerate()
                            .filter(|(_, &p)| p > 0.0)
                            .map(|(v, &p)| (v as FeatureValue, p));
                        SlotDistribution::new(support)
                    })
                    .collect()
            }
            PerturbationModel::Text { table, padding, neighbours, replace_prob } => anchor
                .values()
                .iter()
                .map(|&tok| {
                    if tok == *padding || table.vector(tok).is_none() {
                        return Ok(SlotDistribution::point(tok));
                    }
                    let mut pool = vec![tok];
                    pool.extend(
                        table
                            .nearest(tok, *neighbours)
                            .into_iter()
                            .filter(|&t| t != tok)
                            .take(neighbours.saturating_sub(1)),
                    );
                    let k = pool.len() as f64;
                    let swap = replace_prob / k;
                    SlotDistribution::new(
                        pool.iter()
                            .enumerate()
                            .map(|(i, &t)| (t, if i == 0 { 1.0 - replace_prob + swap } else { swap })),
                    )
                })
                .collect(),
        }
    }
}

/// Finite distribution over the values of one slot.
#[derive(Debug, Clone)]
pub struct SlotDistribution {
    values: Vec<FeatureValue>,
    probs: Vec<f64>,
    index: Option<WeightedIndex<f64>>,
}

impl SlotDistribution {
    pub fn new(support: impl IntoIterator<Item = (FeatureValue, f64)>) -> Result<Self> {
        let (values, probs): (Vec<_>, Vec<_>) = support.into_iter().unzip();
        if values.is_empty() {
            return Err(Error::Config("slot distribution with empty support".into()));
        }
        let index = if values.len() > 1 {
            Some(WeightedIndex::new(&probs).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(SlotDistribution { values, probs, index })
    }

    pub fn point(v: FeatureValue) -> Self {
        SlotDistribution { values: vec![v], probs: vec![1.0], index: None }
    }

    pub fn support(&self) -> impl Iterator<Item = (FeatureValue, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn support_len(&self) -> usize {
        self.values.len()
    }

    pub fn probability(&self, v: FeatureValue) -> f64 {
        self.values.iter().position(|&w| w == v).map_or(0.0, |i| self.probs[i])
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> FeatureValue {
        match &self.index {
            Some(idx) => self.values[idx.sample(rng)],
            None => self.values[0],
        }
    }
}

/// Seeded sampler of perturbations around one anchor instance.
#[derive(Debug, Clone)]
pub struct PerturbationSampler {
    anchor: Instance,
    slots: Vec<SlotDistribution>,
    rng: ChaCha8Rng,
}

impl PerturbationSampler {
    pub fn new(model: &PerturbationModel, anchor: Instance, seed: u64) -> Result<Self> {
        let slots = model.slot_distributions(&anchor)?;
        Ok(PerturbationSampler { anchor, slots, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn anchor(&self) -> &Instance {
        &self.anchor
    }

    pub fn slots(&self) -> &[SlotDistribution] {
        &self.slots
    }

    /// `count` draws from the perturbation distribution conditioned on `rule`.
    pub fn sample_conditional(&mut self, rule: &Rule, count: usize) -> Result<Vec<Instance>> {
        if !rule.matches(&self.anchor) {
            return Err(Error::Precondition(format!(
                "rule {rule} does not cover the anchor instance {}",
                self.anchor
            )));
        }
        Ok(self.draw_many(rule, count))
    }

    pub fn sample_unconditional(&mut self, count: usize) -> Vec<Instance> {
        self.draw_many(&Rule::empty(), count)
    }

    fn draw_many(&mut self, rule: &Rule, count: usize) -> Vec<Instance> {
        let n = self.slots.len();
        let mut fixed: Vec<Option<FeatureValue>> = vec![None; n];
        for p in rule.predicates() {
            if p.feature < n {
                fixed[p.feature] = Some(p.value);
            }
        }
        (0..count)
            .map(|_| {
                Instance::new(
                    fixed
                        .iter()
                        .zip(&self.slots)
                        .map(|(f, d)| f.unwrap_or_else(|| d.draw(&mut self.rng)))
                        .collect(),
                )
            })
            .collect()
    }

    /// Draws `count` samples under `rule`, queries the oracle, and counts the
    /// ones labelled `target`. Returns the number of successes.
    pub fn estimate_precision(
        &mut self,
        rule: &Rule,
        oracle: &Oracle,
        target: Label,
        count: usize,
        stats: &mut RuleStats,
    ) -> Result<u64> {
        let zs = self.sample_conditional(rule, count)?;
        let labels = oracle.predict_batch(&zs)?;
        let hits = labels.iter().filter(|&&l| l == target).count() as u64;
        stats.record_precision(hits, count as u64);
        Ok(hits)
    }

    pub fn estimate_coverage(&mut self, rule: &Rule, count: usize, stats: &mut RuleStats) -> Result<()> {
        if count == 0 {
            return Err(Error::Argument("coverage needs at least one sample".into()));
        }
        let zs = self.sample_unconditional(count);
        let covered = zs.iter().filter(|z| rule.matches(z)).count() as u64;
        stats.record_coverage(covered, count as u64);
        Ok(())
    }
}

/// Fixed frame of unconditioned draws shared by every candidate of one
/// explanation, so sibling coverages are compared on the same samples.
#[derive(Debug, Clone)]
pub struct CoveragePool {
    samples: Vec<Instance>,
    exec: Execution,
}

impl CoveragePool {
    pub fn draw(sampler: &mut PerturbationSampler, count: usize, exec: Execution) -> Result<Self> {
        if count == 0 {
            return Err(Error::Argument("coverage pool needs at least one sample".into()));
        }
        Ok(CoveragePool { samples: sampler.sample_unconditional(count), exec })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn covered(&self, rule: &Rule) -> u64 {
        par::count(self.exec, &self.samples, |z| rule.matches(z)) as u64
    }

    pub fn record(&self, rule: &Rule, stats: &mut RuleStats) {
        stats.record_coverage(self.covered(rule), self.samples.len() as u64);
    }
}

/// Exact precision and coverage by enumerating a weighted universe.
pub fn exact_precision_coverage(
    universe: &[Instance],
    weights: &[f64],
    rule: &Rule,
    oracle: &Oracle,
    target: Label,
) -> Result<(f64, f64)> {
    if universe.len() != weights.len() {
        return Err(Error::Argument("universe and weights differ in length".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("weights sum to {total}, not 1")));
    }
    let (covered, mass): (Vec<Instance>, Vec<f64>) = universe
        .iter()
        .zip(weights)
        .filter(|(z, _)| rule.matches(z))
        .map(|(z, &w)| (z.clone(), w))
        .unzip();
    let coverage: f64 = mass.iter().sum();
    if covered.is_empty() || coverage <= 0.0 {
        return Err(Error::DegenerateRule);
    }
    let labels = oracle.predict_batch(&covered)?;
    let hit: f64 = labels
        .iter()
        .zip(&mass)
        .filter(|(l, _)| **l == target)
        .map(|(_, &w)| w)
        .sum();
    Ok((hit / coverage, coverage))
}

/// Largest enumeration `exact_precision_coverage` callers should attempt.
pub const MAX_EXACT_UNIVERSE: u64 = 1_000_000;

/// Support of the product distribution with its point masses.
pub fn product_universe(slots: &[SlotDistribution]) -> Result<(Vec<Instance>, Vec<f64>)> {
    let size = slots
        .iter()
        .try_fold(1u64, |acc, s| acc.checked_mul(s.values.len() as u64))
        .filter(|&n| n <= MAX_EXACT_UNIVERSE)
        .ok_or_else(|| Error::Argument("universe too large to enumerate".into()))?;
    let mut universe = Vec::with_capacity(size as usize);
    let mut weights = Vec::with_capacity(size as usize);
    let mut digits = vec![0usize; slots.len()];
    loop {
        universe.push(Instance::new(digits.iter().zip(slots).map(|(&d, s)| s.values[d]).collect()));
        weights.push(digits.iter().zip(slots).map(|(&d, s)| s.probs[d]).product());
        let mut pos = slots.len();
        loop {
            if pos == 0 {
                return Ok((universe, weights));
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < slots[pos].values.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Exact `(precision, coverage)` under a product distribution, enumerating
/// only the slots `rule` leaves free. Queries `model` directly, bypassing any
/// oracle counter.
pub fn exact_under_product(
    slots: &[SlotDistribution],
    rule: &Rule,
    model: &dyn Classifier,
    target: Label,
    exec: Execution,
) -> Result<(f64, f64)> {
    let mut coverage = 1.0;
    for p in rule.predicates() {
        let s = slots
            .get(p.feature)
            .ok_or_else(|| Error::Schema(format!("rule feature {} outside arity", p.feature)))?;
        coverage *= s.probability(p.value);
    }
    if coverage <= 0.0 {
        return Err(Error::DegenerateRule);
    }
    let free: Vec<usize> = (0..slots.len()).filter(|&i| !rule.constrains(i)).collect();
    let size = free
        .iter()
        .try_fold(1u64, |acc, &i| acc.checked_mul(slots[i].values.len() as u64))
        .filter(|&n| n <= MAX_EXACT_UNIVERSE)
        .ok_or_else(|| Error::Argument("free-slot universe too large to enumerate".into()))?
        as usize;

    let mut template = vec![0; slots.len()];
    for p in rule.predicates() {
        template[p.feature] = p.value;
    }
    let decode = |mut idx: usize| -> (Instance, f64) {
        let mut v = template.clone();
        let mut w = 1.0;
        for &slot in free.iter().rev() {
            let s = &slots[slot];
            let d = idx % s.values.len();
            idx /= s.values.len();
            v[slot] = s.values[d];
            w *= s.probs[d];
        }
        (Instance::new(v), w)
    };

    const CHUNK: usize = 8192;
    let chunks: Vec<usize> = (0..size.div_ceil(CHUNK)).collect();
    let partial = par::map_coarse(exec, &chunks, |&c| -> Result<f64> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(size);
        let (zs, ws): (Vec<Instance>, Vec<f64>) = (lo..hi).map(decode).unzip();
        let labels = model.predict_batch(&zs, Execution::Sequential)?;
        Ok(labels.iter().zip(&ws).filter(|(l, _)| **l == target).map(|(_, &w)| w).sum())
    });
    let mut precision = 0.0;
    for p in partial {
        precision += p?;
    }
    Ok((precision, coverage))
}
