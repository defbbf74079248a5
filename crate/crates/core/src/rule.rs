//! Instances, predicates, rules and the running statistics attached to a rule.
//!
//! Everything here is an immutable value. Rules keep their predicates sorted
//! by feature index, so equality, hashing and serialization do not depend on
//! the order predicates were added in.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete code of one feature slot: a bin index, category id or token id.
pub type FeatureValue = u32;

/// One input to the explained model, as a fixed-arity tuple of codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance(Vec<FeatureValue>);

impl Instance {
    pub fn new(features: Vec<FeatureValue>) -> Self {
        Instance(features)
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, slot: usize) -> Option<FeatureValue> {
        self.0.get(slot).copied()
    }

    pub fn values(&self) -> &[FeatureValue] {
        &self.0
    }

    pub fn into_values(self) -> Vec<FeatureValue> {
        self.0
    }
}

impl From<Vec<FeatureValue>> for Instance {
    fn from(v: Vec<FeatureValue>) -> Self {
        Instance(v)
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Class identifier returned by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

/// `x[feature] == value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Predicate {
    pub feature: usize,
    pub value: FeatureValue,
}

impl Predicate {
    pub fn new(feature: usize, value: FeatureValue) -> Self {
        Predicate { feature, value }
    }

    #[inline]
    pub fn holds(&self, z: &Instance) -> bool {
        z.0.get(self.feature) == Some(&self.value)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}={}", self.feature, self.value)
    }
}

/// Conjunction of predicates, at most one per feature slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, FeatureValue)>", into = "Vec<(usize, FeatureValue)>")]
pub struct Rule {
    predicates: Vec<Predicate>,
}

impl Rule {
    pub fn empty() -> Self {
        Rule::default()
    }

    /// Builds a rule from predicates in any order. Two predicates on the same
    /// slot are rejected, even when they agree on the value.
    pub fn from_predicates(predicates: impl IntoIterator<Item = Predicate>) -> Result<Self> {
        let mut predicates: Vec<Predicate> = predicates.into_iter().collect();
        predicates.sort();
        if let Some(w) = predicates.windows(2).find(|w| w[0].feature == w[1].feature) {
            return Err(Error::Conflict { feature: w[0].feature });
        }
        Ok(Rule { predicates })
    }

    /// The rule pinning every slot of `x` to its own value.
    pub fn full(x: &Instance) -> Self {
        Rule {
            predicates: x
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| Predicate::new(i, v))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn constrains(&self, feature: usize) -> bool {
        self.value_at(feature).is_some()
    }

    pub fn value_at(&self, feature: usize) -> Option<FeatureValue> {
        self.predicates
            .binary_search_by_key(&feature, |p| p.feature)
            .ok()
            .map(|i| self.predicates[i].value)
    }

    /// New rule with `p` added; `self` is left untouched.
    pub fn conjoin(&self, p: Predicate) -> Result<Rule> {
        match self.predicates.binary_search_by_key(&p.feature, |q| q.feature) {
            Ok(_) => Err(Error::Conflict { feature: p.feature }),
            Err(pos) => {
                let mut predicates = Vec::with_capacity(self.predicates.len() + 1);
                predicates.extend_from_slice(&self.predicates[..pos]);
                predicates.push(p);
                predicates.extend_from_slice(&self.predicates[pos..]);
                Ok(Rule { predicates })
            }
        }
    }

    /// Conjunction test without arity checking; out-of-range slots never match.
    #[inline]
    pub fn matches(&self, z: &Instance) -> bool {
        self.predicates.iter().all(|p| p.holds(z))
    }

    /// Checked evaluation against an instance of schema arity `arity`.
    pub fn evaluate(&self, z: &Instance, arity: usize) -> Result<bool> {
        if z.arity() != arity {
            return Err(Error::Schema(format!(
                "instance has arity {}, schema expects {arity}",
                z.arity()
            )));
        }
        if let Some(p) = self.predicates.iter().find(|p| p.feature >= arity) {
            return Err(Error::Schema(format!(
                "predicate on feature {} exceeds arity {arity}",
                p.feature
            )));
        }
        Ok(self.matches(z))
    }

    pub fn is_subset_of(&self, other: &Rule) -> bool {
        self.predicates
            .iter()
            .all(|p| other.value_at(p.feature) == Some(p.value))
    }

    /// Canonical `[feature, value]` pair list.
    pub fn to_pairs(&self) -> Vec<(usize, FeatureValue)> {
        self.predicates.iter().map(|p| (p.feature, p.value)).collect()
    }
}

impl TryFrom<Vec<(usize, FeatureValue)>> for Rule {
    type Error = Error;

    fn try_from(pairs: Vec<(usize, FeatureValue)>) -> Result<Self> {
        Rule::from_predicates(pairs.into_iter().map(|(i, v)| Predicate::new(i, v)))
    }
}

impl From<Rule> for Vec<(usize, FeatureValue)> {
    fn from(r: Rule) -> Self {
        r.to_pairs()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.predicates.is_empty() {
            return write!(f, "<empty>");
        }
        for (i, p) in self.predicates.iter().enumerate() {
            if i > 0 {
                write!(f, " AND ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Monte-Carlo counters behind a rule's precision and coverage estimates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleStats {
    pub successes: u64,
    pub trials: u64,
    pub covered: u64,
    pub total_uncond: u64,
}

impl RuleStats {
    pub fn precision_hat(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.successes as f64 / self.trials as f64)
    }

    pub fn coverage_hat(&self) -> Option<f64> {
        (self.total_uncond > 0).then(|| self.covered as f64 / self.total_uncond as f64)
    }

    pub fn record_precision(&mut self, successes: u64, trials: u64) {
        debug_assert!(successes <= trials);
        self.successes += successes;
        self.trials += trials;
    }

    pub fn record_coverage(&mut self, covered: u64, total: u64) {
        debug_assert!(covered <= total);
        self.covered += covered;
        self.total_uncond += total;
    }
}
