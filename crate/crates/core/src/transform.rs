//! Rule transformations for the memory-hit path.
//!
//! The horizontal transform re-targets a cached rule onto a new input: each
//! cached predicate `x_i = v` becomes `x_j = x'_j` for the slot `j` of the new
//! input whose value is closest to `v`. The vertical transform then
//! strengthens the result until it is certified.

use std::sync::Arc;

use crate::anchors::{generate_predicates, refine_from_base, Estimator, Refinement, SearchConfig};
use crate::data::{EmbeddingTable, FeatureSchema};
use crate::error::{Error, Result};
use crate::rule::{FeatureValue, Instance, Predicate, Rule};

pub trait FeatureDistance {
    /// Distance between value `a` of slot `slot_a` and value `b` of slot `slot_b`.
    fn dist(&self, slot_a: usize, a: FeatureValue, slot_b: usize, b: FeatureValue) -> f64;
}

/// Absolute difference in raw units, via each slot's bin representatives.
#[derive(Debug, Clone)]
pub struct TabularDistance {
    schema: FeatureSchema,
}

impl TabularDistance {
    pub fn new(schema: FeatureSchema) -> Self {
        TabularDistance { schema }
    }
}

impl FeatureDistance for TabularDistance {
    fn dist(&self, slot_a: usize, a: FeatureValue, slot_b: usize, b: FeatureValue) -> f64 {
        let raw = |slot: usize, v| self.schema.slots.get(slot).map_or(v as f64, |s| s.numeric_value(v));
        (raw(slot_a, a) - raw(slot_b, b)).abs()
    }
}

/// Euclidean distance between token vectors. Tokens without a vector
/// (padding) are infinitely far from everything else.
#[derive(Debug, Clone)]
pub struct TextDistance {
    table: Arc<EmbeddingTable>,
}

impl TextDistance {
    pub fn new(table: Arc<EmbeddingTable>) -> Self {
        TextDistance { table }
    }
}

impl FeatureDistance for TextDistance {
    fn dist(&self, _: usize, a: FeatureValue, _: usize, b: FeatureValue) -> f64 {
        if a == b {
            return 0.0;
        }
        self.table.distance(a, b).unwrap_or(f64::INFINITY)
    }
}

/// Maps every predicate of `r_mid` onto its nearest slot of `x_new`.
///
/// Predicates landing on an already constrained slot are dropped, as are
/// predicates with no finite-distance target.
pub fn horizontal_transform(r_mid: &Rule, x_new: &Instance, dist: &dyn FeatureDistance) -> Result<Rule> {
    if r_mid.is_empty() {
        return Err(Error::Argument("horizontal transform of an empty rule".into()));
    }
    let mut out = Rule::empty();
    for p in r_mid.predicates() {
        let mut best: Option<(f64, usize)> = None;
        for (j, &v) in x_new.values().iter().enumerate() {
            let d = dist.dist(p.feature, p.value, j, v);
            if d.is_finite() && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            if !out.constrains(j) {
                out = out.conjoin(Predicate::new(j, x_new.values()[j]))?;
            }
        }
    }
    Ok(out)
}

/// Certifies `r_base` at `tau`, or adds predicates of `x` until some
/// extension is certified.
pub fn vertical_transform(
    est: &mut impl Estimator,
    r_base: Rule,
    x: &Instance,
    padding: Option<FeatureValue>,
    tau: f64,
    cfg: &SearchConfig,
) -> Result<Refinement> {
    if !r_base.evaluate(x, x.arity())? {
        return Err(Error::Precondition(format!("rule {r_base} does not cover {x}")));
    }
    let predicates = generate_predicates(x, padding);
    refine_from_base(est, &predicates, r_base, tau, cfg)
}
