use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rule::{FeatureValue, Instance, Label, Rule};

/// Largest universe a lookup table may enumerate.
pub const MAX_LOOKUP_UNIVERSE: u64 = 1 << 26;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjunctionRule {
    pub rule: Rule,
    pub label: Label,
}

/// One lookup pattern; `None` positions match any value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LookupEntry {
    pub pattern: Vec<Option<FeatureValue>>,
    pub label: Label,
}

/// JSON model configuration for the built-in kinds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Constant {
        label: Label,
        #[serde(default)]
        arity: Option<usize>,
    },
    SingleFeature {
        feature: usize,
        #[serde(default)]
        arity: Option<usize>,
    },
    /// First matching rule wins.
    ConjunctionList {
        rules: Vec<ConjunctionRule>,
        default: Label,
        #[serde(default)]
        arity: Option<usize>,
    },
    /// Either a dense `table` in mixed-radix order (slot 0 most significant)
    /// or first-match `entries`, which must cover the whole universe.
    LookupTable {
        cardinalities: Vec<u32>,
        #[serde(default)]
        table: Option<Vec<Label>>,
        #[serde(default)]
        entries: Option<Vec<LookupEntry>>,
    },
}

impl ModelConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelConfig::Constant { .. } => "constant",
            ModelConfig::SingleFeature { .. } => "single-feature",
            ModelConfig::ConjunctionList { .. } => "conjunction-list",
            ModelConfig::LookupTable { .. } => "lookup-table",
        }
    }

    pub fn arity(&self) -> Option<usize> {
        match self {
            ModelConfig::Constant { arity, .. }
            | ModelConfig::SingleFeature { arity, .. }
            | ModelConfig::ConjunctionList { arity, .. } => *arity,
            ModelConfig::LookupTable { cardinalities, .. } => Some(cardinalities.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BuiltinModel {
    Constant { label: Label, arity: Option<usize> },
    /// Label is the value of one slot.
    SingleFeature { feature: usize, arity: Option<usize> },
    ConjunctionList { rules: Vec<ConjunctionRule>, default: Label, arity: Option<usize> },
    LookupTable { cardinalities: Vec<u32>, table: Vec<Label> },
}

impl BuiltinModel {
    pub fn from_config(cfg: ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Constant { label, arity } => BuiltinModel::Constant { label, arity },
            ModelConfig::SingleFeature { feature, arity } => {
                if arity.is_some_and(|n| feature >= n) {
                    return Err(Error::Config(format!("feature {feature} outside arity")));
                }
                BuiltinModel::SingleFeature { feature, arity }
            }
            ModelConfig::ConjunctionList { rules, default, arity } => {
                BuiltinModel::ConjunctionList { rules, default, arity }
            }
            ModelConfig::LookupTable { cardinalities, table, entries } => match (table, entries) {
                (Some(table), None) => Self::lookup_from_table(cardinalities, table)?,
                (None, Some(entries)) => Self::lookup_from_entries(cardinalities, &entries)?,
                _ => {
                    return Err(Error::Config(
                        "lookup-table needs exactly one of `table` or `entries`".into(),
                    ))
                }
            },
        })
    }

    pub fn lookup_from_table(cardinalities: Vec<u32>, table: Vec<Label>) -> Result<Self> {
        let size = universe_len(&cardinalities)?;
        if table.len() as u64 != size {
            return Err(Error::Config(format!(
                "lookup table has {} labels, universe has {size}",
                table.len()
            )));
        }
        Ok(BuiltinModel::LookupTable { cardinalities, table })
    }

    pub fn lookup_from_entries(cardinalities: Vec<u32>, entries: &[LookupEntry]) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.pattern.len() != cardinalities.len()) {
            return Err(Error::Config(format!(
                "lookup pattern of length {} for arity {}",
                e.pattern.len(),
                cardinalities.len()
            )));
        }
        let size = universe_len(&cardinalities)? as usize;
        let mut table = Vec::with_capacity(size);
        for idx in 0..size {
            let x = decode_index(idx, &cardinalities);
            let hit = entries.iter().find(|e| {
                e.pattern
                    .iter()
                    .zip(x.values())
                    .all(|(p, v)| p.is_none_or(|p| p == *v))
            });
            match hit {
                Some(e) => table.push(e.label),
                None => return Err(Error::Config(format!("lookup table does not cover {x}"))),
            }
        }
        Ok(BuiltinModel::LookupTable { cardinalities, table })
    }

    /// Tabulates `f` over the full universe.
    pub fn lookup_from_fn(
        cardinalities: Vec<u32>,
        exec: Execution,
        f: impl Fn(&Instance) -> Label + Sync + Send,
    ) -> Result<Self> {
        let size = universe_len(&cardinalities)? as usize;
        let indices: Vec<usize> = (0..size).collect();
        let table = par::map(exec, &indices, |&i| f(&decode_index(i, &cardinalities)));
        Ok(BuiltinModel::LookupTable { cardinalities, table })
    }

    pub fn to_config(&self) -> ModelConfig {
        match self.clone() {
            BuiltinModel::Constant { label, arity } => ModelConfig::Constant { label, arity },
            BuiltinModel::SingleFeature { feature, arity } => ModelConfig::SingleFeature { feature, arity },
            BuiltinModel::ConjunctionList { rules, default, arity } => {
                ModelConfig::ConjunctionList { rules, default, arity }
            }
            BuiltinModel::LookupTable { cardinalities, table } => {
                ModelConfig::LookupTable { cardinalities, table: Some(table), entries: None }
            }
        }
    }

    pub fn predict_one(&self, x: &Instance) -> Result<Label> {
        match self {
            BuiltinModel::Constant { label, .. } => Ok(*label),
            BuiltinModel::SingleFeature { feature, .. } => x
                .get(*feature)
                .map(Label)
                .ok_or_else(|| Error::Schema(format!("instance lacks feature {feature}"))),
            BuiltinModel::ConjunctionList { rules, default, .. } => Ok(rules
                .iter()
                .find(|r| r.rule.matches(x))
                .map_or(*default, |r| r.label)),
            BuiltinModel::LookupTable { cardinalities, table } => {
                let idx = encode_index(x, cardinalities)?;
                Ok(table[idx])
            }
        }
    }
}

impl Classifier for BuiltinModel {
    fn arity(&self) -> Option<usize> {
        match self {
            BuiltinModel::Constant { arity, .. }
            | BuiltinModel::SingleFeature { arity, .. }
            | BuiltinModel::ConjunctionList { arity, .. } => *arity,
            BuiltinModel::LookupTable { cardinalities, .. } => Some(cardinalities.len()),
        }
    }

    fn predict_batch(&self, xs: &[Instance], exec: Execution) -> Result<Vec<Label>> {
        par::map(exec, xs, |x| self.predict_one(x)).into_iter().collect()
    }
}

fn universe_len(cardinalities: &[u32]) -> Result<u64> {
    let size = cardinalities
        .iter()
        .try_fold(1u64, |acc, &c| acc.checked_mul(c as u64))
        .filter(|&s| s <= MAX_LOOKUP_UNIVERSE && s > 0)
        .ok_or_else(|| Error::Config("lookup universe is empty or too large".into()))?;
    Ok(size)
}

/// Mixed-radix position of `x`, slot 0 most significant.
pub fn encode_index(x: &Instance, cardinalities: &[u32]) -> Result<usize> {
    if x.arity() != cardinalities.len() {
        return Err(Error::Schema(format!(
            "instance arity {} does not match {}",
            x.arity(),
            cardinalities.len()
        )));
    }
    let mut idx = 0usize;
    for (&v, &c) in x.values().iter().zip(cardinalities) {
        if v >= c {
            return Err(Error::Schema(format!("value {v} outside cardinality {c}")));
        }
        idx = idx * c as usize + v as usize;
    }
    Ok(idx)
}

pub fn decode_index(mut idx: usize, cardinalities: &[u32]) -> Instance {
    let mut v = vec![0; cardinalities.len()];
    for (slot, &c) in cardinalities.iter().enumerate().rev() {
        v[slot] = (idx % c as usize) as FeatureValue;
        idx /= c as usize;
    }
    Instance::new(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(v: &[u32]) -> Instance {
        Instance::new(v.to_vec())
    }

    #[test]
    fn constant_and_conjunction_list() {
        let c = BuiltinModel::Constant { label: Label(1), arity: None };
        assert_eq!(c.predict_one(&x(&[4, 2])).unwrap(), Label(1));

        let cfg: ModelConfig = serde_json::from_str(
            r#"{"kind":"conjunction-list","rules":[{"rule":[[0,1],[1,1]],"label":1}],"default":0}"#,
        )
        .unwrap();
        let m = BuiltinModel::from_config(cfg).unwrap();
        assert_eq!(m.predict_one(&x(&[1, 1, 9])).unwrap(), Label(1));
        assert_eq!(m.predict_one(&x(&[1, 0, 9])).unwrap(), Label(0));
    }

    #[test]
    fn lookup_with_wildcards() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"kind":"lookup-table","cardinalities":[2,2],
                "entries":[{"pattern":[1,null],"label":1},{"pattern":[0,null],"label":0}]}"#,
        )
        .unwrap();
        let m = BuiltinModel::from_config(cfg).unwrap();
        assert_eq!(m.predict_one(&x(&[0, 1])).unwrap(), Label(0));
        assert_eq!(m.predict_one(&x(&[1, 0])).unwrap(), Label(1));
        assert!(m.predict_one(&x(&[2, 0])).is_err());
    }

    #[test]
    fn incomplete_lookup_is_rejected() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"kind":"lookup-table","cardinalities":[2,2],"entries":[{"pattern":[1,null],"label":1}]}"#,
        )
        .unwrap();
        assert!(matches!(BuiltinModel::from_config(cfg), Err(Error::Config(_))));
        assert!(BuiltinModel::lookup_from_table(vec![2, 2], vec![Label(0); 3]).is_err());
    }

    #[test]
    fn radix_round_trip() {
        let cards = [3, 1, 4, 2];
        for i in 0..24 {
            let inst = decode_index(i, &cards);
            assert_eq!(encode_index(&inst, &cards).unwrap(), i);
        }
        let m = BuiltinModel::lookup_from_fn(cards.to_vec(), Execution::Parallel, |z| Label(z.values()[2])).unwrap();
        assert_eq!(m.predict_one(&x(&[2, 0, 3, 1])).unwrap(), Label(3));
        let json = serde_json::to_string(&m.to_config()).unwrap();
        let back = BuiltinModel::from_config(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.predict_one(&x(&[1, 0, 1, 0])).unwrap(), Label(1));
    }
}
