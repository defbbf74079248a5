use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::rule::{FeatureValue, Instance};

/// Maps instances into the space memory retrieval runs in.
#[derive(Debug, Clone)]
pub enum Embedder {
    /// Per-slot z-scored codes.
    Tabular { means: Vec<f64>, stds: Vec<f64> },
    /// Mean vector of the non-padding tokens.
    Text { table: Arc<EmbeddingTable>, padding: FeatureValue },
}

impl Embedder {
    /// Moments of each slot's code under the training marginals.
    pub fn tabular(marginals: &EmpiricalDistribution) -> Self {
        let (means, stds) = marginals
            .slots()
            .iter()
            .map(|freq| {
                let mean: f64 = freq.iter().enumerate().map(|(v, f)| v as f64 * f).sum();
                let var: f64 = freq.iter().enumerate().map(|(v, f)| f * (v as f64 - mean).powi(2)).sum();
                (mean, var.sqrt())
            })
            .unzip();
        Embedder::Tabular { means, stds }
    }

    pub fn text(table: Arc<EmbeddingTable>, padding: FeatureValue) -> Self {
        Embedder::Text { table, padding }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Tabular { means, .. } => means.len(),
            Embedder::Text { table, .. } => table.dim(),
        }
    }

    pub fn embed(&self, x: &Instance) -> Result<Vec<f64>> {
        match self {
            Embedder::Tabular { means, stds } => {
                if x.arity() != means.len() {
                    return Err(Error::Schema(format!("instance arity {} vs {} slots", x.arity(), means.len())));
                }
                Ok(x.values()
                    .iter()
                    .zip(means.iter().zip(stds))
                    .map(|(&v, (m, s))| if *s > 0.0 { (v as f64 - m) / s } else { 0.0 })
                    .collect())
            }
            Embedder::Text { table, padding } => {
                let mut acc = vec![0.0; table.dim()];
                let mut n = 0usize;
                for &tok in x.values() {
                    if tok == *padding {
                        continue;
                    }
                    let v = table
                        .vector(tok)
                        .ok_or_else(|| Error::Embedding(format!("token id {tok} has no vector")))?;
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b;
                    }
                    n += 1;
                }
                if n == 0 {
                    return Err(Error::Embedding("instance has no non-padding tokens".into()));
                }
                acc.iter_mut().for_each(|a| *a /= n as f64);
                Ok(acc)
            }
        }
    }
}

/// Distance-to-similarity map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    /// `1 / (1 + d)`
    #[default]
    Reciprocal,
    /// `exp(-d)`
    Exponential,
}

impl Similarity {
    pub fn of_distance(self, d: f64) -> f64 {
        match self {
            Similarity::Reciprocal => 1.0 / (1.0 + d),
            Similarity::Exponential => (-d).exp(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_scores() {
        // Codes {1, 3} equally likely: mean 2, std 1.
        let m = EmpiricalDistribution::from_frequencies(vec![vec![0.0, 0.5, 0.0, 0.5], vec![1.0]]).unwrap();
        let e = Embedder::tabular(&m);
        assert_eq!(e.embed(&Instance::new(vec![2, 0])).unwrap(), vec![0.0, 0.0]);
        assert_eq!(e.embed(&Instance::new(vec![3, 0])).unwrap(), vec![1.0, 0.0]);
        assert!(e.embed(&Instance::new(vec![3])).is_err());
    }

    #[test]
    fn text_mean_skips_padding() {
        let table = Arc::new(
            EmbeddingTable::new(vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])]).unwrap(),
        );
        let e = Embedder::text(table, 2);
        assert_eq!(e.embed(&Instance::new(vec![0, 1, 2, 2])).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(e.embed(&Instance::new(vec![2, 2])), Err(Error::Embedding(_))));
    }

    #[test]
    fn similarity_maps() {
        assert_eq!(Similarity::Reciprocal.of_distance(0.0), 1.0);
        assert_eq!(Similarity::Reciprocal.of_distance(1.0), 0.5);
        assert_eq!(Similarity::Exponential.of_distance(0.0), 1.0);
        assert!((Similarity::Exponential.of_distance(1.0) - (-1.0f64).exp()).abs() < 1e-15);
    }
}
