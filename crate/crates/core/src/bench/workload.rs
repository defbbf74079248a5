//! Synthetic clustered input streams.
//!
//! Centroids are uniform over the code universe; members copy their centroid
//! and move each slot to a different value with probability `noise`. The
//! paired lookup model labels every point of the universe with the class of
//! its nearest centroid (Hamming distance, lowest centroid on ties), and
//! centroid `k` has class `k % 2`.
//!
//! Slot `i`'s raw values live in `[i * 2c, i * 2c + c)` for cardinality `c`,
//! so raw-unit distances never confuse one slot for another.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{ColumnConfig, ColumnKind, EmpiricalDistribution, FeatureSchema, SchemaConfig, SlotKind, SlotSchema};
use crate::error::{Error, Result};
use crate::models::BuiltinModel;
use crate::par::Execution;
use crate::rule::{FeatureValue, Instance, Label};

#[derive(Debug, Clone)]
pub struct Workload {
    /// Stream order (shuffled).
    pub instances: Vec<Instance>,
    pub cluster_of: Vec<usize>,
    pub labels: Vec<Label>,
    pub centroids: Vec<Instance>,
    pub model: BuiltinModel,
    pub schema: FeatureSchema,
    pub marginals: EmpiricalDistribution,
}

fn raw_offset(cardinality: u32) -> f64 {
    2.0 * cardinality as f64
}

pub fn raw_value(slot: usize, code: FeatureValue, cardinality: u32) -> f64 {
    slot as f64 * raw_offset(cardinality) + code as f64
}

fn workload_schema(n_features: usize, cardinality: u32) -> FeatureSchema {
    FeatureSchema {
        slots: (0..n_features)
            .map(|i| {
                let representatives: Vec<f64> = (0..cardinality).map(|v| raw_value(i, v, cardinality)).collect();
                let edges = representatives.iter().map(|r| r + 0.5).collect();
                SlotSchema {
                    name: format!("f{i}"),
                    cardinality,
                    kind: SlotKind::Numeric { edges, representatives },
                }
            })
            .collect(),
        padding: None,
    }
}

pub fn nearest_centroid(z: &Instance, centroids: &[Instance]) -> usize {
    let hamming = |c: &Instance| c.values().iter().zip(z.values()).filter(|(a, b)| a != b).count();
    let mut best = 0;
    let mut best_d = usize::MAX;
    for (k, c) in centroids.iter().enumerate() {
        let d = hamming(c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

pub fn generate_clustered_workload(
    n_clusters: usize,
    per_cluster: usize,
    n_features: usize,
    cardinality: u32,
    noise: f64,
    seed: u64,
) -> Result<Workload> {
    if n_clusters == 0 || per_cluster == 0 || n_features == 0 {
        return Err(Error::Argument("cluster, member and feature counts must be positive".into()));
    }
    if cardinality < 2 {
        return Err(Error::Argument(format!("cardinality must be at least 2, got {cardinality}")));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(Error::Argument(format!("noise must lie in [0, 0.5), got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Instance> = (0..n_clusters)
        .map(|_| Instance::new((0..n_features).map(|_| rng.random_range(0..cardinality)).collect()))
        .collect();

    let mut members: Vec<(usize, Instance)> = Vec::with_capacity(n_clusters * per_cluster);
    for (k, c) in centroids.iter().enumerate() {
        for _ in 0..per_cluster {
            let v = c
                .values()
                .iter()
                .map(|&v| {
                    if rng.random_bool(noise) {
                        let other = rng.random_range(0..cardinality - 1);
                        if other >= v { other + 1 } else { other }
                    } else {
                        v
                    }
                })
                .collect();
            members.push((k, Instance::new(v)));
        }
    }
    members.shuffle(&mut rng);

    let cards = vec![cardinality; n_features];
    let class = |k: usize| Label((k % 2) as u32);
    let model = BuiltinModel::lookup_from_fn(cards, Execution::default(), |z| class(nearest_centroid(z, &centroids)))?;
    let schema = workload_schema(n_features, cardinality);
    let (cluster_of, instances): (Vec<usize>, Vec<Instance>) = members.into_iter().unzip();
    let labels = instances.iter().map(|x| model.predict_one(x)).collect::<Result<_>>()?;
    let marginals = EmpiricalDistribution::from_instances(&schema, &instances)?;
    Ok(Workload { instances, cluster_of, labels, centroids, model, schema, marginals })
}

impl Workload {
    /// Config that re-ingests [`Workload::write_csv`] output to the same codes.
    pub fn schema_config(&self) -> SchemaConfig {
        SchemaConfig {
            columns: self
                .schema
                .slots
                .iter()
                .map(|s| ColumnConfig {
                    name: s.name.clone(),
                    kind: ColumnKind::Numeric,
                    bins: None,
                    edges: match &s.kind {
                        SlotKind::Numeric { edges, .. } => Some(edges.clone()),
                        _ => None,
                    },
                    cardinality: None,
                })
                .collect(),
            label: "label".into(),
            lenient: false,
        }
    }

    /// Raw-valued CSV with a trailing `label` column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.schema.slots.iter().map(|s| s.name.clone()).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (x, y) in self.instances.iter().zip(&self.labels) {
            let mut rec: Vec<String> =
                x.values().iter().enumerate().map(|(i, &v)| self.schema.slots[i].numeric_value(v).to_string()).collect();
            rec.push(y.0.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, value)?;
        Ok(())
    }
}
