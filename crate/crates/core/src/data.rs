//! Dataset ingestion: column schema, discretization of raw cells into codes,
//! empirical per-slot marginals, and the token embedding table used for text.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rule::{FeatureValue, Instance, Label};

pub const DEFAULT_BINS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlotKind {
    /// `edges[k]` is the upper edge of bin `k`; `representatives[k]` is the
    /// mean raw training value that fell into bin `k`.
    Numeric {
        edges: Vec<f64>,
        representatives: Vec<f64>,
    },
    Categorical {
        vocabulary: Vec<String>,
        /// Unknown categories map to `vocabulary.len()` instead of failing.
        lenient: bool,
    },
    /// Integer codes taken verbatim (token ids, or pre-discretized columns).
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub name: String,
    pub cardinality: u32,
    #[serde(flatten)]
    pub kind: SlotKind,
}

impl SlotSchema {
    /// Numeric stand-in for code `v` on this slot: the raw bin representative
    /// for numeric slots, the code itself otherwise.
    pub fn numeric_value(&self, v: FeatureValue) -> f64 {
        match &self.kind {
            SlotKind::Numeric { representatives, .. } => representatives
                .get(v as usize)
                .copied()
                .unwrap_or(v as f64),
            _ => v as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub slots: Vec<SlotSchema>,
    /// Reserved padding code for text schemas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<FeatureValue>,
}

impl FeatureSchema {
    /// Schema of integer-coded slots with the given cardinalities.
    pub fn coded(cardinalities: &[u32]) -> Self {
        FeatureSchema {
            slots: cardinalities
                .iter()
                .enumerate()
                .map(|(i, &c)| SlotSchema {
                    name: format!("x{i}"),
                    cardinality: c,
                    kind: SlotKind::Token,
                })
                .collect(),
            padding: None,
        }
    }

    pub fn arity(&self) -> usize {
        self.slots.len()
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.cardinality).collect()
    }

    /// Number of instances in the full product of slot domains, saturating.
    pub fn universe_size(&self) -> u64 {
        self.slots
            .iter()
            .fold(1u64, |acc, s| acc.saturating_mul(s.cardinality as u64))
    }

    pub fn validate(&self, x: &Instance) -> Result<()> {
        if x.arity() != self.arity() {
            return Err(Error::Schema(format!(
                "instance has arity {}, schema expects {}",
                x.arity(),
                self.arity()
            )));
        }
        for (i, (&v, slot)) in x.values().iter().zip(&self.slots).enumerate() {
            if v >= slot.cardinality {
                return Err(Error::Schema(format!(
                    "value {v} outside domain of slot {i} (cardinality {})",
                    slot.cardinality
                )));
            }
        }
        Ok(())
    }

    /// Stable content hash, used to refuse loading a memory built on another schema.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Column declaration in the JSON schema config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnConfig {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Explicit upper bin edges; overrides `bins`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    /// Declared cardinality for token columns; inferred as max + 1 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Token,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub columns: Vec<ColumnConfig>,
    pub label: String,
    #[serde(default)]
    pub lenient: bool,
}

impl SchemaConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub instances: Vec<Instance>,
    pub labels: Vec<Label>,
    pub marginals: EmpiricalDistribution,
    /// Rows dropped because a cell could not be parsed or discretized.
    pub dropped: usize,
}

/// Maps one raw cell to its code under `slot`.
pub fn discretize(raw: &str, slot: &SlotSchema) -> Result<FeatureValue> {
    match &slot.kind {
        SlotKind::Numeric { edges, .. } => {
            let value: f64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("{:?} is not numeric ({})", raw, slot.name)))?;
            if value.is_nan() {
                return Err(Error::Domain(format!("NaN in numeric column {}", slot.name)));
            }
            Ok(numeric_bin(value, edges))
        }
        SlotKind::Categorical { vocabulary, lenient } => {
            match vocabulary.iter().position(|c| c == raw) {
                Some(i) => Ok(i as FeatureValue),
                None if *lenient => Ok(vocabulary.len() as FeatureValue),
                None => Err(Error::Domain(format!(
                    "unknown category {raw:?} in column {}",
                    slot.name
                ))),
            }
        }
        SlotKind::Token => {
            let v: FeatureValue = raw
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("{raw:?} is not a code ({})", slot.name)))?;
            if v >= slot.cardinality {
                return Err(Error::Domain(format!(
                    "code {v} outside cardinality {} of {}",
                    slot.cardinality, slot.name
                )));
            }
            Ok(v)
        }
    }
}

/// Index of the first bin whose upper edge is `>= value`; the last bin
/// absorbs everything above the final edge.
pub fn numeric_bin(value: f64, edges: &[f64]) -> FeatureValue {
    edges
        .iter()
        .position(|&e| e >= value)
        .unwrap_or(edges.len().saturating_sub(1)) as FeatureValue
}

/// Upper edges of `bins` quantile bins over `values`, linear interpolation
/// between order statistics, duplicates merged.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut edges = Vec::with_capacity(bins);
    for k in 1..=bins {
        let pos = (n - 1) as f64 * k as f64 / bins as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let e = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
        if edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

/// Reads a headed CSV and discretizes it according to `config`.
pub fn ingest_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<Dataset> {
    ingest_csv_reader(File::open(path)?, config)
}

pub fn ingest_csv_reader(reader: impl Read, config: &SchemaConfig) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let label_col = find(&config.label)
        .ok_or_else(|| Error::Ingestion(format!("label column {:?} missing", config.label)))?;
    let cols: Vec<usize> = config
        .columns
        .iter()
        .map(|c| find(&c.name).ok_or_else(|| Error::Ingestion(format!("column {:?} missing", c.name))))
        .collect::<Result<_>>()?;

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?);
    }
    if rows.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }
    let total_rows = rows.len();

    // Rows with a malformed numeric or token cell are dropped before any
    // statistics are computed.
    rows.retain(|row| {
        row.len() == header.len()
            && config.columns.iter().zip(&cols).all(|(cfg, &ci)| {
                let cell = &row[ci];
                match cfg.kind {
                    ColumnKind::Numeric => cell.trim().parse::<f64>().is_ok_and(|v| !v.is_nan()),
                    ColumnKind::Token => cell
                        .trim()
                        .parse::<u32>()
                        .is_ok_and(|v| cfg.cardinality.is_none_or(|c| v < c)),
                    ColumnKind::Categorical => true,
                }
            })
    });
    if rows.is_empty() {
        return Err(Error::Ingestion(format!("all {total_rows} rows dropped")));
    }

    let mut slots = Vec::with_capacity(cols.len());
    for (cfg, &ci) in config.columns.iter().zip(&cols) {
        let cells = rows.iter().map(|r| &r[ci]);
        let slot = match cfg.kind {
            ColumnKind::Numeric => {
                let values: Vec<f64> = cells.map(|c| c.trim().parse().unwrap()).collect();
                let edges = match &cfg.edges {
                    Some(e) => {
                        if e.is_empty() || e.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(Error::Config(format!(
                                "edges of {} must be non-empty and strictly increasing",
                                cfg.name
                            )));
                        }
                        e.clone()
                    }
                    None => quantile_edges(&values, cfg.bins.unwrap_or(DEFAULT_BINS).max(1)),
                };
                let mut sums = vec![0.0; edges.len()];
                let mut counts = vec![0usize; edges.len()];
                for &v in &values {
                    let b = numeric_bin(v, &edges) as usize;
                    sums[b] += v;
                    counts[b] += 1;
                }
                let representatives = sums
                    .iter()
                    .zip(&counts)
                    .zip(&edges)
                    .map(|((&s, &c), &e)| if c > 0 { s / c as f64 } else { e })
                    .collect();
                SlotSchema {
                    name: cfg.name.clone(),
                    cardinality: edges.len() as u32,
                    kind: SlotKind::Numeric { edges, representatives },
                }
            }
            ColumnKind::Categorical => {
                let mut vocabulary: Vec<String> = Vec::new();
                for c in cells {
                    if !vocabulary.iter().any(|v| v == c) {
                        vocabulary.push(c.to_string());
                    }
                }
                let cardinality = vocabulary.len() as u32 + u32::from(config.lenient);
                SlotSchema {
                    name: cfg.name.clone(),
                    cardinality,
                    kind: SlotKind::Categorical { vocabulary, lenient: config.lenient },
                }
            }
            ColumnKind::Token => {
                let max = cells.map(|c| c.trim().parse::<u32>().unwrap()).max().unwrap_or(0);
                SlotSchema {
                    name: cfg.name.clone(),
                    cardinality: cfg.cardinality.unwrap_or(max + 1),
                    kind: SlotKind::Token,
                }
            }
        };
        slots.push(slot);
    }
    let schema = FeatureSchema { slots, padding: None };

    let mut instances = Vec::with_capacity(rows.len());
    for row in &rows {
        let codes = schema
            .slots
            .iter()
            .zip(&cols)
            .map(|(slot, &ci)| discretize(&row[ci], slot))
            .collect::<Result<Vec<_>>>()?;
        instances.push(Instance::new(codes));
    }
    let labels = label_codes(rows.iter().map(|r| &r[label_col]));
    let marginals = EmpiricalDistribution::from_instances(&schema, &instances)?;
    Ok(Dataset {
        schema,
        instances,
        labels,
        marginals,
        dropped: total_rows - rows.len(),
    })
}

/// Integer labels are kept as-is; anything else gets first-seen ids.
fn label_codes<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> Vec<Label> {
    if cells.clone().all(|c| c.trim().parse::<u32>().is_ok()) {
        return cells.map(|c| Label(c.trim().parse().unwrap())).collect();
    }
    let mut seen: Vec<&str> = Vec::new();
    cells
        .map(|c| {
            let id = seen.iter().position(|s| *s == c).unwrap_or_else(|| {
                seen.push(c);
                seen.len() - 1
            });
            Label(id as u32)
        })
        .collect()
}

/// Writes instances as token-kind CSV columns named after the schema slots,
/// followed by a `label` column.
pub fn write_codes_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    instances: &[Instance],
    labels: &[Label],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = schema.slots.iter().map(|s| s.name.clone()).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (x, y) in instances.iter().zip(labels) {
        let mut rec: Vec<String> = x.values().iter().map(|v| v.to_string()).collect();
        rec.push(y.0.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-slot value frequencies over the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    frequencies: Vec<Vec<f64>>,
}

impl EmpiricalDistribution {
    pub fn from_instances(schema: &FeatureSchema, instances: &[Instance]) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Ingestion("cannot estimate marginals from zero instances".into()));
        }
        let mut counts: Vec<Vec<u64>> = schema
            .slots
            .iter()
            .map(|s| vec![0; s.cardinality as usize])
            .collect();
        for x in instances {
            schema.validate(x)?;
            for (slot, &v) in x.values().iter().enumerate() {
                counts[slot][v as usize] += 1;
            }
        }
        let n = instances.len() as f64;
        Ok(EmpiricalDistribution {
            frequencies: counts
                .into_iter()
                .map(|c| c.into_iter().map(|k| k as f64 / n).collect())
                .collect(),
        })
    }

    pub fn uniform(cardinalities: &[u32]) -> Self {
        EmpiricalDistribution {
            frequencies: cardinalities
                .iter()
                .map(|&c| vec![1.0 / c as f64; c as usize])
                .collect(),
        }
    }

    /// Explicit tables; each row must be a probability vector.
    pub fn from_frequencies(frequencies: Vec<Vec<f64>>) -> Result<Self> {
        for (i, f) in frequencies.iter().enumerate() {
            let total: f64 = f.iter().sum();
            if f.is_empty() || f.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("slot {i} frequencies do not form a distribution")));
            }
        }
        Ok(EmpiricalDistribution { frequencies })
    }

    pub fn arity(&self) -> usize {
        self.frequencies.len()
    }

    pub fn slot(&self, i: usize) -> &[f64] {
        &self.frequencies[i]
    }

    pub fn slots(&self) -> &[Vec<f64>] {
        &self.frequencies
    }
}

/// Token vectors, one line per token: `token<TAB>v1 v2 ... vd`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (token, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Ingestion(format!("line {}: missing tab", lineno + 1)))?;
            let v = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Ingestion(format!("line {}: {e}", lineno + 1)))?;
            entries.push((token.to_string(), v));
        }
        Self::new(entries)
    }

    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Ingestion("embedding table is empty".into()));
        }
        let mut tokens = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::Ingestion(format!(
                    "token {token:?} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if index.insert(token.clone(), tokens.len() as u32).is_some() {
                return Err(Error::Ingestion(format!("duplicate token {token:?}")));
            }
            tokens.push(token);
            vectors.push(v);
        }
        Ok(EmbeddingTable { tokens, index, vectors, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn vector(&self, id: u32) -> Option<&[f64]> {
        self.vectors.get(id as usize).map(Vec::as_slice)
    }

    pub fn distance(&self, a: u32, b: u32) -> Option<f64> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        Some(euclidean(va, vb))
    }

    /// The `k` tokens closest to `id` (itself included), ties to lower ids.
    pub fn nearest(&self, id: u32, k: usize) -> Vec<u32> {
        let Some(v) = self.vector(id) else {
            return Vec::new();
        };
        let mut scored: Vec<(f64, u32)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(j, w)| (euclidean(v, w), j as u32))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, j)| j).collect()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Reads `label<TAB>text` lines into fixed-arity token sequences. Tokens are
/// whitespace-separated and looked up in `table`; unknown tokens are skipped.
/// The padding code is `table.len()`.
pub fn ingest_text(path: impl AsRef<Path>, table: &EmbeddingTable, arity: usize) -> Result<Dataset> {
    ingest_text_reader(BufReader::new(File::open(path)?), table, arity)
}

pub fn ingest_text_reader(reader: impl BufRead, table: &EmbeddingTable, arity: usize) -> Result<Dataset> {
    if arity == 0 {
        return Err(Error::Config("text arity must be positive".into()));
    }
    let pad = table.len() as FeatureValue;
    let mut label_cells = Vec::new();
    let mut instances = Vec::new();
    let mut dropped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, text)) = line.split_once('\t') else {
            dropped += 1;
            continue;
        };
        let mut codes: Vec<FeatureValue> = text
            .split_whitespace()
            .filter_map(|t| table.id(t))
            .take(arity)
            .collect();
        if codes.is_empty() {
            dropped += 1;
            continue;
        }
        codes.resize(arity, pad);
        label_cells.push(label.to_string());
        instances.push(Instance::new(codes));
    }
    if instances.is_empty() {
        return Err(Error::Ingestion("no usable text rows".into()));
    }
    let schema = FeatureSchema {
        slots: (0..arity)
            .map(|i| SlotSchema {
                name: format!("tok{i}"),
                cardinality: pad + 1,
                kind: SlotKind::Token,
            })
            .collect(),
        padding: Some(pad),
    };
    let labels = label_codes(label_cells.iter().map(String::as_str));
    let marginals = EmpiricalDistribution::from_instances(&schema, &instances)?;
    Ok(Dataset { schema, instances, labels, marginals, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_slot(edges: Vec<f64>) -> SlotSchema {
        SlotSchema {
            name: "v".into(),
            cardinality: edges.len() as u32,
            kind: SlotKind::Numeric { representatives: edges.clone(), edges },
        }
    }

    fn config(json: &str) -> SchemaConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn discretize_numeric_by_linear_scan() {
        let slot = numeric_slot(vec![3.0, 6.0, 9.0]);
        // oracle: first index i with edges[i] >= raw
        for (raw, want) in [(5.0, 1), (3.0, 0), (-1.0, 0), (6.0, 1), (8.9, 2), (42.0, 2)] {
            let scan = [3.0, 6.0, 9.0].iter().position(|&e| e >= raw).unwrap_or(2) as u32;
            assert_eq!(scan, want);
            assert_eq!(discretize(&raw.to_string(), &slot).unwrap(), want);
        }
    }

    #[test]
    fn two_bin_quantiles_split_at_the_median() {
        let cfg = config(r#"{"columns":[{"name":"a","kind":"numeric","bins":2}],"label":"y"}"#);
        let ds = ingest_csv_reader("a,y\n1,0\n2,0\n7,1\n8,1\n".as_bytes(), &cfg).unwrap();
        let codes: Vec<u32> = ds.instances.iter().map(|x| x.values()[0]).collect();
        assert_eq!(codes, vec![0, 0, 1, 1]);
        match &ds.schema.slots[0].kind {
            SlotKind::Numeric { edges, representatives } => {
                assert_eq!(edges, &vec![4.5, 8.0]);
                assert_eq!(representatives, &vec![1.5, 7.5]);
            }
            other => panic!("unexpected kind {other:?}"),
        }
        assert_eq!(ds.labels, vec![Label(0), Label(0), Label(1), Label(1)]);
    }

    #[test]
    fn minimum_maps_to_bin_zero() {
        let cfg = config(r#"{"columns":[{"name":"a","kind":"numeric"}],"label":"y"}"#);
        let csv = "a,y\n10,0\n3,1\n7,0\n5,1\n9,0\n";
        let ds = ingest_csv_reader(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(ds.instances[1].values()[0], 0);
        assert_eq!(discretize("3", &ds.schema.slots[0]).unwrap(), 0);
    }

    #[test]
    fn categorical_first_seen_codes() {
        let cfg = config(r#"{"columns":[{"name":"c","kind":"categorical"}],"label":"y"}"#);
        let ds = ingest_csv_reader("c,y\na,yes\nb,no\na,yes\n".as_bytes(), &cfg).unwrap();
        let codes: Vec<u32> = ds.instances.iter().map(|x| x.values()[0]).collect();
        assert_eq!(codes, vec![0, 1, 0]);
        assert_eq!(ds.schema.slots[0].cardinality, 2);
        assert_eq!(ds.labels, vec![Label(0), Label(1), Label(0)]);
        assert!(matches!(discretize("unseen", &ds.schema.slots[0]), Err(Error::Domain(_))));
    }

    #[test]
    fn lenient_mode_reserves_other_code() {
        let cfg = config(r#"{"columns":[{"name":"c","kind":"categorical"}],"label":"y","lenient":true}"#);
        let ds = ingest_csv_reader("c,y\na,0\nb,1\n".as_bytes(), &cfg).unwrap();
        assert_eq!(ds.schema.slots[0].cardinality, 3);
        assert_eq!(discretize("zzz", &ds.schema.slots[0]).unwrap(), 2);
    }

    #[test]
    fn ingestion_errors() {
        let cfg = config(r#"{"columns":[{"name":"a","kind":"numeric"}],"label":"y"}"#);
        assert!(matches!(ingest_csv_reader("a,y\n".as_bytes(), &cfg), Err(Error::Ingestion(_))));
        assert!(matches!(ingest_csv_reader("a,z\n1,1\n".as_bytes(), &cfg), Err(Error::Ingestion(_))));
        assert!(matches!(
            ingest_csv_reader("a,y\nfoo,1\nbar,0\n".as_bytes(), &cfg),
            Err(Error::Ingestion(_))
        ));
    }

    #[test]
    fn unparseable_rows_are_dropped_and_counted() {
        let cfg = config(r#"{"columns":[{"name":"a","kind":"numeric","bins":2},{"name":"c","kind":"categorical"}],"label":"y"}"#);
        let csv = "a,c,y\n1,\"x,1\",0\nnope,q,1\n3,y,1\n";
        let ds = ingest_csv_reader(csv.as_bytes(), &cfg).unwrap();
        assert_eq!(ds.dropped, 1);
        assert_eq!(ds.instances.len(), 2);
        match &ds.schema.slots[1].kind {
            SlotKind::Categorical { vocabulary, .. } => assert_eq!(vocabulary, &vec!["x,1".to_string(), "y".into()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        let schema = FeatureSchema::coded(&[3, 2]);
        let xs: Vec<Instance> = [[0, 1], [2, 1], [2, 0], [1, 1]]
            .iter()
            .map(|v| Instance::new(v.to_vec()))
            .collect();
        let d = EmpiricalDistribution::from_instances(&schema, &xs).unwrap();
        assert_eq!(d.slot(0), &[0.25, 0.25, 0.5]);
        for s in d.slots() {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(EmpiricalDistribution::from_frequencies(vec![vec![0.5, 0.4]]).is_err());
    }

    #[test]
    fn schema_hash_is_content_sensitive() {
        let a = FeatureSchema::coded(&[2, 3]);
        let b = FeatureSchema::coded(&[2, 4]);
        assert_eq!(a.hash(), FeatureSchema::coded(&[2, 3]).hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn embedding_table_and_text_ingestion() {
        let table = EmbeddingTable::from_reader("a\t1 0\nb\t0 1\nc\t0.9 0.1\n".as_bytes()).unwrap();
        assert_eq!(table.dim(), 2);
        assert_eq!(table.nearest(0, 2), vec![0, 2]);
        assert!(EmbeddingTable::from_reader("a\t1 0\nb\t1\n".as_bytes()).is_err());

        let ds = ingest_text_reader("1\ta b zz\n0\tc\n1\tqq\n".as_bytes(), &table, 4).unwrap();
        assert_eq!(ds.dropped, 1);
        assert_eq!(ds.schema.padding, Some(3));
        assert_eq!(ds.instances[0].values(), &[0, 1, 3, 3]);
        assert_eq!(ds.instances[1].values(), &[2, 3, 3, 3]);
        assert_eq!(ds.labels, vec![Label(1), Label(0)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reingesting_codes_is_idempotent(
                rows in proptest::collection::vec((0.0f64..100.0, 0usize..4), 5..40),
            ) {
                let cats = ["red", "green", "blue", "teal"];
                let mut csv = String::from("num,cat,y\n");
                for (i, (v, c)) in rows.iter().enumerate() {
                    csv.push_str(&format!("{v},{},{}\n", cats[*c], i % 2));
                }
                let cfg = config(r#"{"columns":[{"name":"num","kind":"numeric"},{"name":"cat","kind":"categorical"}],"label":"y"}"#);
                let first = ingest_csv_reader(csv.as_bytes(), &cfg).unwrap();

                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("codes.csv");
                write_codes_csv(&path, &first.schema, &first.instances, &first.labels).unwrap();
                let recfg = SchemaConfig {
                    columns: first.schema.slots.iter().map(|s| ColumnConfig {
                        name: s.name.clone(), kind: ColumnKind::Token, bins: None, edges: None,
                        cardinality: Some(s.cardinality),
                    }).collect(),
                    label: "label".into(),
                    lenient: false,
                };
                let second = ingest_csv(&path, &recfg).unwrap();
                prop_assert_eq!(&second.instances, &first.instances);
                prop_assert_eq!(&second.labels, &first.labels);
                prop_assert_eq!(second.schema.cardinalities(), first.schema.cardinalities());
            }

            #[test]
            fn quantile_bins_are_balanced_up_to_duplicates(
                values in proptest::collection::vec(0u32..1000, 8..200),
                bins in 1usize..6,
            ) {
                let raw: Vec<f64> = values.iter().map(|&v| v as f64).collect();
                let edges = quantile_edges(&raw, bins);
                prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
                let mut occupancy = vec![0usize; edges.len()];
                for &v in &raw {
                    occupancy[numeric_bin(v, &edges) as usize] += 1;
                }
                let mut sorted = raw.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let duplicates = sorted.windows(2).filter(|w| w[0] == w[1]).count();
                let ideal = raw.len() as f64 / bins as f64;
                for occ in occupancy {
                    prop_assert!((occ as f64 - ideal).abs() <= duplicates as f64 + 2.0,
                        "occ {} ideal {} dups {}", occ, ideal, duplicates);
                }
            }
        }
    }
}
