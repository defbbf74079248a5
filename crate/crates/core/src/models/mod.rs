//! The explained black box. Every model query in the crate goes through
//! [`Oracle::predict_batch`], which owns the query counter that cost
//! accounting is built on.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rule::{Instance, Label};

mod builtin;
pub mod server;

pub use builtin::{BuiltinModel, ConjunctionRule, LookupEntry, ModelConfig};
pub use server::{ServerClient, ServerAddress};

/// A deterministic classifier over discrete instances.
pub trait Classifier: Send + Sync {
    /// Expected instance arity, when the model knows it.
    fn arity(&self) -> Option<usize>;

    fn predict_batch(&self, xs: &[Instance], exec: Execution) -> Result<Vec<Label>>;
}

/// Query-counting front for a [`Classifier`].
pub struct Oracle {
    model: Arc<dyn Classifier>,
    queries: AtomicU64,
    exec: Execution,
}

impl Oracle {
    pub fn new(model: impl Classifier + 'static) -> Self {
        Self::from_arc(Arc::new(model))
    }

    pub fn from_arc(model: Arc<dyn Classifier>) -> Self {
        Oracle { model, queries: AtomicU64::new(0), exec: Execution::default() }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Fresh counter over the same model.
    pub fn fork(&self) -> Oracle {
        Oracle { model: Arc::clone(&self.model), queries: AtomicU64::new(0), exec: self.exec }
    }

    pub fn model(&self) -> &Arc<dyn Classifier> {
        &self.model
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn predict_batch(&self, xs: &[Instance]) -> Result<Vec<Label>> {
        if let Some(n) = self.model.arity() {
            if let Some(bad) = xs.iter().find(|x| x.arity() != n) {
                return Err(Error::Schema(format!(
                    "instance arity {} does not match model arity {n}",
                    bad.arity()
                )));
            }
        }
        let labels = self.model.predict_batch(xs, self.exec)?;
        if labels.len() != xs.len() {
            return Err(Error::Oracle(format!(
                "model returned {} labels for {} instances",
                labels.len(),
                xs.len()
            )));
        }
        self.queries.fetch_add(xs.len() as u64, Ordering::Relaxed);
        Ok(labels)
    }

    pub fn predict(&self, x: &Instance) -> Result<Label> {
        Ok(self.predict_batch(std::slice::from_ref(x))?[0])
    }
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("arity", &self.model.arity())
            .field("queries", &self.query_count())
            .finish()
    }
}

/// Parses `builtin:<kind>` (with `config` supplying parameters) or
/// `server:<cmd|host:port>`.
pub fn model_from_spec(spec: &str, config: Option<ModelConfig>) -> Result<Arc<dyn Classifier>> {
    if let Some(kind) = spec.strip_prefix("builtin:") {
        let cfg = config.ok_or_else(|| Error::Config(format!("builtin:{kind} needs a model config")))?;
        if cfg.kind_name() != kind {
            return Err(Error::Config(format!(
                "model config is {:?} but spec asks for {kind:?}",
                cfg.kind_name()
            )));
        }
        return Ok(Arc::new(BuiltinModel::from_config(cfg)?));
    }
    if let Some(target) = spec.strip_prefix("server:") {
        let arity = config.and_then(|c| c.arity());
        return Ok(Arc::new(ServerClient::connect(&ServerAddress::parse(target), arity)?));
    }
    Err(Error::Config(format!("unrecognized model spec {spec:?}")))
}
