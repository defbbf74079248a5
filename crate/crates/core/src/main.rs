use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use manchors::anchors::write_trace_jsonl;
use manchors::bench::{generate_clustered_workload, run_paired_benchmark, BenchConfig, Workload};
use manchors::data::{ingest_csv, ingest_text, Dataset, EmbeddingTable, SchemaConfig};
use manchors::engine::{Domain, Engine, EngineParams};
use manchors::memory::MemoryStore;
use manchors::models::{model_from_spec, server, BuiltinModel, Classifier, ModelConfig};
use manchors::{Error, Instance, Oracle, Result};

#[derive(Parser)]
#[command(name = "manchors", version, about = "Anchors explanations with a memory of intermediate rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one input.
    Explain(ExplainArgs),
    /// Paired baseline-versus-memory run over a stream.
    Bench(BenchArgs),
    /// Write a synthetic clustered workload with its lookup model.
    GenWorkload(GenArgs),
    #[command(subcommand)]
    Memory(MemoryCommand),
    /// Serve a builtin model over the line protocol.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Summarize a persisted memory file.
    Inspect { path: PathBuf },
    /// Build a memory by streaming a dataset through the engine and save it.
    Persist {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV (tabular) or `label<TAB>text` lines (with --embeddings).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "embeddings")]
    schema_config: Option<PathBuf>,
    /// Token embedding table; switches to text mode.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    text_arity: usize,
}

#[derive(Args)]
struct ModelArgs {
    /// `builtin:<kind>` or `server:<cmd|host:port>`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    model_config: Option<PathBuf>,
}

#[derive(Args)]
struct ParamArgs {
    /// JSON file of engine parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    tau_p: Option<f64>,
    #[arg(long)]
    tau_p_mid: Option<f64>,
    #[arg(long)]
    tau_sim: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_samples: Option<u64>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    insert_on_hit: bool,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Row of the dataset to explain.
    #[arg(long, conflicts_with = "instance")]
    index: Option<usize>,
    /// Comma-separated codes to explain instead of a dataset row.
    #[arg(long)]
    instance: Option<String>,
    /// Memory file to start from; updated in place.
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Per-iteration trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, requires = "model")]
    data: Option<PathBuf>,
    #[arg(long)]
    schema_config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    text_arity: usize,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Without --data: synthetic workload shape.
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 50)]
    per_cluster: usize,
    #[arg(long, default_value_t = 6)]
    features: usize,
    #[arg(long, default_value_t = 8)]
    cardinality: u32,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    workload_seed: u64,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 50)]
    per_cluster: usize,
    #[arg(long, default_value_t = 6)]
    features: usize,
    #[arg(long, default_value_t = 8)]
    cardinality: u32,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Receives workload.csv, schema.json and model.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model_config: PathBuf,
    /// Listen on this address instead of stdin/stdout.
    #[arg(long)]
    tcp: Option<String>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<EngineParams> {
        let mut p = match &self.params {
            Some(path) => EngineParams::from_json_file(path)?,
            None => EngineParams::default(),
        };
        p.tau_p = self.tau_p.unwrap_or(p.tau_p);
        p.tau_p_mid = self.tau_p_mid.unwrap_or(p.tau_p_mid);
        p.tau_sim = self.tau_sim.unwrap_or(p.tau_sim);
        p.delta = self.delta.unwrap_or(p.delta);
        p.seed = self.seed.unwrap_or(p.seed);
        p.max_samples = self.max_samples.unwrap_or(p.max_samples);
        p.capacity = self.capacity.or(p.capacity);
        p.insert_on_hit |= self.insert_on_hit;
        p.validate()?;
        Ok(p)
    }
}

fn read_model_config(path: &Option<PathBuf>) -> Result<Option<ModelConfig>> {
    path.as_ref()
        .map(|p| {
            let f = BufReader::new(File::open(p)?);
            serde_json::from_reader(f).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })
        .transpose()
}

fn load_model(spec: &str, config: &Option<PathBuf>) -> Result<Arc<dyn Classifier>> {
    model_from_spec(spec, read_model_config(config)?)
}

fn load_data(
    data: &Path,
    schema_config: Option<&Path>,
    embeddings: Option<&Path>,
    text_arity: usize,
) -> Result<(Dataset, Domain)> {
    match embeddings {
        Some(emb) => {
            let table = Arc::new(EmbeddingTable::from_file(emb)?);
            let ds = ingest_text(data, &table, text_arity)?;
            let domain = Domain::text(&ds.schema, table)?;
            Ok((ds, domain))
        }
        None => {
            let cfg_path = schema_config.ok_or_else(|| Error::Config("--schema-config is required for CSV data".into()))?;
            let ds = ingest_csv(data, &SchemaConfig::from_json_file(cfg_path)?)?;
            let domain = Domain::tabular(&ds.schema, &ds.marginals);
            Ok((ds, domain))
        }
    }
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Domain)> {
        load_data(&self.data, self.schema_config.as_deref(), self.embeddings.as_deref(), self.text_arity)
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn explain(args: ExplainArgs) -> Result<()> {
    let params = args.params.resolve()?;
    let (ds, domain) = args.data.load()?;
    let x = match (&args.instance, args.index) {
        (Some(text), _) => Instance::new(
            text.split(',')
                .map(|t| t.trim().parse::<u32>().map_err(|e| Error::Argument(format!("bad code {t:?}: {e}"))))
                .collect::<Result<_>>()?,
        ),
        (None, i) => {
            let i = i.unwrap_or(0);
            ds.instances
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Argument(format!("index {i} outside {} rows", ds.instances.len())))?
        }
    };
    ds.schema.validate(&x)?;
    let model = load_model(&args.model.model, &args.model.model_config)?;
    let mut engine = Engine::new(Oracle::from_arc(model), domain, params)?;
    if let Some(path) = args.memory.as_ref().filter(|p| p.exists()) {
        let store = MemoryStore::load(path, engine.domain().embedder.dim(), &engine.domain().schema_hash)?;
        engine = engine.with_store(store)?;
    }
    let report = engine.explain(&x, params.seed)?;
    if let Some(path) = &args.trace {
        write_trace_jsonl(&report.trace, BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &args.memory {
        engine.store().persist(path)?;
    }
    print_json(&report)
}

fn bench(args: BenchArgs) -> Result<()> {
    let params = args.params.resolve()?;
    let (mut xs, domain, model): (Vec<Instance>, Domain, Arc<dyn Classifier>) = match &args.data {
        Some(data) => {
            let (ds, domain) =
                load_data(data, args.schema_config.as_deref(), args.embeddings.as_deref(), args.text_arity)?;
            let spec = args.model.as_deref().expect("clap enforces --model with --data");
            (ds.instances, domain, load_model(spec, &args.model_config)?)
        }
        None => {
            let w = generate_clustered_workload(
                args.clusters,
                args.per_cluster,
                args.features,
                args.cardinality,
                args.noise,
                args.workload_seed,
            )?;
            let domain = Domain::tabular(&w.schema, &w.marginals);
            (w.instances, domain, Arc::new(w.model))
        }
    };
    if let Some(n) = args.limit {
        xs.truncate(n);
    }
    let cfg = BenchConfig {
        params,
        base_seed: params.seed,
        exec: if args.sequential { manchors::Execution::Sequential } else { manchors::Execution::default() },
        ..BenchConfig::default()
    };
    let summary = run_paired_benchmark(&xs, model, &domain, &cfg)?;
    if let Some(p) = &args.out_json {
        summary.write_json(p)?;
    }
    if let Some(p) = &args.out_csv {
        summary.write_rows_csv(p)?;
    }
    let brief = serde_json::json!({
        "inputs": summary.inputs,
        "complete": summary.complete,
        "hit_rate": summary.hit_rate,
        "memory_size": summary.memory_size,
        "speedup": summary.speedup,
        "query_speedup": summary.query_speedup,
        "sampling_reduction": summary.sampling_reduction,
        "hit_precise_fraction": summary.hit_precise_fraction,
        "baseline": { "queries": summary.baseline.total_queries, "time_secs": summary.baseline.total_time_secs,
                      "coverage": summary.baseline.coverage.mean, "length": summary.baseline.length.mean,
                      "precision": summary.baseline.precision.mean },
        "manchors": { "queries": summary.manchors.total_queries, "time_secs": summary.manchors.total_time_secs,
                      "coverage": summary.manchors.coverage.mean, "length": summary.manchors.length.mean,
                      "precision": summary.manchors.precision.mean },
    });
    print_json(&brief)
}

fn gen_workload(args: GenArgs) -> Result<()> {
    let w = generate_clustered_workload(args.clusters, args.per_cluster, args.features, args.cardinality, args.noise, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    w.write_csv(args.out_dir.join("workload.csv"))?;
    Workload::write_json(&w.schema_config(), args.out_dir.join("schema.json"))?;
    Workload::write_json(&w.model.to_config(), args.out_dir.join("model.json"))?;
    println!("wrote {} inputs to {}", w.instances.len(), args.out_dir.display());
    Ok(())
}

fn memory(cmd: MemoryCommand) -> Result<()> {
    match cmd {
        MemoryCommand::Inspect { path } => {
            let text = std::fs::read_to_string(&path)?;
            let mut lines = text.lines();
            let header: serde_json::Value = serde_json::from_str(lines.next().unwrap_or("{}"))?;
            let dim = header["dim"].as_u64().unwrap_or(0) as usize;
            let hash = header["schema_hash"].as_str().unwrap_or("").to_string();
            let store = MemoryStore::read_from(text.as_bytes(), dim, &hash)?;
            let lengths: Vec<usize> = store.entries().map(|e| e.mid_rule.len()).collect();
            let mut histogram = std::collections::BTreeMap::new();
            for l in &lengths {
                *histogram.entry(*l).or_insert(0usize) += 1;
            }
            print_json(&serde_json::json!({
                "dim": dim,
                "schema_hash": hash,
                "count": store.len(),
                "first_index": store.entries().next().map(|e| e.insertion_index),
                "rule_length_histogram": histogram,
            }))
        }
        MemoryCommand::Persist { data, model, params, out, limit } => {
            let params = params.resolve()?;
            let (ds, domain) = data.load()?;
            let model = load_model(&model.model, &model.model_config)?;
            let mut engine = Engine::new(Oracle::from_arc(model), domain, params)?;
            let n = limit.unwrap_or(ds.instances.len()).min(ds.instances.len());
            let outcome = engine.explain_stream(&ds.instances[..n], params.seed);
            engine.store().persist(&out)?;
            print_json(&outcome.aggregate)
        }
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = read_model_config(&Some(args.model_config))?.expect("path given");
    let model = BuiltinModel::from_config(cfg)?;
    match args.tcp {
        None => server::serve(&model, io::stdin().lock(), io::stdout().lock()),
        Some(addr) => {
            let listener = TcpListener::bind(&addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                let reader = BufReader::new(stream.try_clone()?);
                if let Err(e) = server::serve(&model, reader, stream) {
                    eprintln!("connection closed: {e}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explain(a) => explain(a),
        Command::Bench(a) => bench(a),
        Command::GenWorkload(a) => gen_workload(a),
        Command::Memory(c) => memory(c),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
