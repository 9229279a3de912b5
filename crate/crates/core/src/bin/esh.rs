use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esh::anchor_graph::AnchorParams;
use esh::encoder::QueryMode;
use esh::error::{EshError, Result};
use esh::optimizer::{Algorithm, Alpha};
use esh::par;
use esh::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "esh", version, about = "Binary hash codes on an anchor graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write Gaussian blob features and labels.
    Synth(Flags),
    /// Fit anchors, train the projection and save the model.
    Train(Flags),
    /// Encode features with a trained model.
    Encode(Flags),
    /// Encode features and list their nearest database codes.
    Query(Flags),
    /// Score query codes against database codes.
    Eval(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Database labels (eval).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    query_labels: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Query codes (eval).
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Database codes (query, eval).
    #[arg(long)]
    database: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// `auto` or a non-negative number.
    #[arg(long)]
    alpha: Option<Alpha>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    snn: Option<usize>,
    #[arg(long)]
    kmeans_iters: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    query_mode: Option<QueryMode>,
    #[arg(long)]
    retain_training: bool,
    #[arg(long)]
    timing: bool,
    #[arg(long, value_delimiter = ',')]
    precision_at: Option<Vec<usize>>,
    #[arg(long)]
    radius: Option<u32>,
    /// Rank cutoff for AP.
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long)]
    skip_empty_queries: bool,
    /// Results kept per query.
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    per_cluster: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    holdout: Option<f64>,
    /// Write binary features instead of CSV.
    #[arg(long)]
    binary: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl Flags {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set_some(&mut cfg.features, self.features);
        set_some(&mut cfg.labels, self.labels);
        set_some(&mut cfg.query_labels, self.query_labels);
        set_some(&mut cfg.model, self.model);
        set_some(&mut cfg.codes, self.codes);
        set_some(&mut cfg.database, self.database);
        set(&mut cfg.out, self.out);
        set_some(&mut cfg.query_mode, self.query_mode);
        set(&mut cfg.top, self.top);
        cfg.timing |= self.timing;
        cfg.retain_training |= self.retain_training;

        let t = &mut cfg.train;
        set(&mut t.bits, self.bits);
        set(&mut t.algorithm, self.algo);
        set(&mut t.iterations, self.iters);
        set(&mut t.eta, self.eta);
        set(&mut t.alpha, self.alpha);
        set(&mut t.tau0, self.tau0);
        set(&mut t.seed, self.seed);
        t.early_stop |= self.early_stop;

        let a: &mut AnchorParams = &mut cfg.anchors;
        set(&mut a.anchors, self.anchors);
        set(&mut a.neighbors, self.snn);
        set(&mut a.kmeans_iters, self.kmeans_iters);
        set_some(&mut a.sigma2, self.sigma2);

        let e = &mut cfg.eval;
        set(&mut e.precision_at, self.precision_at);
        set(&mut e.radius, self.radius);
        set_some(&mut e.cutoff, self.cutoff);
        e.exclude_self |= self.exclude_self;
        e.skip_empty_queries |= self.skip_empty_queries;

        let s = &mut cfg.synth;
        set(&mut s.clusters, self.clusters);
        set(&mut s.per_cluster, self.per_cluster);
        set(&mut s.dims, self.dims);
        set(&mut s.spread, self.spread);
        set(&mut s.holdout, self.holdout);
        s.binary |= self.binary;
        Ok(cfg)
    }
}

fn apply_thread_cap() -> Result<()> {
    let Ok(raw) = std::env::var("ESH_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| EshError::InvalidArgument(format!("ESH_THREADS must be a positive integer, got {raw:?}")))?;
    par::set_thread_cap(threads);
    Ok(())
}

fn run(cli: Cli) -> Result<String> {
    apply_thread_cap()?;
    Ok(match cli.command {
        Command::Synth(f) => pipeline::summary_json("synth", &pipeline::cmd_synth(&f.resolve()?)?),
        Command::Train(f) => pipeline::summary_json("train", &pipeline::cmd_train(&f.resolve()?)?),
        Command::Encode(f) => pipeline::summary_json("encode", &pipeline::cmd_encode(&f.resolve()?)?),
        Command::Query(f) => {
            let cfg = f.resolve()?;
            let results = pipeline::cmd_query(&cfg)?;
            pipeline::summary_json("query", &serde_json::json!({ "queries": results.len(), "out": cfg.out }))
        }
        Command::Eval(f) => pipeline::summary_json("eval", &pipeline::cmd_eval(&f.resolve()?)?),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            // a closed stdout (e.g. piped into `head`) is not an error
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let json = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{json}");
            ExitCode::FAILURE
        }
    }
}
