//! End-to-end commands behind the `esh` binary.
//!
//! Every command takes a [`RunConfig`] and talks to other stages only
//! through files. Each artifact gets a `<file>.manifest.json` sidecar with
//! the hash of the config that produced it and, for codes, the digest of
//! the model that encoded them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchor_graph::{build_z, compute_lambda, compute_s, fit_anchors, AnchorParams};
use crate::codes::PackedCodes;
use crate::dataset::{
    generate_synthetic, holdout_split, load_features, load_labels, save_features, save_labels, standardize,
    FeatureFormat, FeatureMatrix,
};
use crate::encoder::{quantize_anchors, HashModel, ModelParts, QueryMode};
use crate::error::{EshError, Result};
use crate::eval::{evaluate, rank_database, EvalConfig, EvalReport, GroundTruth};
use crate::optimizer::{train, TrainConfig, TrainTrace};

pub const MODEL_FILE: &str = "model.eshm";
pub const TRAIN_CODES_FILE: &str = "train_codes.eshb";
pub const TRACE_FILE: &str = "trace.csv";
pub const CODES_FILE: &str = "codes.eshb";
pub const QUERY_FILE: &str = "query.json";
pub const REPORT_FILE: &str = "report.json";
pub const PR_FILE: &str = "pr.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dims: usize,
    pub spread: f64,
    /// Share of each class written to a separate query file.
    pub holdout: f64,
    pub binary: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { clusters: 10, per_cluster: 500, dims: 32, spread: 1.0, holdout: 0.0, binary: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub query_labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Query codes for `eval`.
    pub codes: Option<PathBuf>,
    /// Database codes for `query` and `eval`.
    pub database: Option<PathBuf>,
    pub out: PathBuf,
    /// `None` keeps the mode stored in the model.
    pub query_mode: Option<QueryMode>,
    /// Results kept per query by `query`.
    pub top: usize,
    /// Write wall-clock times into the trace.
    pub timing: bool,
    /// Store training codes and `Z` in the model.
    pub retain_training: bool,
    pub train: TrainConfig,
    pub anchors: AnchorParams,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            features: None,
            labels: None,
            query_labels: None,
            model: None,
            codes: None,
            database: None,
            out: PathBuf::from("out"),
            query_mode: None,
            top: 10,
            timing: false,
            retain_training: false,
            train: TrainConfig::default(),
            anchors: AnchorParams::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EshError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| EshError::Parse { line: e.line(), message: e.to_string() })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub sha256: String,
    /// Digest of the model file the artifact came from.
    pub model_sha256: Option<String>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

fn write_artifact(path: &Path, bytes: &[u8], stage: &str, cfg: &RunConfig, model: Option<&str>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| EshError::io(path, e))?;
    let manifest = Manifest {
        stage: stage.into(),
        config_hash: cfg.hash(),
        sha256: sha256_hex(bytes),
        model_sha256: model.map(str::to_owned),
    };
    let side = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&side, json + "\n").map_err(|e| EshError::io(side, e))
}

/// The sidecar of `artifact`, if there is one.
pub fn read_manifest(artifact: &Path) -> Result<Option<Manifest>> {
    let side = manifest_path(artifact);
    match std::fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| EshError::Corrupt(format!("{}: {e}", side.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(EshError::io(side, e)),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| EshError::InvalidArgument(format!("--{flag} is required")))?;
    if !path.exists() {
        return Err(EshError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    Ok(path)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| EshError::io(dir, e))
}

fn load_features_auto(path: &Path) -> Result<FeatureMatrix> {
    load_features(path, FeatureFormat::from_path(path))
}

/// Result of fitting the whole pipeline on raw features.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: HashModel,
    pub codes: PackedCodes,
    pub trace: TrainTrace,
}

/// Standardize, fit anchors, build `Z`, `Λ` and `S`, train `W` and encode
/// the training set. Anchors and training share `train.seed`.
pub fn fit_pipeline(
    x_raw: &FeatureMatrix,
    anchors: &AnchorParams,
    train_cfg: &TrainConfig,
    query_mode: QueryMode,
    retain_training: bool,
) -> Result<Trained> {
    train_cfg.validate(x_raw.dims())?;
    let (x, stats) = standardize(x_raw)?;
    let anchor_set = quantize_anchors(&fit_anchors(&x, anchors, train_cfg.seed)?)?;
    let z = build_z(&x, &anchor_set)?;
    let lambda = compute_lambda(&z);
    let s = compute_s(&x, &z, &lambda)?;
    let outcome = train(&x, &s, train_cfg)?;
    let (model, codes) = HashModel::fit(ModelParts {
        x: &x,
        w: &outcome.w,
        stats,
        anchors: anchor_set,
        z,
        lambda,
        query_mode,
        retain_training,
    })?;
    Ok(Trained { model, codes, trace: outcome.trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub rows: usize,
    pub dims: usize,
    pub classes: usize,
    pub query_rows: usize,
    pub files: Vec<PathBuf>,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let sc = &cfg.synth;
    let (x, labels) = generate_synthetic(sc.clusters, sc.per_cluster, sc.dims, sc.spread, cfg.train.seed)?;
    create_out(&cfg.out)?;
    let (ext, format) = if sc.binary { ("eshf", FeatureFormat::Binary) } else { ("csv", FeatureFormat::Csv) };
    let mut files = Vec::new();
    let mut write = |name: &str, x: &FeatureMatrix, labels: &crate::dataset::LabelSet| -> Result<()> {
        let fpath = cfg.out.join(format!("{name}.{ext}"));
        let lpath = cfg.out.join(format!("{name}_labels.csv"));
        save_features(x, &fpath, format)?;
        save_labels(labels, &lpath)?;
        files.push(fpath);
        files.push(lpath);
        Ok(())
    };
    let mut query_rows = 0;
    if sc.holdout > 0.0 {
        let (train_idx, query_idx) = holdout_split(&labels, sc.holdout, cfg.train.seed)?;
        query_rows = query_idx.len();
        write("features", &x.select_rows(&train_idx)?, &labels.select(&train_idx))?;
        write("queries", &x.select_rows(&query_idx)?, &labels.select(&query_idx))?;
    } else {
        write("features", &x, &labels)?;
    }
    Ok(SynthSummary { rows: x.rows() - query_rows, dims: x.dims(), classes: sc.clusters, query_rows, files })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub rows: usize,
    pub dims: usize,
    pub bits: usize,
    pub alpha: f64,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub model: PathBuf,
    pub model_sha256: String,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let features = required(&cfg.features, "features")?;
    let x_raw = load_features_auto(features)?;
    let mode = cfg.query_mode.unwrap_or_default();
    let trained = fit_pipeline(&x_raw, &cfg.anchors, &cfg.train, mode, cfg.retain_training)?;
    create_out(&cfg.out)?;

    let model_bytes = trained.model.to_bytes();
    let model_digest = sha256_hex(&model_bytes);
    let model_path = cfg.out.join(MODEL_FILE);
    write_artifact(&model_path, &model_bytes, "train", cfg, None)?;
    write_artifact(&cfg.out.join(TRAIN_CODES_FILE), &trained.codes.encode(), "train", cfg, Some(&model_digest))?;
    let mut trace = Vec::new();
    trained.trace.write_csv(&mut trace, cfg.timing).expect("writing to memory");
    write_artifact(&cfg.out.join(TRACE_FILE), &trace, "train", cfg, Some(&model_digest))?;

    Ok(TrainSummary {
        rows: x_raw.rows(),
        dims: x_raw.dims(),
        bits: trained.model.bits(),
        alpha: trained.trace.alpha,
        iterations: trained.trace.len(),
        initial_loss: trained.trace.initial_loss,
        final_loss: trained.trace.final_loss(),
        model: model_path,
        model_sha256: model_digest,
    })
}

fn load_model(cfg: &RunConfig) -> Result<(HashModel, String)> {
    let path = required(&cfg.model, "model")?;
    let bytes = std::fs::read(path).map_err(|e| EshError::io(path, e))?;
    let mut model = HashModel::from_bytes(&bytes)?;
    if let Some(mode) = cfg.query_mode {
        model.set_query_mode(mode);
    }
    Ok((model, sha256_hex(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeSummary {
    pub rows: usize,
    pub bits: usize,
    pub query_mode: QueryMode,
    pub codes: PathBuf,
}

pub fn cmd_encode(cfg: &RunConfig) -> Result<EncodeSummary> {
    let (model, digest) = load_model(cfg)?;
    let x = load_features_auto(required(&cfg.features, "features")?)?;
    let codes = model.encode_queries(&x, model.query_mode())?;
    create_out(&cfg.out)?;
    let path = cfg.out.join(CODES_FILE);
    write_artifact(&path, &codes.encode(), "encode", cfg, Some(&digest))?;
    Ok(EncodeSummary { rows: codes.len(), bits: codes.bits(), query_mode: model.query_mode(), codes: path })
}

fn load_codes_checked(path: &Path, model_digest: Option<&str>) -> Result<(PackedCodes, Option<String>)> {
    let codes = PackedCodes::load(path)?;
    let manifest = read_manifest(path)?;
    if let Some(m) = &manifest {
        if m.sha256 != sha256_hex(&codes.encode()) {
            return Err(EshError::Mismatch(format!("{} does not match its manifest", path.display())));
        }
    }
    let source = manifest.and_then(|m| m.model_sha256);
    if let (Some(expected), Some(actual)) = (model_digest, source.as_deref()) {
        if expected != actual {
            return Err(EshError::Mismatch(format!("{} was encoded by a different model", path.display())));
        }
    }
    Ok((codes, source))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    pub neighbors: Vec<Neighbor>,
}

/// Encodes `features` with the model and ranks the database codes,
/// keeping the `top` nearest per query.
pub fn cmd_query(cfg: &RunConfig) -> Result<Vec<QueryResult>> {
    let (model, digest) = load_model(cfg)?;
    let (db, _) = load_codes_checked(required(&cfg.database, "database")?, Some(&digest))?;
    if db.bits() != model.bits() {
        return Err(EshError::Mismatch(format!("model has {} bits, database {}", model.bits(), db.bits())));
    }
    let x = load_features_auto(required(&cfg.features, "features")?)?;
    let codes = model.encode_queries(&x, model.query_mode())?;
    let results = (0..codes.len())
        .map(|q| {
            let mut ranking = rank_database(codes.code(q), &db, None)?;
            ranking.truncate(cfg.top);
            let neighbors = ranking.entries.iter().map(|&(id, distance)| Neighbor { id, distance }).collect();
            Ok(QueryResult { query: q, neighbors })
        })
        .collect::<Result<Vec<_>>>()?;
    create_out(&cfg.out)?;
    let json = serde_json::to_string_pretty(&results).expect("results serialize");
    write_artifact(&cfg.out.join(QUERY_FILE), (json + "\n").as_bytes(), "query", cfg, Some(&digest))?;
    Ok(results)
}

/// Scores query codes against database codes. Both code files must come
/// from the same model when their manifests say where they came from.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let (queries, q_model) = load_codes_checked(required(&cfg.codes, "codes")?, None)?;
    let (db, _) = load_codes_checked(required(&cfg.database, "database")?, q_model.as_deref())?;
    let query_labels = load_labels(required(&cfg.query_labels, "query-labels")?)?;
    let db_labels = load_labels(required(&cfg.labels, "labels")?)?;
    let report = evaluate(&queries, &db, &GroundTruth::new(query_labels, db_labels), &cfg.eval)?;
    create_out(&cfg.out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_artifact(&cfg.out.join(REPORT_FILE), (json + "\n").as_bytes(), "eval", cfg, q_model.as_deref())?;
    let pr_path = cfg.out.join(PR_FILE);
    let file = File::create(&pr_path).map_err(|e| EshError::io(&pr_path, e))?;
    let mut w = BufWriter::new(file);
    report
        .write_pr_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| EshError::io(&pr_path, e))?;
    Ok(report)
}

/// Key/value pairs printed by the CLI after a command.
pub fn summary_json<T: Serialize>(command: &str, value: &T) -> String {
    let mut map = BTreeMap::new();
    map.insert("command", serde_json::Value::from(command));
    map.insert("result", serde_json::to_value(value).expect("summary serializes"));
    serde_json::to_string(&map).expect("summary serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            out: dir.to_path_buf(),
            synth: SynthConfig { clusters: 4, per_cluster: 40, dims: 8, holdout: 0.25, ..Default::default() },
            train: TrainConfig { bits: 4, iterations: 20, ..Default::default() },
            anchors: AnchorParams { anchors: 20, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn config_overrides_and_hash() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train": {"bits": 8}, "anchors": {"anchors": 50}}"#).unwrap();
        assert_eq!(cfg.train.bits, 8);
        assert_eq!(cfg.train.iterations, 300);
        assert_eq!(cfg.anchors.anchors, 50);
        assert_eq!(cfg.anchors.neighbors, 3);
        let other = RunConfig { top: 3, ..cfg.clone() };
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash(), cfg.clone().hash());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_sits_next_to_artifact() {
        assert_eq!(manifest_path(Path::new("a/b/model.eshm")), Path::new("a/b/model.eshm.manifest.json"));
    }

    #[test]
    fn encode_of_train_set_matches_stored_codes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cmd_synth(&cfg).unwrap();
        cfg.features = Some(dir.path().join("features.csv"));
        cmd_train(&cfg).unwrap();
        let mut enc = cfg.clone();
        enc.model = Some(dir.path().join(MODEL_FILE));
        enc.query_mode = Some(QueryMode::Linear);
        enc.out = dir.path().join("enc");
        cmd_encode(&enc).unwrap();
        let stored = PackedCodes::load(&dir.path().join(TRAIN_CODES_FILE)).unwrap();
        let again = PackedCodes::load(&enc.out.join(CODES_FILE)).unwrap();
        assert_eq!(stored, again);
    }

    #[test]
    fn missing_inputs_fail_at_start() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: dir.path().to_path_buf(), ..Default::default() };
        assert!(matches!(cmd_train(&cfg), Err(EshError::InvalidArgument(_))));
        let cfg = RunConfig { features: Some(dir.path().join("nope.csv")), ..cfg };
        assert!(matches!(cmd_train(&cfg), Err(EshError::Io { .. })));
    }
}
