//! Run configuration, read from TOML.
//!
//! ```toml
//! corpus = "tweets.jsonl"
//! output_dir = "out"
//! seed = 42
//! tasks = ["length", "content"]        # default: all eight
//!
//! [task_params]
//! length_bin_size = 4
//!
//! [probe]
//! learning_rate = 0.01
//!
//! [analysis]
//! min_bin_count = 50
//!
//! [[providers]]
//! name = "bow"
//! kind = "bow"
//!
//! [[providers]]
//! name = "cnn"
//! kind = "external"
//! supervised = true
//! vectors = "cnn.vec"
//! task_vectors = { content = "cnn-content.vec" }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! The global `seed` drives task generation, probe batch order and the
//! permutation analysis; `seed` keys inside `[probe]` and `[analysis]` are
//! replaced by it.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Thresholds;
use crate::encoders::bow::{DEFAULT_MAX_TERMS, DEFAULT_N_MAX};
use crate::encoders::{LdaConfig, ProviderKind};
use crate::probe::TrainConfig;
use crate::taskgen::{TaskKind, TaskParams};
use crate::util::sha256_hex;

pub const ENV_OUTPUT_DIR: &str = "TWEETPROBE_OUTPUT_DIR";
pub const ENV_THREADS: &str = "TWEETPROBE_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    /// Whether the representation was trained with task supervision.
    #[serde(default)]
    pub supervised: bool,
    /// Word vectors (bom) or precomputed text vectors (external).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
    /// Per-task vector files for external providers, replacing `vectors`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub task_vectors: BTreeMap<TaskKind, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_terms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lda: Option<LdaConfig>,
}

impl ProviderConfig {
    pub fn builtin(name: &str, kind: ProviderKind) -> Self {
        ProviderConfig {
            name: name.to_string(),
            kind,
            supervised: false,
            vectors: None,
            task_vectors: BTreeMap::new(),
            max_terms: None,
            n_max: None,
            lda: None,
        }
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms.unwrap_or(DEFAULT_MAX_TERMS)
    }

    pub fn n_max(&self) -> usize {
        self.n_max.unwrap_or(DEFAULT_N_MAX)
    }

    pub fn lda_config(&self, seed: u64) -> LdaConfig {
        LdaConfig {
            seed,
            ..self.lda.clone().unwrap_or_default()
        }
    }

    /// Vector file serving `task`, for external providers.
    pub fn vectors_for(&self, task: TaskKind) -> Option<&Path> {
        self.task_vectors
            .get(&task)
            .or(self.vectors.as_ref())
            .map(PathBuf::as_path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "all_tasks")]
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub task_params: TaskParams,
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub probe: TrainConfig,
    #[serde(default)]
    pub analysis: Thresholds,
    /// Worker threads; `None` lets rayon decide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn all_tasks() -> Vec<TaskKind> {
    TaskKind::ALL.to_vec()
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, providers: Vec<ProviderConfig>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            output_dir: output_dir.into(),
            seed: 0,
            tasks: all_tasks(),
            task_params: TaskParams::default(),
            providers,
            probe: TrainConfig::default(),
            analysis: Thresholds::default(),
            threads: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is plain data")
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.output_dir);
        for p in &mut self.providers {
            if let Some(v) = &mut p.vectors {
                resolve(base, v);
            }
            for v in p.task_vectors.values_mut() {
                resolve(base, v);
            }
        }
    }

    /// Applies `TWEETPROBE_OUTPUT_DIR` and `TWEETPROBE_THREADS` through
    /// `lookup` (normally `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(dir) = lookup(ENV_OUTPUT_DIR).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(n) = lookup(ENV_THREADS).filter(|n| !n.is_empty()) {
            let n: usize = n
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{ENV_THREADS}={n} is not a thread count")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    /// The probe settings actually used, with the global seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.probe.clone()
        }
    }

    /// The analysis settings actually used, with the global seed applied.
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            permutation_seed: self.seed,
            ..self.analysis.clone()
        }
    }

    pub fn provider(&self, name: &str) -> Option<&ProviderConfig> {
        self.providers.iter().find(|p| p.name == name)
    }

    /// Checks everything that can be checked without reading the corpus.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !self.corpus.is_file() {
            return invalid(format!("corpus {} does not exist", self.corpus.display()));
        }
        if self.tasks.is_empty() {
            return invalid("no tasks selected".into());
        }
        let mut seen_tasks = HashSet::new();
        if let Some(t) = self.tasks.iter().find(|t| !seen_tasks.insert(**t)) {
            return invalid(format!("task {t} listed twice"));
        }
        if self.providers.is_empty() {
            return invalid("no providers configured".into());
        }
        if self.threads == Some(0) {
            return invalid("threads must be positive".into());
        }
        let p = &self.task_params;
        let positive = |x: f64| x > 0.0;
        if p.length_bin_size == 0 || !positive(p.reply_bin_size) || !positive(p.reply_max_minutes) {
            return invalid(format!("bad task params {p:?}"));
        }
        self.probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.analysis.validate().map_err(ConfigError::Invalid)?;

        let mut names = HashSet::new();
        for pc in &self.providers {
            let name = &pc.name;
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return invalid(format!("provider name {name:?} must be non-empty [A-Za-z0-9_-]"));
            }
            if !names.insert(name.as_str()) {
                return invalid(format!("provider name {name} used twice"));
            }
            let has_bow_keys = pc.max_terms.is_some() || pc.n_max.is_some();
            match pc.kind {
                ProviderKind::Bow => {
                    if pc.vectors.is_some() || !pc.task_vectors.is_empty() || pc.lda.is_some() {
                        return invalid(format!("{name}: bow takes only max_terms and n_max"));
                    }
                    if pc.max_terms() == 0 || !(1..=crate::corpus::MAX_NGRAM).contains(&pc.n_max()) {
                        return invalid(format!("{name}: need max_terms > 0 and 1 <= n_max <= 5"));
                    }
                }
                ProviderKind::Bom => {
                    if has_bow_keys || pc.lda.is_some() || !pc.task_vectors.is_empty() {
                        return invalid(format!("{name}: bom takes only `vectors`"));
                    }
                    match &pc.vectors {
                        Some(v) if v.is_file() => {}
                        Some(v) => return invalid(format!("{name}: word vectors {} do not exist", v.display())),
                        None => return invalid(format!("{name}: bom needs `vectors`")),
                    }
                }
                ProviderKind::Lda => {
                    if has_bow_keys || pc.vectors.is_some() || !pc.task_vectors.is_empty() {
                        return invalid(format!("{name}: lda takes only an `lda` table"));
                    }
                    pc.lda_config(self.seed)
                        .validate()
                        .map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
                }
                ProviderKind::External => {
                    if has_bow_keys || pc.lda.is_some() {
                        return invalid(format!("{name}: external takes `vectors` and `task_vectors`"));
                    }
                    // vector files may legitimately be missing: the run then
                    // stops after writing request lists
                    if pc.vectors.is_none() && pc.task_vectors.is_empty() {
                        return invalid(format!("{name}: external needs `vectors` or `task_vectors`"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fingerprint of every setting that affects results, combined with the
    /// corpus contents. The corpus path, output directory and thread count
    /// are excluded.
    pub fn digest(&self, corpus_sha256: &str) -> String {
        let mut canonical = self.clone();
        canonical.corpus = PathBuf::new();
        canonical.output_dir = PathBuf::new();
        canonical.threads = None;
        let json = serde_json::to_string(&canonical).expect("config is plain data");
        sha256_hex(format!("{json}\n{corpus_sha256}").as_bytes())[..32].to_string()
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
