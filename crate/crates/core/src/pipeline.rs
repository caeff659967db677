//! Staged runs over one output directory.
//!
//! ```text
//! <output_dir>/
//!   manifest.json                  ingest
//!   datasets/<task>.jsonl          build-tasks
//!   requests/<provider>.tsv        requests (external providers)
//!   requests/<provider>.json
//!   providers/<provider>.json      encode
//!   probes/<provider>/<task>.probe train
//!   runs/<provider>/<task>.json    analyze
//!   report/report.json             report
//!   report/f1.tsv
//!   report/summary.txt
//! ```
//!
//! Every artifact records the run digest (see [`RunConfig::digest`]). A
//! stage reuses an existing artifact whose digest matches and refuses one
//! whose digest differs, so two runs never mix in one directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    build_report, f1_by_length_encoded, permutation_sensitivity_encoded, AnalysisError, AnalysisReport, RunMetadata,
    RunRecord,
};
use crate::config::{file_sha256, ConfigError, ProviderConfig, RunConfig};
use crate::corpus::{load_corpus, Corpus, CorpusError};
use crate::encoders::{
    build_bow_vocab, train_lda, BomEncoder, BowEncoder, BowVocabulary, EmbeddingProvider, EncodeError,
    ExternalProvider, LdaEncoder, LdaModel, ProviderKind, WordTable,
};
use crate::exec::Execution;
use crate::probe::{
    encode_instances, read_model, train_encoded, write_model, EncodedDataset, ProbeError, ProbeModel, TweetView,
};
use crate::taskgen::{
    build_task, collect_aux_requests, collect_permuted_requests, read_dataset, write_dataset, write_requests,
    TaskDataset, TaskError, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    BuildTasks,
    Requests,
    Encode,
    Train,
    Analyze,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::BuildTasks => "build-tasks",
            Stage::Requests => "requests",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        })
    }
}

fn list_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{provider}: {missing} text(s) lack vectors; supply them for the keys in {}", requests.display())]
    MissingVectors {
        provider: String,
        missing: usize,
        requests: PathBuf,
    },
    #[error("{} belongs to run {found}, this run is {expected}", path.display())]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("missing input(s): {}", list_paths(paths))]
    MissingInput { paths: Vec<PathBuf> },
    #[error("{}: {reason}", path.display())]
    BadArtifact { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
#[error("{stage}: {error}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub error: StageError,
}

fn probe_exit_code(e: &ProbeError) -> i32 {
    match e {
        ProbeError::NonFiniteLoss { .. } | ProbeError::NonFiniteValue(_) => 5,
        ProbeError::InvalidConfig(_) => 2,
        ProbeError::Encode(EncodeError::MissingKey { .. }) => 4,
        _ => 3,
    }
}

impl PipelineError {
    /// 2 config, 3 data, 4 missing external vectors, 5 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match &self.error {
            StageError::Config(_) | StageError::StaleArtifact { .. } => 2,
            StageError::MissingVectors { .. } | StageError::Encode(EncodeError::MissingKey { .. }) => 4,
            StageError::Probe(e) | StageError::Analysis(AnalysisError::Probe(e)) => probe_exit_code(e),
            StageError::Encode(EncodeError::InvalidParameter(_)) => 2,
            _ => 3,
        }
    }
}

trait At<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> At<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage, error: e.into() })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StageError + '_ {
    move |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file so readers never see a partial artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    let dir = path.parent().expect("artifact paths have a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("partial");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn bad(path: &Path, reason: impl fmt::Display) -> StageError {
    StageError::BadArtifact {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| bad(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts are plain data");
    s.push('\n');
    s.into_bytes()
}

/// Paths inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn dataset(&self, task: TaskKind) -> PathBuf {
        self.root.join("datasets").join(format!("{}.jsonl", task.slug()))
    }

    pub fn requests(&self, provider: &str) -> PathBuf {
        self.root.join("requests").join(format!("{provider}.tsv"))
    }

    pub fn requests_meta(&self, provider: &str) -> PathBuf {
        self.root.join("requests").join(format!("{provider}.json"))
    }

    pub fn provider(&self, provider: &str) -> PathBuf {
        self.root.join("providers").join(format!("{provider}.json"))
    }

    pub fn probe(&self, provider: &str, task: TaskKind) -> PathBuf {
        self.root
            .join("probes")
            .join(provider)
            .join(format!("{}.probe", task.slug()))
    }

    pub fn run_record(&self, provider: &str, task: TaskKind) -> PathBuf {
        self.root
            .join("runs")
            .join(provider)
            .join(format!("{}.json", task.slug()))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report").join("report.json")
    }

    pub fn report_tsv(&self) -> PathBuf {
        self.root.join("report").join("f1.tsv")
    }

    pub fn report_summary(&self) -> PathBuf {
        self.root.join("report").join("summary.txt")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub digest: String,
    pub corpus: PathBuf,
    pub corpus_sha256: String,
    pub tweets: usize,
    pub dropped_empty: usize,
    pub vocabulary: usize,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RequestsMeta {
    digest: String,
    provider: String,
    keys: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProviderArtifact {
    digest: String,
    name: String,
    kind: ProviderKind,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bow: Option<BowVocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lda: Option<LdaModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunArtifact {
    digest: String,
    record: RunRecord,
}

/// A provider ready to encode, possibly with per-task vector sets.
#[derive(Clone)]
pub struct LoadedProvider {
    pub config: ProviderConfig,
    default: Option<Arc<dyn EmbeddingProvider>>,
    per_task: BTreeMap<TaskKind, Arc<dyn EmbeddingProvider>>,
}

impl LoadedProvider {
    pub fn for_task(&self, task: TaskKind) -> Option<&dyn EmbeddingProvider> {
        self.per_task.get(&task).or(self.default.as_ref()).map(|p| p.as_ref())
    }
}

/// Drives the stages for one [`RunConfig`].
pub struct Pipeline {
    config: RunConfig,
    layout: Layout,
    corpus_sha256: String,
    digest: String,
    exec: Execution,
    corpus: OnceLock<Corpus>,
}

impl Pipeline {
    /// Validates the config and fingerprints the corpus. Nothing is written.
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate().at(Stage::Config)?;
        let corpus_sha256 = file_sha256(&config.corpus)
            .map_err(io_err(&config.corpus))
            .at(Stage::Config)?;
        let digest = config.digest(&corpus_sha256);
        Ok(Pipeline {
            layout: Layout::new(&config.output_dir),
            config,
            corpus_sha256,
            digest,
            exec: Execution::default(),
            corpus: OnceLock::new(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn corpus(&self, stage: Stage) -> Result<&Corpus, PipelineError> {
        if let Some(c) = self.corpus.get() {
            return Ok(c);
        }
        let c = load_corpus(&self.config.corpus).at(stage)?;
        Ok(self.corpus.get_or_init(|| c))
    }

    /// `Ok(true)` when `path` holds an artifact of this run, `Ok(false)` when
    /// absent, `StaleArtifact` when it belongs to another run.
    fn reusable(&self, path: &Path, found: Option<String>) -> Result<bool, StageError> {
        match found {
            Some(d) if d == self.digest => Ok(true),
            other => Err(StageError::StaleArtifact {
                path: path.to_path_buf(),
                expected: self.digest.clone(),
                found: other.unwrap_or_else(|| "<none>".into()),
            }),
        }
    }

    fn require(&self, paths: Vec<PathBuf>) -> Result<(), StageError> {
        let missing: Vec<PathBuf> = paths.into_iter().filter(|p| !p.exists()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(StageError::MissingInput { paths: missing })
        }
    }

    fn pairs(&self) -> Vec<(String, TaskKind)> {
        let mut names: Vec<&str> = self.config.providers.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names
            .iter()
            .flat_map(|n| {
                let mut tasks = self.config.tasks.clone();
                tasks.sort();
                tasks.into_iter().map(move |t| (n.to_string(), t))
            })
            .collect()
    }

    fn check_manifest(&self, stage: Stage) -> Result<(), PipelineError> {
        let path = self.layout.manifest();
        self.require(vec![path.clone()]).at(stage)?;
        let m: Manifest = read_json(&path).at(stage)?;
        self.reusable(&path, Some(m.digest)).at(stage)?;
        Ok(())
    }

    /// Loads and validates the corpus and writes the manifest.
    pub fn ingest(&self) -> Result<Manifest, PipelineError> {
        let stage = Stage::Ingest;
        let path = self.layout.manifest();
        if path.exists() {
            let m: Manifest = read_json(&path).at(stage)?;
            if self.reusable(&path, Some(m.digest.clone())).at(stage)? {
                return Ok(m);
            }
        }
        let corpus = self.corpus(stage)?;
        let manifest = Manifest {
            digest: self.digest.clone(),
            corpus: self.config.corpus.clone(),
            corpus_sha256: self.corpus_sha256.clone(),
            tweets: corpus.len(),
            dropped_empty: corpus.dropped_empty(),
            vocabulary: corpus.unigram_vocab().len(),
            config: self.config.clone(),
        };
        write_atomic(&path, &to_json(&manifest)).at(stage)?;
        log::info!(
            "ingested {} tweets ({} empty dropped)",
            manifest.tweets,
            manifest.dropped_empty
        );
        Ok(manifest)
    }

    fn read_dataset_file(&self, path: &Path) -> Result<(TaskDataset, Option<String>), StageError> {
        let f = File::open(path).map_err(io_err(path))?;
        Ok(read_dataset(BufReader::new(f))?)
    }

    /// Builds every configured task dataset.
    pub fn build_tasks(&self) -> Result<Vec<TaskDataset>, PipelineError> {
        let stage = Stage::BuildTasks;
        self.check_manifest(stage)?;
        let corpus = self.corpus(stage)?;
        let mut tasks = self.config.tasks.clone();
        tasks.sort();
        self.exec
            .try_map(&tasks, |&task| -> Result<TaskDataset, StageError> {
                let path = self.layout.dataset(task);
                if path.exists() {
                    let (ds, digest) = self.read_dataset_file(&path)?;
                    if self.reusable(&path, digest)? {
                        log::info!("reusing {}", path.display());
                        return Ok(ds);
                    }
                }
                let ds = build_task(corpus, task, &self.config.task_params, self.config.seed)?;
                let mut buf = Vec::new();
                write_dataset(&mut buf, &ds, Some(&self.digest))?;
                write_atomic(&path, &buf)?;
                log::info!(
                    "{task}: {} train / {} dev / {} test",
                    ds.train.len(),
                    ds.dev.len(),
                    ds.test.len()
                );
                Ok(ds)
            })
            .at(stage)
    }

    fn load_datasets(&self, stage: Stage) -> Result<Vec<TaskDataset>, PipelineError> {
        let mut tasks = self.config.tasks.clone();
        tasks.sort();
        self.require(tasks.iter().map(|&t| self.layout.dataset(t)).collect())
            .at(stage)?;
        tasks
            .iter()
            .map(|&t| {
                let path = self.layout.dataset(t);
                let (ds, digest) = self.read_dataset_file(&path)?;
                self.reusable(&path, digest)?;
                Ok(ds)
            })
            .collect::<Result<Vec<_>, StageError>>()
            .at(stage)
    }

    fn request_list(&self, datasets: &[TaskDataset], corpus: &Corpus) -> Vec<(String, String)> {
        let mut all = collect_aux_requests(datasets, corpus);
        all.extend(collect_permuted_requests(
            datasets,
            corpus,
            self.config.thresholds().permutation_seed,
        ));
        all.sort();
        all.dedup_by(|a, b| a.0 == b.0);
        all
    }

    /// Writes request lists for external providers. Returns their paths.
    pub fn requests(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let stage = Stage::Requests;
        self.check_manifest(stage)?;
        let datasets = self.load_datasets(stage)?;
        let corpus = self.corpus(stage)?;
        let mut written = Vec::new();
        let mut list = None;
        for pc in self
            .config
            .providers
            .iter()
            .filter(|p| p.kind == ProviderKind::External)
        {
            let path = self.layout.requests(&pc.name);
            let meta_path = self.layout.requests_meta(&pc.name);
            if meta_path.exists() && path.exists() {
                let meta: RequestsMeta = read_json(&meta_path).at(stage)?;
                if self.reusable(&meta_path, Some(meta.digest)).at(stage)? {
                    written.push(path);
                    continue;
                }
            }
            let list = list.get_or_insert_with(|| self.request_list(&datasets, corpus));
            let mut buf = Vec::new();
            write_requests(&mut buf, list).map_err(io_err(&path)).at(stage)?;
            write_atomic(&path, &buf).at(stage)?;
            let meta = RequestsMeta {
                digest: self.digest.clone(),
                provider: pc.name.clone(),
                keys: list.len(),
            };
            write_atomic(&meta_path, &to_json(&meta)).at(stage)?;
            log::info!("{}: {} requests in {}", pc.name, list.len(), path.display());
            written.push(path);
        }
        Ok(written)
    }

    fn fit_provider(
        &self,
        pc: &ProviderConfig,
        corpus: &Corpus,
        keys: &[String],
    ) -> Result<ProviderArtifact, StageError> {
        let mut art = ProviderArtifact {
            digest: self.digest.clone(),
            name: pc.name.clone(),
            kind: pc.kind,
            dim: 0,
            bow: None,
            lda: None,
        };
        match pc.kind {
            ProviderKind::Bow => {
                let vocab = build_bow_vocab(corpus, pc.max_terms(), pc.n_max())?;
                art.dim = vocab.len();
                art.bow = Some(vocab);
            }
            ProviderKind::Lda => {
                let cfg = pc.lda_config(self.config.seed);
                art.dim = cfg.topics;
                art.lda = Some(train_lda(corpus, &cfg)?);
            }
            ProviderKind::Bom => {
                let path = pc.vectors.as_ref().expect("validated");
                art.dim = WordTable::load(path)?.dim();
            }
            ProviderKind::External => {
                let requests = self.layout.requests(&pc.name);
                let mut files: BTreeMap<&Path, Vec<TaskKind>> = BTreeMap::new();
                for &t in &self.config.tasks {
                    files.entry(pc.vectors_for(t).expect("validated")).or_default().push(t);
                }
                let mut dim = None;
                for path in files.keys() {
                    if !path.is_file() {
                        log::warn!("{}: vector file {} not found", pc.name, path.display());
                        return Err(StageError::MissingVectors {
                            provider: pc.name.clone(),
                            missing: keys.len(),
                            requests,
                        });
                    }
                    let ext = ExternalProvider::from_vectors_file(&pc.name, path)?;
                    let missing = ext.missing_keys(keys.iter().map(String::as_str));
                    if !missing.is_empty() {
                        log::warn!(
                            "{}: {} lacks {} keys, e.g. {}",
                            pc.name,
                            path.display(),
                            missing.len(),
                            missing[0]
                        );
                        return Err(StageError::MissingVectors {
                            provider: pc.name.clone(),
                            missing: missing.len(),
                            requests,
                        });
                    }
                    match dim {
                        Some(d) if d != ext.dim() => {
                            return Err(EncodeError::InvalidParameter(format!(
                                "{}: vector files disagree on dimension ({d} vs {})",
                                pc.name,
                                ext.dim()
                            ))
                            .into())
                        }
                        _ => dim = Some(ext.dim()),
                    }
                }
                art.dim = dim.unwrap_or(0);
            }
        }
        Ok(art)
    }

    /// Fits built-in providers and checks external vectors cover every
    /// request. Missing vectors stop the run after request lists exist.
    pub fn encode(&self) -> Result<(), PipelineError> {
        let stage = Stage::Encode;
        self.check_manifest(stage)?;
        let has_external = self.config.providers.iter().any(|p| p.kind == ProviderKind::External);
        let keys: Vec<String> = if has_external {
            self.requests()?;
            let datasets = self.load_datasets(stage)?;
            let corpus = self.corpus(stage)?;
            self.request_list(&datasets, corpus)
                .into_iter()
                .map(|(k, _)| k)
                .collect()
        } else {
            Vec::new()
        };
        let corpus = self.corpus(stage)?;
        let mut providers: Vec<&ProviderConfig> = self.config.providers.iter().collect();
        providers.sort_by(|a, b| a.name.cmp(&b.name));
        self.exec
            .try_map(&providers, |pc| -> Result<(), StageError> {
                let path = self.layout.provider(&pc.name);
                if path.exists() {
                    let art: ProviderArtifact = read_json(&path)?;
                    if self.reusable(&path, Some(art.digest))? {
                        return Ok(());
                    }
                }
                let art = self.fit_provider(pc, corpus, &keys)?;
                write_atomic(&path, &to_json(&art))?;
                log::info!("{}: {} provider ready, dim {}", pc.name, pc.kind, art.dim);
                Ok(())
            })
            .at(stage)?;
        Ok(())
    }

    fn load_providers(&self, stage: Stage) -> Result<BTreeMap<String, LoadedProvider>, PipelineError> {
        let mut paths: Vec<PathBuf> = self
            .config
            .providers
            .iter()
            .map(|p| self.layout.provider(&p.name))
            .collect();
        paths.sort();
        self.require(paths).at(stage)?;
        let mut ext_cache: BTreeMap<PathBuf, Arc<dyn EmbeddingProvider>> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for pc in &self.config.providers {
            let path = self.layout.provider(&pc.name);
            let art: ProviderArtifact = read_json(&path).at(stage)?;
            self.reusable(&path, Some(art.digest.clone())).at(stage)?;
            let mut loaded = LoadedProvider {
                config: pc.clone(),
                default: None,
                per_task: BTreeMap::new(),
            };
            let single: Arc<dyn EmbeddingProvider> = match pc.kind {
                ProviderKind::Bow => {
                    let mut vocab = art.bow.ok_or_else(|| bad(&path, "missing bow vocabulary")).at(stage)?;
                    vocab.reindex();
                    Arc::new(BowEncoder::new(&pc.name, vocab))
                }
                ProviderKind::Lda => {
                    let mut model = art.lda.ok_or_else(|| bad(&path, "missing lda model")).at(stage)?;
                    model.prepare();
                    let cfg = pc.lda_config(self.config.seed);
                    Arc::new(LdaEncoder::new(&pc.name, model, cfg.infer_iterations, self.config.seed))
                }
                ProviderKind::Bom => {
                    let table = WordTable::load(pc.vectors.as_ref().expect("validated")).at(stage)?;
                    Arc::new(BomEncoder::new(&pc.name, table))
                }
                ProviderKind::External => {
                    for &t in &self.config.tasks {
                        let file = pc.vectors_for(t).expect("validated").to_path_buf();
                        let p = match ext_cache.get(&file) {
                            Some(p) => p.clone(),
                            None => {
                                let p: Arc<dyn EmbeddingProvider> =
                                    Arc::new(ExternalProvider::from_vectors_file(&pc.name, &file).at(stage)?);
                                ext_cache.insert(file, p.clone());
                                p
                            }
                        };
                        loaded.per_task.insert(t, p);
                    }
                    out.insert(pc.name.clone(), loaded);
                    continue;
                }
            };
            loaded.default = Some(single);
            out.insert(pc.name.clone(), loaded);
        }
        Ok(out)
    }

    fn read_probe(&self, path: &Path) -> Result<(ProbeModel, Option<String>), StageError> {
        let f = File::open(path).map_err(io_err(path))?;
        Ok(read_model(BufReader::new(f))?)
    }

    /// Trains one probe per (provider, task).
    pub fn train(&self) -> Result<Vec<ProbeModel>, PipelineError> {
        let stage = Stage::Train;
        self.check_manifest(stage)?;
        let datasets = self.load_datasets(stage)?;
        let providers = self.load_providers(stage)?;
        let corpus = self.corpus(stage)?;
        let cfg = self.config.train_config();
        let by_task: BTreeMap<TaskKind, &TaskDataset> = datasets.iter().map(|d| (d.kind, d)).collect();
        self.exec
            .try_map(&self.pairs(), |(name, task)| -> Result<ProbeModel, StageError> {
                let path = self.layout.probe(name, *task);
                if path.exists() {
                    let (model, digest) = self.read_probe(&path)?;
                    if self.reusable(&path, digest)? {
                        return Ok(model);
                    }
                }
                let provider = providers[name].for_task(*task).expect("loaded for every task");
                let ds = by_task[task];
                let encoded = EncodedDataset::encode(ds, provider, corpus, self.exec)?;
                let model = train_encoded(ds, provider, &encoded, &cfg)?;
                let mut buf = Vec::new();
                write_model(&mut buf, &model, Some(&self.digest))?;
                write_atomic(&path, &buf)?;
                log::info!("{name}/{task}: best epoch {}", model.log.best_epoch);
                Ok(model)
            })
            .at(stage)
    }

    /// Test metrics, length profile and permutation sensitivity per pair.
    pub fn analyze(&self) -> Result<Vec<RunRecord>, PipelineError> {
        let stage = Stage::Analyze;
        self.check_manifest(stage)?;
        let pairs = self.pairs();
        self.require(pairs.iter().map(|(n, t)| self.layout.probe(n, *t)).collect())
            .at(stage)?;
        let datasets = self.load_datasets(stage)?;
        let providers = self.load_providers(stage)?;
        let corpus = self.corpus(stage)?;
        let thresholds = self.config.thresholds();
        let by_task: BTreeMap<TaskKind, &TaskDataset> = datasets.iter().map(|d| (d.kind, d)).collect();
        self.exec
            .try_map(&pairs, |(name, task)| -> Result<RunRecord, StageError> {
                let path = self.layout.run_record(name, *task);
                if path.exists() {
                    let art: RunArtifact = read_json(&path)?;
                    if self.reusable(&path, Some(art.digest))? {
                        return Ok(art.record);
                    }
                }
                let probe_path = self.layout.probe(name, *task);
                let (model, digest) = self.read_probe(&probe_path)?;
                self.reusable(&probe_path, digest)?;
                let loaded = &providers[name];
                let provider = loaded.for_task(*task).expect("loaded for every task");
                let test = &by_task[task].test;
                let features = encode_instances(test, provider, corpus, TweetView::Original, self.exec)?;
                let metrics = model.evaluate(&features, self.exec)?;
                let length = f1_by_length_encoded(&model, test, &features, corpus, &thresholds, self.exec)?;
                let sensitivity =
                    permutation_sensitivity_encoded(&model, test, &features, provider, corpus, &thresholds, self.exec)?;
                let record = RunRecord {
                    provider: name.clone(),
                    supervised: loaded.config.supervised,
                    task: *task,
                    metrics,
                    length,
                    sensitivity,
                };
                let art = RunArtifact {
                    digest: self.digest.clone(),
                    record,
                };
                write_atomic(&path, &to_json(&art))?;
                Ok(art.record)
            })
            .at(stage)
    }

    /// Assembles the report from the per-pair records and writes its three
    /// renderings.
    pub fn report(&self) -> Result<AnalysisReport, PipelineError> {
        let stage = Stage::Report;
        self.check_manifest(stage)?;
        let pairs = self.pairs();
        self.require(pairs.iter().map(|(n, t)| self.layout.run_record(n, *t)).collect())
            .at(stage)?;
        let records = pairs
            .iter()
            .map(|(n, t)| {
                let path = self.layout.run_record(n, *t);
                let art: RunArtifact = read_json(&path)?;
                self.reusable(&path, Some(art.digest))?;
                Ok(art.record)
            })
            .collect::<Result<Vec<_>, StageError>>()
            .at(stage)?;
        let metadata = RunMetadata {
            seed: self.config.seed,
            config_digest: self.digest.clone(),
            corpus_digest: self.corpus_sha256.clone(),
            thresholds: self.config.thresholds(),
        };
        let report = build_report(records, metadata).at(stage)?;
        let json_path = self.layout.report_json();
        if json_path.exists() {
            let old: AnalysisReport = read_json(&json_path).at(stage)?;
            self.reusable(&json_path, Some(old.metadata.config_digest)).at(stage)?;
        }
        write_atomic(&json_path, report.to_json().as_bytes()).at(stage)?;
        write_atomic(&self.layout.report_tsv(), report.f1_tsv().as_bytes()).at(stage)?;
        write_atomic(&self.layout.report_summary(), report.summary().as_bytes()).at(stage)?;
        Ok(report)
    }

    /// Every stage in order.
    pub fn run(&self) -> Result<AnalysisReport, PipelineError> {
        self.ingest()?;
        self.build_tasks()?;
        self.requests()?;
        self.encode()?;
        self.train()?;
        self.analyze()?;
        self.report()
    }
}

/// Validates `config` and runs every stage.
pub fn run_pipeline(config: RunConfig) -> Result<AnalysisReport, PipelineError> {
    Pipeline::new(config)?.run()
}
