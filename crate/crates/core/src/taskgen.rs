//! Elementary property-prediction datasets.
//!
//! Each [`TaskKind`] turns the corpus into labelled [`TaskInstance`]s. Binary
//! tasks pair every positive with one negative drawn by a task-specific
//! sampler; Length and ReplyTime bin a per-tweet quantity into classes.
//! Splits are made by tweet id so no tweet leaks between train and test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Span, Tweet};
use crate::encoders::{permute_tokens, permuted_key};
use crate::util::{derive_seed, sha256_hex};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid bin size {0}")]
    InvalidBinSize(f64),
    #[error("invalid value {0}")]
    InvalidValue(f64),
    #[error("no negative candidate")]
    NoNegativeCandidate,
    #[error("{kind}: only {eligible} eligible tweets, need at least {required}")]
    InsufficientData {
        kind: TaskKind,
        eligible: usize,
        required: usize,
    },
    #[error("{kind}: corpus carries no {what} annotations")]
    MissingAnnotation { kind: TaskKind, what: &'static str },
    #[error("dataset line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Length,
    Content,
    WordOrder,
    Slang,
    Hashtag,
    NamedEntity,
    IsReply,
    ReplyTime,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Length,
        TaskKind::Content,
        TaskKind::WordOrder,
        TaskKind::Slang,
        TaskKind::Hashtag,
        TaskKind::NamedEntity,
        TaskKind::IsReply,
        TaskKind::ReplyTime,
    ];

    /// Number of auxiliary inputs (words or n-grams) besides the tweet.
    pub fn arity(self) -> usize {
        match self {
            TaskKind::Length | TaskKind::IsReply | TaskKind::ReplyTime => 0,
            TaskKind::Content | TaskKind::Hashtag | TaskKind::NamedEntity => 1,
            TaskKind::WordOrder | TaskKind::Slang => 2,
        }
    }

    pub fn is_binary(self) -> bool {
        !matches!(self, TaskKind::Length | TaskKind::ReplyTime)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Identifier used in file names and configs.
    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::Length => "length",
            TaskKind::Content => "content",
            TaskKind::WordOrder => "word_order",
            TaskKind::Slang => "slang",
            TaskKind::Hashtag => "hashtag",
            TaskKind::NamedEntity => "named_entity",
            TaskKind::IsReply => "is_reply",
            TaskKind::ReplyTime => "reply_time",
        }
    }

    /// Human-readable name as used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            TaskKind::Length => "Length",
            TaskKind::Content => "Content",
            TaskKind::WordOrder => "Word Order",
            TaskKind::Slang => "Slang Words",
            TaskKind::Hashtag => "Hashtag",
            TaskKind::NamedEntity => "NE",
            TaskKind::IsReply => "Is Reply",
            TaskKind::ReplyTime => "Reply Time",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.slug() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Positive,
    NegativeSampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub tweet_id: String,
    /// Auxiliary words or n-grams, space-joined, in probe input order.
    pub aux_texts: Vec<String>,
    pub label: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    pub length_bin_size: usize,
    pub reply_bin_size: f64,
    pub reply_max_minutes: f64,
    /// Minimum eligible tweets before a task is built.
    pub min_instances: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            length_bin_size: 4,
            reply_bin_size: 2.0,
            reply_max_minutes: 20.0,
            min_instances: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub kind: TaskKind,
    pub class_count: usize,
    pub class_labels: Vec<String>,
    pub train: Vec<TaskInstance>,
    pub dev: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
    pub generation_seed: u64,
    pub params: TaskParams,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[TaskInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &TaskInstance)> {
        [Split::Train, Split::Dev, Split::Test]
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |i| (s, i)))
    }
}

/// Length class: `floor((length - 1) / bin_size)`, so the first class is 1..=bin_size.
pub fn bin_length(length: usize, bin_size: usize) -> Result<usize, TaskError> {
    if bin_size == 0 {
        return Err(TaskError::InvalidBinSize(0.0));
    }
    if length == 0 {
        return Err(TaskError::InvalidValue(0.0));
    }
    Ok((length - 1) / bin_size)
}

fn check_real_bin(bin_size: f64, max_minutes: f64) -> Result<(), TaskError> {
    if !(bin_size.is_finite() && bin_size > 0.0) {
        return Err(TaskError::InvalidBinSize(bin_size));
    }
    if !(max_minutes.is_finite() && max_minutes > 0.0) {
        return Err(TaskError::InvalidBinSize(max_minutes));
    }
    Ok(())
}

/// Index of the overflow class: the number of regular bins below `max_minutes`.
pub fn reply_overflow_class(bin_size: f64, max_minutes: f64) -> Result<usize, TaskError> {
    check_real_bin(bin_size, max_minutes)?;
    let mut c = (max_minutes / bin_size).ceil() as usize;
    while (c as f64) * bin_size < max_minutes {
        c += 1;
    }
    while c > 0 && ((c - 1) as f64) * bin_size >= max_minutes {
        c -= 1;
    }
    Ok(c)
}

/// Reply-time class: `floor(minutes / bin_size)` below the cap, the overflow
/// class at or above it.
pub fn bin_reply_time(minutes: f64, bin_size: f64, max_minutes: f64) -> Result<usize, TaskError> {
    let overflow = reply_overflow_class(bin_size, max_minutes)?;
    if !(minutes.is_finite() && minutes >= 0.0) {
        return Err(TaskError::InvalidValue(minutes));
    }
    if minutes >= max_minutes {
        return Ok(overflow);
    }
    // floor division, corrected so the class agrees with c * bin <= m < (c+1) * bin
    let mut c = (minutes / bin_size).floor() as usize;
    while ((c + 1) as f64) * bin_size <= minutes {
        c += 1;
    }
    while c > 0 && (c as f64) * bin_size > minutes {
        c -= 1;
    }
    Ok(c.min(overflow.saturating_sub(1)))
}

/// Uniform word of `vocab` (sorted, deduplicated) that does not occur in the tweet.
pub fn sample_content_negative<R: Rng + ?Sized>(
    tweet: &Tweet,
    vocab: &[String],
    rng: &mut R,
) -> Result<String, TaskError> {
    let present: BTreeSet<&String> = tweet.tokens.iter().filter(|t| vocab.binary_search(t).is_ok()).collect();
    if present.len() >= vocab.len() {
        return Err(TaskError::NoNegativeCandidate);
    }
    // rejection sampling is exactly uniform over the candidates
    loop {
        let w = &vocab[rng.random_range(0..vocab.len())];
        if !present.contains(w) {
            return Ok(w.clone());
        }
    }
}

/// Positions `(i, j)`, `i < j`, of two distinct tokens that each occur once in
/// the tweet, chosen uniformly over all such pairs.
pub fn sample_order_positions<R: Rng + ?Sized>(tweet: &Tweet, rng: &mut R) -> Option<(usize, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tweet.tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let unique: Vec<usize> = (0..tweet.tokens.len())
        .filter(|&i| counts[tweet.tokens[i].as_str()] == 1)
        .collect();
    let m = unique.len();
    if m < 2 {
        return None;
    }
    let a = rng.random_range(0..m);
    let mut b = rng.random_range(0..m - 1);
    if b >= a {
        b += 1;
    }
    Some((unique[a.min(b)], unique[a.max(b)]))
}

/// `(w1, w2)` with `w1` appearing before `w2`; the flipped pair is the negative.
pub fn sample_order_pair<R: Rng + ?Sized>(tweet: &Tweet, rng: &mut R) -> Option<(String, String)> {
    sample_order_positions(tweet, rng).map(|(i, j)| (tweet.tokens[i].clone(), tweet.tokens[j].clone()))
}

fn strip_hash(token: &str) -> &str {
    token.strip_prefix('#').unwrap_or(token)
}

/// Uniform hashtag of the tweet with the `#` removed.
pub fn sample_hashtag_positive<R: Rng + ?Sized>(tweet: &Tweet, rng: &mut R) -> Option<String> {
    if tweet.hashtag_indices.is_empty() {
        return None;
    }
    let pos = tweet.hashtag_indices[rng.random_range(0..tweet.hashtag_indices.len())];
    Some(strip_hash(&tweet.tokens[pos]).to_string())
}

/// Position of a uniform non-hashtag token. Tokens spelled like one of the
/// tweet's stripped hashtags are excluded, since they would render to the
/// same auxiliary text as a positive.
pub fn sample_hashtag_negative_position<R: Rng + ?Sized>(tweet: &Tweet, rng: &mut R) -> Result<usize, TaskError> {
    let tags: BTreeSet<&str> = tweet
        .hashtag_indices
        .iter()
        .map(|&i| strip_hash(&tweet.tokens[i]))
        .collect();
    let candidates: Vec<usize> = (0..tweet.tokens.len())
        .filter(|&i| !tweet.is_hashtag(i) && !tags.contains(tweet.tokens[i].as_str()))
        .collect();
    if candidates.is_empty() {
        return Err(TaskError::NoNegativeCandidate);
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

pub fn sample_hashtag_negative<R: Rng + ?Sized>(tweet: &Tweet, rng: &mut R) -> Result<String, TaskError> {
    sample_hashtag_negative_position(tweet, rng).map(|i| tweet.tokens[i].clone())
}

/// Uniform window of `span_len` tokens overlapping no named-entity span.
pub fn sample_ne_negative<R: Rng + ?Sized>(tweet: &Tweet, span_len: usize, rng: &mut R) -> Result<Span, TaskError> {
    if span_len == 0 || span_len > tweet.tokens.len() {
        return Err(TaskError::NoNegativeCandidate);
    }
    let candidates: Vec<Span> = (0..=tweet.tokens.len() - span_len)
        .map(|s| Span::new(s, s + span_len))
        .filter(|w| tweet.ne_spans.iter().all(|ne| !ne.overlaps(w)))
        .collect();
    if candidates.is_empty() {
        return Err(TaskError::NoNegativeCandidate);
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Uniform n-gram of `pool` (sorted, deduplicated) other than `gold`.
pub fn sample_slang_negative<R: Rng + ?Sized>(pool: &[String], gold: &str, rng: &mut R) -> Result<String, TaskError> {
    match pool.binary_search_by(|p| p.as_str().cmp(gold)) {
        Ok(g) => {
            if pool.len() < 2 {
                return Err(TaskError::NoNegativeCandidate);
            }
            let mut r = rng.random_range(0..pool.len() - 1);
            if r >= g {
                r += 1;
            }
            Ok(pool[r].clone())
        }
        Err(_) if pool.is_empty() => Err(TaskError::NoNegativeCandidate),
        Err(_) => Ok(pool[rng.random_range(0..pool.len())].clone()),
    }
}

/// Canonical form of a slang standard: tokenized and space-joined.
pub fn normalize_standard(standard: &str) -> String {
    crate::corpus::tokenize(standard).join(" ")
}

/// Stable request key for an auxiliary text.
pub fn aux_key(text: &str) -> String {
    format!("aux:{}", &sha256_hex(text.as_bytes())[..16])
}

/// Instances contributed by one tweet, plus the stratum used when splitting.
struct Unit {
    pos: usize,
    stratum: usize,
    instances: Vec<TaskInstance>,
}

fn binary_pair(id: &str, pos_aux: Vec<String>, neg_aux: Vec<String>) -> Vec<TaskInstance> {
    vec![
        TaskInstance {
            tweet_id: id.to_string(),
            aux_texts: pos_aux,
            label: 1,
            provenance: Provenance::Positive,
        },
        TaskInstance {
            tweet_id: id.to_string(),
            aux_texts: neg_aux,
            label: 0,
            provenance: Provenance::NegativeSampled,
        },
    ]
}

fn single(id: &str, label: usize, provenance: Provenance) -> Vec<TaskInstance> {
    vec![TaskInstance {
        tweet_id: id.to_string(),
        aux_texts: Vec::new(),
        label,
        provenance,
    }]
}

fn binary_labels() -> Vec<String> {
    vec!["no".to_string(), "yes".to_string()]
}

fn require(corpus: &Corpus, kind: TaskKind, what: &'static str, has: impl Fn(&Tweet) -> bool) -> Result<(), TaskError> {
    if corpus.tweets().iter().any(has) {
        Ok(())
    } else {
        Err(TaskError::MissingAnnotation { kind, what })
    }
}

/// Builds the dataset for `kind`. A pure function of its arguments.
pub fn build_task(corpus: &Corpus, kind: TaskKind, params: &TaskParams, seed: u64) -> Result<TaskDataset, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, kind.index() as u64));
    let tweets = corpus.tweets();
    let mut units: Vec<Unit> = Vec::new();
    let unit = |pos: usize, instances| Unit {
        pos,
        stratum: 0,
        instances,
    };

    let (class_count, class_labels) = match kind {
        TaskKind::Length => {
            let size = params.length_bin_size;
            let mut max_bin = 0;
            for (pos, t) in tweets.iter().enumerate() {
                let bin = bin_length(t.tokens.len(), size)?;
                max_bin = max_bin.max(bin);
                units.push(unit(pos, single(&t.id, bin, Provenance::Positive)));
            }
            let labels = (0..=max_bin)
                .map(|b| format!("{}-{}", b * size + 1, (b + 1) * size))
                .collect();
            (max_bin + 1, labels)
        }
        TaskKind::ReplyTime => {
            require(corpus, kind, "first_reply_minutes", |t| t.first_reply_minutes.is_some())?;
            let (size, cap) = (params.reply_bin_size, params.reply_max_minutes);
            let overflow = reply_overflow_class(size, cap)?;
            for (pos, t) in tweets.iter().enumerate() {
                if let Some(m) = t.first_reply_minutes {
                    let class = bin_reply_time(m, size, cap)?;
                    units.push(unit(pos, single(&t.id, class, Provenance::Positive)));
                }
            }
            let mut labels: Vec<String> = (0..overflow)
                .map(|c| format!("[{},{})", c as f64 * size, (c + 1) as f64 * size))
                .collect();
            labels.push(format!(">={cap}"));
            (overflow + 1, labels)
        }
        TaskKind::Content => {
            let vocab = corpus.unigram_vocab();
            for (pos, t) in tweets.iter().enumerate() {
                let positive = t.tokens[rng.random_range(0..t.tokens.len())].clone();
                match sample_content_negative(t, &vocab, &mut rng) {
                    Ok(neg) => units.push(unit(pos, binary_pair(&t.id, vec![positive], vec![neg]))),
                    Err(TaskError::NoNegativeCandidate) => continue,
                    Err(e) => return Err(e),
                }
            }
            (2, binary_labels())
        }
        TaskKind::WordOrder => {
            for (pos, t) in tweets.iter().enumerate() {
                if let Some((w1, w2)) = sample_order_pair(t, &mut rng) {
                    let pair = binary_pair(&t.id, vec![w1.clone(), w2.clone()], vec![w2, w1]);
                    units.push(unit(pos, pair));
                }
            }
            (2, binary_labels())
        }
        TaskKind::Slang => {
            require(corpus, kind, "slang", |t| !t.slang_pairs.is_empty())?;
            let pools: Vec<Vec<String>> = (1..=crate::corpus::MAX_NGRAM).map(|n| corpus.ngram_pool(n)).collect();
            for (pos, t) in tweets.iter().enumerate() {
                if t.slang_pairs.is_empty() {
                    continue;
                }
                let pair = &t.slang_pairs[rng.random_range(0..t.slang_pairs.len())];
                let source = t.span_text(pair.span);
                let gold = normalize_standard(&pair.standard);
                let n = gold.split(' ').count();
                let Some(pool) = pools.get(n - 1) else { continue };
                match sample_slang_negative(pool, &gold, &mut rng) {
                    Ok(neg) => units.push(unit(
                        pos,
                        binary_pair(&t.id, vec![source.clone(), gold], vec![source, neg]),
                    )),
                    Err(TaskError::NoNegativeCandidate) => continue,
                    Err(e) => return Err(e),
                }
            }
            (2, binary_labels())
        }
        TaskKind::Hashtag => {
            require(corpus, kind, "hashtag", |t| !t.hashtag_indices.is_empty())?;
            for (pos, t) in tweets.iter().enumerate() {
                let Some(positive) = sample_hashtag_positive(t, &mut rng) else {
                    continue;
                };
                match sample_hashtag_negative(t, &mut rng) {
                    Ok(neg) => units.push(unit(pos, binary_pair(&t.id, vec![positive], vec![neg]))),
                    Err(TaskError::NoNegativeCandidate) => continue,
                    Err(e) => return Err(e),
                }
            }
            (2, binary_labels())
        }
        TaskKind::NamedEntity => {
            require(corpus, kind, "ne_spans", |t| !t.ne_spans.is_empty())?;
            for (pos, t) in tweets.iter().enumerate() {
                if t.ne_spans.is_empty() {
                    continue;
                }
                let ne = t.ne_spans[rng.random_range(0..t.ne_spans.len())];
                match sample_ne_negative(t, ne.len(), &mut rng) {
                    Ok(neg) => units.push(unit(
                        pos,
                        binary_pair(&t.id, vec![t.span_text(ne)], vec![t.span_text(neg)]),
                    )),
                    Err(TaskError::NoNegativeCandidate) => continue,
                    Err(e) => return Err(e),
                }
            }
            (2, binary_labels())
        }
        TaskKind::IsReply => {
            require(corpus, kind, "reply_to", |t| t.reply_to.is_some())?;
            let mut replies: Vec<usize> = (0..tweets.len()).filter(|&p| tweets[p].reply_to.is_some()).collect();
            let mut starters: Vec<usize> = (0..tweets.len())
                .filter(|&p| corpus.is_conversation_starter(p))
                .collect();
            let n = replies.len().min(starters.len());
            // downsample the larger side uniformly, then restore corpus order
            for side in [&mut replies, &mut starters] {
                if side.len() > n {
                    let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, side.len(), n)
                        .into_iter()
                        .map(|i| side[i])
                        .collect();
                    keep.sort_unstable();
                    *side = keep;
                }
            }
            for &p in &replies {
                units.push(Unit {
                    pos: p,
                    stratum: 1,
                    instances: single(&tweets[p].id, 1, Provenance::Positive),
                });
            }
            for &p in &starters {
                units.push(Unit {
                    pos: p,
                    stratum: 0,
                    instances: single(&tweets[p].id, 0, Provenance::NegativeSampled),
                });
            }
            (2, binary_labels())
        }
    };

    if units.len() < params.min_instances || units.is_empty() {
        return Err(TaskError::InsufficientData {
            kind,
            eligible: units.len(),
            required: params.min_instances.max(1),
        });
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x100 + kind.index() as u64));
    let (train, dev, test) = split_units(units, &mut split_rng);
    Ok(TaskDataset {
        kind,
        class_count,
        class_labels,
        train,
        dev,
        test,
        generation_seed: seed,
        params: params.clone(),
    })
}

/// 70/10/20 split by tweet, stratified by `Unit::stratum`. Each split keeps
/// corpus order.
fn split_units<R: Rng>(units: Vec<Unit>, rng: &mut R) -> (Vec<TaskInstance>, Vec<TaskInstance>, Vec<TaskInstance>) {
    let mut strata: BTreeMap<usize, Vec<Unit>> = BTreeMap::new();
    for u in units {
        strata.entry(u.stratum).or_default().push(u);
    }
    let mut assigned: Vec<(Split, usize, usize, Vec<TaskInstance>)> = Vec::new();
    for (stratum, mut group) in strata {
        group.sort_by_key(|u| u.pos);
        group.shuffle(rng);
        let n = group.len();
        let n_train = n * 7 / 10;
        let n_dev = n / 10;
        for (i, u) in group.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
            assigned.push((split, u.pos, stratum, u.instances));
        }
    }
    assigned.sort_by_key(|(split, pos, stratum, _)| (*split, *pos, *stratum));
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (split, _, _, instances) in assigned {
        match split {
            Split::Train => train.extend(instances),
            Split::Dev => dev.extend(instances),
            Split::Test => test.extend(instances),
        }
    }
    (train, dev, test)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    kind: TaskKind,
    class_count: usize,
    class_labels: Vec<String>,
    seed: u64,
    params: TaskParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digest: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    kind: TaskKind,
    split: Split,
    tweet_id: String,
    aux_keys: Vec<String>,
    aux_texts: Vec<String>,
    label: usize,
    provenance: Provenance,
}

/// Writes the dataset as a JSON header line followed by one record per
/// instance, train then dev then test.
pub fn write_dataset<W: Write>(mut out: W, ds: &TaskDataset, digest: Option<&str>) -> Result<(), TaskError> {
    let header = DatasetHeader {
        kind: ds.kind,
        class_count: ds.class_count,
        class_labels: ds.class_labels.clone(),
        seed: ds.generation_seed,
        params: ds.params.clone(),
        digest: digest.map(str::to_string),
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string(&header).map_err(std::io::Error::other)?
    )?;
    for (split, inst) in ds.iter() {
        let rec = InstanceRecord {
            kind: ds.kind,
            split,
            tweet_id: inst.tweet_id.clone(),
            aux_keys: inst.aux_texts.iter().map(|t| aux_key(t)).collect(),
            aux_texts: inst.aux_texts.clone(),
            label: inst.label,
            provenance: inst.provenance,
        };
        writeln!(out, "{}", serde_json::to_string(&rec).map_err(std::io::Error::other)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], returning its digest if any.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<(TaskDataset, Option<String>), TaskError> {
    let mut lines = reader.lines().enumerate();
    let malformed = |line: usize, reason: String| TaskError::Malformed { line, reason };
    let (_, first) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
    let header: DatasetHeader = serde_json::from_str(&first?).map_err(|e| malformed(1, e.to_string()))?;
    let mut ds = TaskDataset {
        kind: header.kind,
        class_count: header.class_count,
        class_labels: header.class_labels,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        generation_seed: header.seed,
        params: header.params,
    };
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
        if rec.kind != ds.kind || rec.label >= ds.class_count || rec.aux_texts.len() != ds.kind.arity() {
            return Err(malformed(line_no, "record inconsistent with header".into()));
        }
        let inst = TaskInstance {
            tweet_id: rec.tweet_id,
            aux_texts: rec.aux_texts,
            label: rec.label,
            provenance: rec.provenance,
        };
        match rec.split {
            Split::Train => ds.train.push(inst),
            Split::Dev => ds.dev.push(inst),
            Split::Test => ds.test.push(inst),
        }
    }
    Ok((ds, header.digest))
}

fn request_text(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

/// Every text needing a vector: each tweet keyed by its id and each
/// auxiliary text keyed by [`aux_key`]. Deduplicated and sorted by key.
pub fn collect_aux_requests(datasets: &[TaskDataset], corpus: &Corpus) -> Vec<(String, String)> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for ds in datasets {
        for (_, inst) in ds.iter() {
            if !out.contains_key(&inst.tweet_id) {
                if let Some(t) = corpus.get(&inst.tweet_id) {
                    out.insert(inst.tweet_id.clone(), request_text(&t.raw_text));
                }
            }
            for text in &inst.aux_texts {
                out.entry(aux_key(text)).or_insert_with(|| request_text(text));
            }
        }
    }
    out.into_iter().collect()
}

/// Word-shuffled versions of every test-split tweet, keyed by
/// [`permuted_key`]. Sorted by key.
pub fn collect_permuted_requests(datasets: &[TaskDataset], corpus: &Corpus, seed: u64) -> Vec<(String, String)> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for ds in datasets {
        for inst in &ds.test {
            if let Some(t) = corpus.get(&inst.tweet_id) {
                out.entry(permuted_key(&t.id, seed))
                    .or_insert_with(|| permute_tokens(t, seed));
            }
        }
    }
    out.into_iter().collect()
}

/// Writes `key<TAB>text` lines.
pub fn write_requests<W: Write>(mut out: W, requests: &[(String, String)]) -> std::io::Result<()> {
    for (k, t) in requests {
        writeln!(out, "{k}\t{t}")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawRecord, SlangPair};

    fn tweet(id: &str, text: &str) -> Tweet {
        RawRecord {
            id: id.into(),
            text: text.into(),
            reply_to: None,
            first_reply_minutes: None,
            ne_spans: vec![],
            slang: vec![],
        }
        .into_tweet(1)
        .unwrap()
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn bin_length_examples() {
        assert_eq!(bin_length(1, 4).unwrap(), 0);
        assert_eq!(bin_length(4, 4).unwrap(), 0);
        assert_eq!(bin_length(5, 4).unwrap(), 1);
        assert_eq!(bin_length(13, 4).unwrap(), 3);
        assert!(matches!(bin_length(3, 0), Err(TaskError::InvalidBinSize(_))));
    }

    #[test]
    fn bin_reply_time_examples() {
        assert_eq!(bin_reply_time(0.0, 2.0, 20.0).unwrap(), 0);
        assert_eq!(bin_reply_time(1.9, 2.0, 20.0).unwrap(), 0);
        assert_eq!(bin_reply_time(2.0, 2.0, 20.0).unwrap(), 1);
        assert_eq!(bin_reply_time(19.99, 2.0, 20.0).unwrap(), 9);
        assert_eq!(bin_reply_time(20.0, 2.0, 20.0).unwrap(), 10);
        assert_eq!(bin_reply_time(45.0, 2.0, 20.0).unwrap(), 10);
        assert!(matches!(
            bin_reply_time(1.0, 0.0, 20.0),
            Err(TaskError::InvalidBinSize(_))
        ));
        assert!(matches!(
            bin_reply_time(-1.0, 2.0, 20.0),
            Err(TaskError::InvalidValue(_))
        ));
        assert_eq!(reply_overflow_class(3.0, 20.0).unwrap(), 7);
    }

    #[test]
    fn bins_agree_with_linear_scan() {
        for len in 1..=200usize {
            let mut class = 0;
            while len > (class + 1) * 4 {
                class += 1;
            }
            assert_eq!(bin_length(len, 4).unwrap(), class, "length {len}");
        }
        for k in 0..=600u32 {
            let m = k as f64 / 10.0;
            let expected = if m >= 20.0 {
                10
            } else {
                let mut c = 0usize;
                while m >= (c + 1) as f64 * 2.0 {
                    c += 1;
                }
                c
            };
            assert_eq!(bin_reply_time(m, 2.0, 20.0).unwrap(), expected, "minutes {m}");
        }
    }

    #[test]
    fn content_negative_examples() {
        let t = tweet("t", "a b");
        let vocab = strings(&["a", "b", "c"]);
        assert_eq!(sample_content_negative(&t, &vocab, &mut rng()).unwrap(), "c");
        let t = tweet("t", "a b c");
        assert!(matches!(
            sample_content_negative(&t, &vocab, &mut rng()),
            Err(TaskError::NoNegativeCandidate)
        ));
    }

    #[test]
    fn content_negative_never_in_tweet() {
        let t = tweet("t", "w0 w1");
        let mut vocab: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        vocab.sort();
        let mut r = rng();
        let mut seen = BTreeSet::new();
        for _ in 0..10_000 {
            let w = sample_content_negative(&t, &vocab, &mut r).unwrap();
            assert!(w != "w0" && w != "w1");
            seen.insert(w);
        }
        // all 98 candidates reachable
        assert_eq!(seen.len(), 98);
    }

    #[test]
    fn order_pair_examples() {
        let t = tweet("t", "a b c");
        let mut r = rng();
        for _ in 0..50 {
            let (w1, w2) = sample_order_pair(&t, &mut r).unwrap();
            let i = t.tokens.iter().position(|x| *x == w1).unwrap();
            let j = t.tokens.iter().position(|x| *x == w2).unwrap();
            assert!(i < j);
        }
        assert!(sample_order_pair(&tweet("t", "a a b"), &mut r).is_none());
        assert!(sample_order_pair(&tweet("t", "a"), &mut r).is_none());
    }

    #[test]
    fn order_pairs_are_uniform() {
        let t = tweet("t", "a b c d");
        let mut r = rng();
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for _ in 0..60_000 {
            *counts.entry(sample_order_positions(&t, &mut r).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for &c in counts.values() {
            assert!((9_000..11_000).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn hashtag_examples() {
        let t = tweet("t", "go #nlp");
        assert_eq!(sample_hashtag_negative(&t, &mut rng()).unwrap(), "go");
        assert_eq!(sample_hashtag_positive(&t, &mut rng()).unwrap(), "nlp");
        let t = tweet("t", "#a #b");
        assert!(matches!(
            sample_hashtag_negative(&t, &mut rng()),
            Err(TaskError::NoNegativeCandidate)
        ));
        let t = tweet("t", "nlp #nlp");
        assert!(sample_hashtag_negative(&t, &mut rng()).is_err());
    }

    #[test]
    fn ne_negative_examples() {
        let mut t = tweet("t", "obama visits new york");
        t.ne_spans = vec![Span::new(2, 4)];
        let neg = sample_ne_negative(&t, 2, &mut rng()).unwrap();
        assert_eq!(t.span_text(neg), "obama visits");
        let mut t = tweet("t", "new york");
        t.ne_spans = vec![Span::new(0, 2)];
        assert!(matches!(
            sample_ne_negative(&t, 2, &mut rng()),
            Err(TaskError::NoNegativeCandidate)
        ));
    }

    #[test]
    fn slang_negative_examples() {
        let pool = strings(&["fine", "great", "ok"]);
        let mut r = rng();
        for _ in 0..10_000 {
            let w = sample_slang_negative(&pool, "great", &mut r).unwrap();
            assert!(w == "fine" || w == "ok");
        }
        let pool = strings(&["great"]);
        assert!(matches!(
            sample_slang_negative(&pool, "great", &mut r),
            Err(TaskError::NoNegativeCandidate)
        ));
    }

    fn hashtag_corpus(n: usize) -> Corpus {
        let tweets = (0..n)
            .map(|i| tweet(&format!("t{i}"), &format!("word{i} #tag{}", i % 7)))
            .collect();
        Corpus::from_tweets(tweets).unwrap()
    }

    #[test]
    fn hashtag_dataset_is_one_pair_per_tweet() {
        let c = hashtag_corpus(100);
        let ds = build_task(&c, TaskKind::Hashtag, &TaskParams::default(), 5).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.iter().filter(|(_, i)| i.label == 1).count(), 100);
        assert_eq!((ds.train.len(), ds.dev.len(), ds.test.len()), (140, 20, 40));
    }

    #[test]
    fn missing_annotations_reported() {
        let c = hashtag_corpus(100);
        for kind in [
            TaskKind::NamedEntity,
            TaskKind::Slang,
            TaskKind::IsReply,
            TaskKind::ReplyTime,
        ] {
            let err = build_task(&c, kind, &TaskParams::default(), 5).unwrap_err();
            assert!(matches!(err, TaskError::MissingAnnotation { .. }), "{kind}: {err}");
        }
        let small = hashtag_corpus(20);
        assert!(matches!(
            build_task(&small, TaskKind::Length, &TaskParams::default(), 5),
            Err(TaskError::InsufficientData { eligible: 20, .. })
        ));
    }

    #[test]
    fn datasets_are_deterministic_and_serializable() {
        let c = hashtag_corpus(150);
        let params = TaskParams::default();
        for kind in [
            TaskKind::Length,
            TaskKind::Content,
            TaskKind::WordOrder,
            TaskKind::Hashtag,
        ] {
            let a = build_task(&c, kind, &params, 9).unwrap();
            let b = build_task(&c, kind, &params, 9).unwrap();
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            write_dataset(&mut ba, &a, Some("d")).unwrap();
            write_dataset(&mut bb, &b, Some("d")).unwrap();
            assert_eq!(ba, bb);
            let (back, digest) = read_dataset(ba.as_slice()).unwrap();
            assert_eq!(back, a);
            assert_eq!(digest.as_deref(), Some("d"));
        }
    }

    #[test]
    fn slang_and_ne_build() {
        let tweets: Vec<Tweet> = (0..120)
            .map(|i| {
                let mut t = tweet(&format!("t{i}"), &format!("gr8 day in new york {i}"));
                t.slang_pairs = vec![SlangPair {
                    span: Span::new(0, 1),
                    standard: "Great".into(),
                }];
                t.ne_spans = vec![Span::new(3, 5)];
                t
            })
            .collect();
        let c = Corpus::from_tweets(tweets).unwrap();
        let ds = build_task(&c, TaskKind::Slang, &TaskParams::default(), 1).unwrap();
        for (_, inst) in ds.iter() {
            assert_eq!(inst.aux_texts[0], "gr8");
            if inst.label == 1 {
                assert_eq!(inst.aux_texts[1], "great");
            } else {
                assert_ne!(inst.aux_texts[1], "great");
            }
        }
        let ds = build_task(&c, TaskKind::NamedEntity, &TaskParams::default(), 1).unwrap();
        assert!(ds.iter().all(|(_, i)| i.label == 0 || i.aux_texts[0] == "new york"));
        assert!(ds
            .iter()
            .all(|(_, i)| i.label == 1 || !i.aux_texts[0].contains("new") && !i.aux_texts[0].contains("york")));
    }

    #[test]
    fn requests_cover_tweets_and_aux() {
        let c = hashtag_corpus(100);
        let params = TaskParams {
            min_instances: 10,
            ..TaskParams::default()
        };
        let small = Corpus::from_tweets(c.tweets()[..10].to_vec()).unwrap();
        let ds = build_task(&small, TaskKind::Length, &params, 3).unwrap();
        assert_eq!(collect_aux_requests(std::slice::from_ref(&ds), &small).len(), 10);
        let ds = build_task(&small, TaskKind::Content, &params, 3).unwrap();
        let reqs = collect_aux_requests(std::slice::from_ref(&ds), &small);
        let words = reqs.iter().filter(|(k, _)| k.starts_with("aux:")).count();
        assert_eq!(reqs.len() - words, 10);
        assert!(words <= 20);
        assert_eq!(reqs, collect_aux_requests(&[ds], &small));
        assert!(reqs.windows(2).all(|w| w[0].0 < w[1].0));
    }
}
