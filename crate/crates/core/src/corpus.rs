//! Annotated tweet corpus: tokenizer, interchange format and n-gram counts.
//!
//! The interchange format is one JSON object per line:
//!
//! ```text
//! {"id":"t1","text":"Obama visits New York","ne_spans":[[0,1],[2,4]]}
//! {"id":"t2","text":"@bob gr8 news","reply_to":"t1","slang":[{"span":[1,2],"standard":"great"}]}
//! ```
//!
//! Token ranges in `ne_spans` and `slang` refer to the output of [`tokenize`]
//! applied to `text`, with `end` exclusive.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest n-gram order tracked in [`NgramStats`].
pub const MAX_NGRAM: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: tweet {id}: {what} span [{start},{end}) outside 0..{len} tokens")]
    DanglingAnnotation {
        line: usize,
        id: String,
        what: &'static str,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: duplicate tweet id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("tweet {id} has no tokens")]
    ZeroLength { id: String },
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-open token range `[start, end)`. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// A nonstandard in-tweet n-gram and its normalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlangPair {
    pub span: Span,
    pub standard: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tweet {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    /// Sorted positions of tokens beginning with `#`.
    pub hashtag_indices: Vec<usize>,
    pub ne_spans: Vec<Span>,
    pub slang_pairs: Vec<SlangPair>,
    pub reply_to: Option<String>,
    pub first_reply_minutes: Option<f64>,
}

impl Tweet {
    pub fn is_hashtag(&self, pos: usize) -> bool {
        self.hashtag_indices.binary_search(&pos).is_ok()
    }

    /// Tokens in `span` joined by single spaces.
    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..span.end].join(" ")
    }

    /// The tokenized text, re-joined by single spaces.
    pub fn normalized_text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Number of words in a tweet (tokens after tokenization, markers included).
pub fn word_count(tweet: &Tweet) -> Result<usize, CorpusError> {
    match tweet.tokens.len() {
        0 => Err(CorpusError::ZeroLength { id: tweet.id.clone() }),
        n => Ok(n),
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2026}' // …
                | '\u{2018}'
                ..='\u{201f}' // curly quotes
                | '\u{2013}' | '\u{2014}' // dashes
                | '\u{00a1}' | '\u{00bf}' | '\u{00ab}' | '\u{00bb}'
        )
}

fn is_marker(c: char) -> bool {
    c == '#' || c == '@'
}

/// Whitespace split, lowercase, strip edge punctuation, drop empty tokens.
///
/// A leading `#` or `@` survives the leading strip. Trailing punctuation is
/// always removed, so a bare `#` disappears.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter_map(|piece| {
            let lower = piece.to_lowercase();
            let head = lower.trim_start_matches(|c: char| is_punct(c) && !is_marker(c));
            let body = head.trim_end_matches(is_punct);
            (!body.is_empty()).then(|| body.to_string())
        })
        .collect()
}

/// Frequency tables for n-grams of order 1..=[`MAX_NGRAM`].
///
/// N-grams are keyed by their tokens joined with single spaces. Tables are
/// ordered maps so pools drawn from them are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramStats {
    tables: Vec<BTreeMap<String, u64>>,
}

impl NgramStats {
    pub fn from_token_lists<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut tables = vec![BTreeMap::new(); MAX_NGRAM];
        for tokens in docs {
            for (n, table) in (1..=MAX_NGRAM).zip(tables.iter_mut()) {
                for window in tokens.windows(n) {
                    *table.entry(window.join(" ")).or_insert(0) += 1;
                }
            }
        }
        NgramStats { tables }
    }

    /// Counts for order `n`, or `None` when `n` is outside 1..=5.
    pub fn table(&self, n: usize) -> Option<&BTreeMap<String, u64>> {
        n.checked_sub(1).and_then(|i| self.tables.get(i))
    }

    pub fn count(&self, ngram: &str, n: usize) -> u64 {
        self.table(n).and_then(|t| t.get(ngram).copied()).unwrap_or(0)
    }

    pub fn total(&self, n: usize) -> u64 {
        self.table(n).map(|t| t.values().sum()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tweets: Vec<Tweet>,
    id_index: HashMap<String, usize>,
    vocab_stats: NgramStats,
    /// In-corpus replies received, per tweet position.
    reply_counts: Vec<u32>,
    dropped_empty: usize,
}

impl Corpus {
    /// Builds a corpus from already-validated tweets.
    ///
    /// Tweets with zero tokens are dropped and counted.
    pub fn from_tweets(tweets: Vec<Tweet>) -> Result<Self, CorpusError> {
        let before = tweets.len();
        let tweets: Vec<Tweet> = tweets.into_iter().filter(|t| !t.tokens.is_empty()).collect();
        let dropped_empty = before - tweets.len();

        let mut id_index = HashMap::with_capacity(tweets.len());
        for (i, t) in tweets.iter().enumerate() {
            if id_index.insert(t.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: t.id.clone(),
                });
            }
        }
        let mut reply_counts = vec![0u32; tweets.len()];
        for t in &tweets {
            if let Some(&parent) = t.reply_to.as_ref().and_then(|p| id_index.get(p)) {
                reply_counts[parent] += 1;
            }
        }
        let vocab_stats = NgramStats::from_token_lists(tweets.iter().map(|t| t.tokens.as_slice()));
        Ok(Corpus {
            tweets,
            id_index,
            vocab_stats,
            reply_counts,
            dropped_empty,
        })
    }

    pub fn tweets(&self) -> &[Tweet] {
        &self.tweets
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Tweet> {
        self.id_index.get(id).map(|&i| &self.tweets[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.id_index.get(id).copied()
    }

    pub fn vocab_stats(&self) -> &NgramStats {
        &self.vocab_stats
    }

    /// Number of zero-token records dropped at construction.
    pub fn dropped_empty(&self) -> usize {
        self.dropped_empty
    }

    /// Sorted distinct unigrams.
    pub fn unigram_vocab(&self) -> Vec<String> {
        self.ngram_pool(1)
    }

    /// Sorted distinct n-grams of order `n` (empty outside 1..=5).
    pub fn ngram_pool(&self, n: usize) -> Vec<String> {
        self.vocab_stats
            .table(n)
            .map(|t| t.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// True when `reply_to` names a tweet outside this corpus.
    pub fn has_external_parent(&self, tweet: &Tweet) -> bool {
        tweet.reply_to.as_ref().is_some_and(|p| !self.id_index.contains_key(p))
    }

    /// Whether any reply relationship is observable: an in-corpus reply edge
    /// or a recorded first-reply delay.
    pub fn reply_graph_available(&self) -> bool {
        self.reply_counts.iter().any(|&c| c > 0) || self.tweets.iter().any(|t| t.first_reply_minutes.is_some())
    }

    /// Tweet at `pos` received at least one recorded reply.
    pub fn has_recorded_reply(&self, pos: usize) -> bool {
        self.reply_counts[pos] > 0 || self.tweets[pos].first_reply_minutes.is_some()
    }

    /// Non-reply tweet that started a conversation. Without any reply graph
    /// every non-reply qualifies.
    pub fn is_conversation_starter(&self, pos: usize) -> bool {
        let t = &self.tweets[pos];
        t.reply_to.is_none() && (!self.reply_graph_available() || self.has_recorded_reply(pos))
    }

    /// Writes the corpus in the interchange format.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = BufWriter::new(File::create(path)?);
        for t in &self.tweets {
            let record = RawRecord::from(t);
            let line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One line of the interchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_reply_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ne_spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slang: Vec<SlangPair>,
}

impl From<&Tweet> for RawRecord {
    fn from(t: &Tweet) -> Self {
        RawRecord {
            id: t.id.clone(),
            text: t.raw_text.clone(),
            reply_to: t.reply_to.clone(),
            first_reply_minutes: t.first_reply_minutes,
            ne_spans: t.ne_spans.clone(),
            slang: t.slang_pairs.clone(),
        }
    }
}

impl RawRecord {
    /// Tokenizes and validates the record. `line` is used for error reports.
    pub fn into_tweet(self, line: usize) -> Result<Tweet, CorpusError> {
        let malformed = |reason: String| CorpusError::MalformedRecord { line, reason };
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(malformed(format!("id {:?} is empty or contains whitespace", self.id)));
        }
        if self.reply_to.as_deref() == Some(self.id.as_str()) {
            return Err(malformed(format!("tweet {} replies to itself", self.id)));
        }
        if let Some(m) = self.first_reply_minutes {
            if !(m.is_finite() && m >= 0.0) {
                return Err(malformed(format!("first_reply_minutes {m} must be finite and >= 0")));
            }
        }
        let tokens = tokenize(&self.text);
        let len = tokens.len();
        if len > 0 {
            let check = |what: &'static str, s: &Span| {
                if s.start >= s.end || s.end > len {
                    Err(CorpusError::DanglingAnnotation {
                        line,
                        id: self.id.clone(),
                        what,
                        start: s.start,
                        end: s.end,
                        len,
                    })
                } else {
                    Ok(())
                }
            };
            for s in &self.ne_spans {
                check("ne", s)?;
            }
            for p in &self.slang {
                check("slang", &p.span)?;
                if tokenize(&p.standard).is_empty() {
                    return Err(malformed(format!("empty slang standard form in tweet {}", self.id)));
                }
            }
        }
        let mut ne_spans = self.ne_spans;
        ne_spans.sort();
        if let Some(w) = ne_spans.windows(2).find(|w| w[0].overlaps(&w[1])) {
            return Err(malformed(format!(
                "overlapping ne spans [{},{}) and [{},{})",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
        let hashtag_indices = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.starts_with('#'))
            .map(|(i, _)| i)
            .collect();
        Ok(Tweet {
            id: self.id,
            raw_text: self.text,
            tokens,
            hashtag_indices,
            ne_spans,
            slang_pairs: self.slang,
            reply_to: self.reply_to,
            first_reply_minutes: self.first_reply_minutes,
        })
    }
}

/// Parses the interchange format from any reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut tweets = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut dropped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if let Some(&first) = seen.get(&record.id) {
            log::debug!("id {} first seen on line {first}", record.id);
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        seen.insert(record.id.clone(), line_no);
        let tweet = record.into_tweet(line_no)?;
        if tweet.tokens.is_empty() {
            dropped += 1;
            continue;
        }
        tweets.push(tweet);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} tweets with no tokens");
    }
    let mut corpus = Corpus::from_tweets(tweets)?;
    corpus.dropped_empty = dropped;
    Ok(corpus)
}

/// Loads and validates a corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}
