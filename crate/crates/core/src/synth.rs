//! Synthetic annotated tweets for tests, benchmarks and demos.
//!
//! Words are pronounceable pseudo-words drawn from a Zipf distribution.
//! Tweets carry hashtags, mentions, named-entity phrases, slang with its
//! standard form, and reply links with first-reply delays, so every task
//! can be built from the output.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError, RawRecord, SlangPair, Span};
use crate::util::{derive_seed, stable_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tweets: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub hashtag_rate: f64,
    pub mention_rate: f64,
    pub entity_rate: f64,
    pub slang_rate: f64,
    pub reply_rate: f64,
    /// Share of replies whose parent lies outside the corpus.
    pub external_parent_rate: f64,
    /// Chance that a tweet without in-corpus replies still has a delay.
    pub outside_reply_rate: f64,
    pub mean_reply_minutes: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tweets: 1000,
            vocab_size: 3000,
            zipf_exponent: 1.05,
            min_len: 3,
            max_len: 30,
            hashtag_rate: 0.5,
            mention_rate: 0.3,
            entity_rate: 0.5,
            slang_rate: 0.45,
            reply_rate: 0.45,
            external_parent_rate: 0.1,
            outside_reply_rate: 0.3,
            mean_reply_minutes: 8.0,
            seed: 0,
        }
    }
}

const SLANG: &[(&str, &str)] = &[
    ("u", "you"),
    ("r", "are"),
    ("ur", "your"),
    ("gr8", "great"),
    ("pls", "please"),
    ("thx", "thanks"),
    ("b4", "before"),
    ("2day", "today"),
    ("tmrw", "tomorrow"),
    ("ppl", "people"),
    ("bc", "because"),
    ("cuz", "because"),
    ("luv", "love"),
    ("nite", "night"),
    ("srsly", "seriously"),
    ("wanna", "want to"),
    ("gonna", "going to"),
    ("gimme", "give me"),
    ("idk", "i do not know"),
    ("omg", "oh my god"),
    ("btw", "by the way"),
    ("imo", "in my opinion"),
    ("tbh", "to be honest"),
    ("smh", "shaking my head"),
    ("c u", "see you"),
    ("l8r", "later"),
];

const DECORATIONS: &[&str] = &[",", "!", "?", "...", "."];

fn pseudo_word(mut n: usize) -> String {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    // at least two syllables so words never collide with slang
    for _ in 0..2 {
        let s = n % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        n /= base;
    }
    while n > 0 {
        let s = n % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        n /= base;
    }
    out
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

enum Piece {
    Word(String),
    Hashtag(String),
    Mention(String),
    Entity(Vec<String>),
    Slang(&'static str, &'static str),
}

struct Lexicon {
    words: Vec<String>,
    zipf: Zipf<f64>,
    hashtags: Vec<String>,
    hashtag_zipf: Zipf<f64>,
    entities: Vec<Vec<String>>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let words: Vec<String> = (0..cfg.vocab_size).map(|i| pseudo_word(i + 70)).collect();
        let mut hashtags: Vec<String> = (0..150).map(|i| format!("#{}", pseudo_word(50_000 + i))).collect();
        // some tags are spelled like ordinary words
        hashtags.extend(words.iter().take(30).map(|w| format!("#{w}")));
        hashtags.shuffle(rng);
        let entities = (0..300)
            .map(|i| {
                let len = 1 + i % 3;
                (0..len).map(|j| pseudo_word(100_000 + i * 3 + j)).collect()
            })
            .collect();
        Lexicon {
            zipf: Zipf::new(words.len() as f64, cfg.zipf_exponent).expect("validated vocab size"),
            hashtag_zipf: Zipf::new(hashtags.len() as f64, 1.0).expect("non-empty"),
            words,
            hashtags,
            entities,
        }
    }

    fn word(&self, rng: &mut ChaCha8Rng) -> String {
        self.words[self.zipf.sample(rng) as usize - 1].clone()
    }

    fn hashtag(&self, rng: &mut ChaCha8Rng) -> String {
        self.hashtags[self.hashtag_zipf.sample(rng) as usize - 1].clone()
    }
}

fn piece_len(p: &Piece) -> usize {
    match p {
        Piece::Entity(e) => e.len(),
        Piece::Slang(s, _) => s.split(' ').count(),
        _ => 1,
    }
}

fn compose(cfg: &SynthConfig, lex: &Lexicon, rng: &mut ChaCha8Rng) -> (String, Vec<Span>, Vec<SlangPair>) {
    let target = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut pieces = Vec::new();
    if rng.random_bool(cfg.entity_rate) {
        pieces.push(Piece::Entity(
            lex.entities[rng.random_range(0..lex.entities.len())].clone(),
        ));
    }
    if rng.random_bool(cfg.slang_rate) {
        let (s, std) = SLANG[rng.random_range(0..SLANG.len())];
        pieces.push(Piece::Slang(s, std));
    }
    if rng.random_bool(cfg.hashtag_rate) {
        for _ in 0..rng.random_range(1..=2) {
            pieces.push(Piece::Hashtag(lex.hashtag(rng)));
        }
    }
    if rng.random_bool(cfg.mention_rate) {
        pieces.push(Piece::Mention(format!("@user{}", rng.random_range(0..500))));
    }
    // keep the annotated pieces that fit, then pad with plain words
    let mut used = 0;
    pieces.retain(|p| {
        let fits = used + piece_len(p) <= target;
        if fits {
            used += piece_len(p);
        }
        fits
    });
    while used < target {
        pieces.push(Piece::Word(lex.word(rng)));
        used += 1;
    }
    pieces.shuffle(rng);

    let mut raw: Vec<String> = Vec::with_capacity(target);
    let mut entities = Vec::new();
    let mut slang = Vec::new();
    for p in pieces {
        let start = raw.len();
        match p {
            Piece::Word(w) | Piece::Hashtag(w) | Piece::Mention(w) => raw.push(w),
            Piece::Entity(e) => {
                raw.extend(e.iter().map(|w| capitalize(w)));
                entities.push(Span::new(start, raw.len()));
            }
            Piece::Slang(s, std) => {
                raw.extend(s.split(' ').map(str::to_string));
                slang.push(SlangPair {
                    span: Span::new(start, raw.len()),
                    standard: std.to_string(),
                });
            }
        }
    }
    if let Some(first) = raw.first_mut() {
        if rng.random_bool(0.5) {
            *first = capitalize(first);
        }
    }
    for tok in raw.iter_mut() {
        if rng.random_bool(0.08) {
            tok.push_str(DECORATIONS[rng.random_range(0..DECORATIONS.len())]);
        } else if rng.random_bool(0.02) && !tok.starts_with(['#', '@']) {
            *tok = format!("\"{tok}\"");
        }
    }
    (raw.join(" "), entities, slang)
}

fn round_minutes(m: f64) -> f64 {
    (m * 10.0).round() / 10.0
}

/// Generates a corpus. Deterministic in `cfg`.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus, CorpusError> {
    let invalid = |reason: String| CorpusError::MalformedRecord { line: 0, reason };
    if cfg.vocab_size == 0 || cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.mean_reply_minutes <= 0.0 {
        return Err(invalid(format!("bad synth config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5e7));
    let lex = Lexicon::new(cfg, &mut rng);
    let delay = Exp::new(1.0 / cfg.mean_reply_minutes).expect("positive rate");

    let ids: Vec<String> = (0..cfg.tweets).map(|i| format!("t{i:06}")).collect();
    let mut records = Vec::with_capacity(cfg.tweets);
    let mut has_reply = vec![false; cfg.tweets];
    for i in 0..cfg.tweets {
        let (text, ne_spans, slang) = compose(cfg, &lex, &mut rng);
        let reply_to = if rng.random_bool(cfg.reply_rate) {
            if i == 0 || rng.random_bool(cfg.external_parent_rate) {
                Some(format!("x{}", rng.random_range(0..1_000_000)))
            } else {
                let parent = rng.random_range(i.saturating_sub(50)..i);
                has_reply[parent] = true;
                Some(ids[parent].clone())
            }
        } else {
            None
        };
        records.push(RawRecord {
            id: ids[i].clone(),
            text,
            reply_to,
            first_reply_minutes: None,
            ne_spans,
            slang,
        });
    }
    for (rec, replied) in records.iter_mut().zip(&has_reply) {
        if *replied || rng.random_bool(cfg.outside_reply_rate) {
            rec.first_reply_minutes = Some(round_minutes(delay.sample(&mut rng)));
        }
    }
    let tweets = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.into_tweet(i + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Corpus::from_tweets(tweets)
}

/// A pseudo-random vector for `word`, independent of any other word.
pub fn word_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stable_hash(word)));
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Vectors for every token type in the corpus, sorted by word.
pub fn synth_word_vectors(corpus: &Corpus, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    corpus
        .unigram_vocab()
        .into_iter()
        .map(|w| {
            let v = word_vector(&w, dim, seed);
            (w, v)
        })
        .collect()
}

/// Word -> vector map of [`synth_word_vectors`].
pub fn synth_word_table(corpus: &Corpus, dim: usize, seed: u64) -> HashMap<String, Vec<f64>> {
    synth_word_vectors(corpus, dim, seed).into_iter().collect()
}
