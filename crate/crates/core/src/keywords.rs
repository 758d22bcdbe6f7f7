//! Keyword lists that condition prompt generation.
//!
//! A *candidate* keyword is an ASCII-alphabetic token of at least three
//! characters, lowercased, that is not a stopword; candidates keep their
//! first-occurrence order and are deduplicated. Two sampling procedures
//! consume a ChaCha8 stream seeded with `rng_seed`, and both are specified
//! precisely enough to replay:
//!
//! * seed extraction for example `i`: draw `a = gen_range(0..n)` and
//!   `b = gen_range(0..n-1)` (bumped by one if `b >= a`) over `x_i`'s `n`
//!   candidates; pick the donor `j = donors[gen_range(0..donors.len())]`
//!   among examples `j != i` that have a candidate absent from `x_i`; pick
//!   the noise keyword `pool[gen_range(0..pool.len())]` from that donor's
//!   candidates minus `x_i`'s; then shuffle the triple with
//!   `for k in (1..3).rev() { swap(k, gen_range(0..=k)) }`.
//! * corpus sampling: partial Fisher-Yates over candidate indices,
//!   `for k in 0..3 { swap(k, gen_range(k..n)) }`, taking the first three.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::dispatch;
use crate::io::{parse_word_list, read_word_list};
use crate::rng::{derive_seed, seeded};
use crate::synthesis::SeedExample;

pub const KEYWORDS_PER_LIST: usize = 3;
pub const MIN_KEYWORD_LEN: usize = 3;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_NAMES: &str = include_str!("../data/first_names.txt");

#[derive(Debug, thiserror::Error)]
pub enum KeywordError {
    #[error("seed prompt `{prompt_id}` has {found} candidate keyword(s), needs {needed}")]
    Insufficient {
        prompt_id: String,
        needed: usize,
        found: usize,
    },
    #[error("no other seed prompt can donate a noise keyword for `{prompt_id}`")]
    NoDonor { prompt_id: String },
    #[error("seed index {index} out of range for {len} example(s)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("seed extraction needs at least 2 examples, got {0}")]
    TooFewExamples(usize),
    #[error("invalid keyword list: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordSource {
    /// Two keywords from seed prompt `i`, noise keyword from seed prompt `j`.
    Seed { i: usize, j: usize },
    Corpus(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeywordList {
    pub keywords: Vec<String>,
    pub source: KeywordSource,
}

impl KeywordList {
    /// Builds a list, checking length, distinctness and token shape.
    pub fn new<I, S>(keywords: I, source: KeywordSource) -> Result<Self, KeywordError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let list = KeywordList {
            keywords: keywords.into_iter().map(Into::into).collect(),
            source,
        };
        list.check_shape().map_err(KeywordError::Invalid)?;
        Ok(list)
    }

    fn check_shape(&self) -> Result<(), String> {
        if self.keywords.len() != KEYWORDS_PER_LIST {
            return Err(format!(
                "expected {KEYWORDS_PER_LIST} keywords, got {}",
                self.keywords.len()
            ));
        }
        for (i, k) in self.keywords.iter().enumerate() {
            if k.len() < MIN_KEYWORD_LEN {
                return Err(format!("keyword `{k}` shorter than {MIN_KEYWORD_LEN}"));
            }
            if !k.chars().all(|c| c.is_ascii_lowercase()) {
                return Err(format!("keyword `{k}` is not lowercase alphabetic"));
            }
            if self.keywords[..i].contains(k) {
                return Err(format!("duplicate keyword `{k}`"));
            }
        }
        Ok(())
    }

    /// Comma-and-space join used in the question-generation template.
    pub fn joined(&self) -> String {
        self.keywords.join(", ")
    }
}

impl fmt::Display for KeywordList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusParagraph {
    pub id: String,
    pub text: String,
}

/// Stopword and personal-name sets.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    pub stopwords: HashSet<String>,
    pub names: HashSet<String>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Lexicon {
            stopwords: parse_word_list(BUNDLED_STOPWORDS).into_iter().collect(),
            names: parse_word_list(BUNDLED_NAMES).into_iter().collect(),
        }
    }

    /// Loads lexicons from word-per-line files, falling back to the bundled
    /// lists for any path not given.
    pub fn load(stopwords: Option<&Path>, names: Option<&Path>) -> crate::Result<Self> {
        let mut lex = Lexicon::bundled();
        if let Some(p) = stopwords {
            lex.stopwords = read_word_list(p)?.into_iter().collect();
        }
        if let Some(p) = names {
            lex.names = read_word_list(p)?.into_iter().collect();
        }
        Ok(lex)
    }
}

fn raw_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

/// Every lowercased alphabetic token of length >= 3 in `text` (no stopword
/// filtering). Used for membership checks.
pub fn token_set(text: &str) -> HashSet<String> {
    raw_tokens(text)
        .filter(|t| t.len() >= MIN_KEYWORD_LEN && t.chars().all(|c| c.is_ascii_alphabetic()))
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Candidate keywords in first-occurrence order.
pub fn candidates(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for tok in raw_tokens(text) {
        if tok.len() < MIN_KEYWORD_LEN || !tok.chars().all(|c| c.is_ascii_alphabetic()) {
            continue;
        }
        let lower = tok.to_ascii_lowercase();
        if stopwords.contains(&lower) || !seen.insert(lower.clone()) {
            continue;
        }
        out.push(lower);
    }
    out
}

/// Tokens that look like personal names in `text`: capitalized somewhere
/// other than a sentence start and never written in lowercase.
pub fn capitalized_names(text: &str) -> HashSet<String> {
    let mut capitalized = HashSet::new();
    let mut lowercase = HashSet::new();
    let mut sentence_start = true;
    let mut word = String::new();
    let mut flush = |word: &mut String, sentence_start: bool| {
        if word.len() >= MIN_KEYWORD_LEN && word.chars().all(|c| c.is_ascii_alphabetic()) {
            let first_upper = word.chars().next().is_some_and(|c| c.is_ascii_uppercase());
            let rest_lower = word.chars().skip(1).all(|c| c.is_ascii_lowercase());
            if first_upper && rest_lower {
                if !sentence_start {
                    capitalized.insert(word.to_ascii_lowercase());
                }
            } else if word.chars().all(|c| c.is_ascii_lowercase()) {
                lowercase.insert(word.clone());
            }
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            flush(&mut word, sentence_start);
            sentence_start = false;
        }
        if matches!(c, '.' | '!' | '?' | '\n') {
            sentence_start = true;
        }
    }
    if !word.is_empty() {
        flush(&mut word, sentence_start);
    }
    capitalized.retain(|w| !lowercase.contains(w));
    capitalized
}

/// Draws two keywords from seed prompt `i` and one noise keyword from another
/// seed prompt. See the module docs for the exact draw order.
pub fn extract_seed_keywords(
    seed: &[SeedExample],
    i: usize,
    rng_seed: u64,
    lexicon: &Lexicon,
) -> Result<KeywordList, KeywordError> {
    if seed.len() < 2 {
        return Err(KeywordError::TooFewExamples(seed.len()));
    }
    let target = seed.get(i).ok_or(KeywordError::IndexOutOfRange {
        index: i,
        len: seed.len(),
    })?;
    let own = candidates(&target.prompt, &lexicon.stopwords);
    if own.len() < 2 {
        return Err(KeywordError::Insufficient {
            prompt_id: target.id.clone(),
            needed: 2,
            found: own.len(),
        });
    }
    let own_set: HashSet<&String> = own.iter().collect();
    let donors: Vec<(usize, Vec<String>)> = seed
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .filter_map(|(j, ex)| {
            let pool: Vec<String> = candidates(&ex.prompt, &lexicon.stopwords)
                .into_iter()
                .filter(|c| !own_set.contains(c))
                .collect();
            (!pool.is_empty()).then_some((j, pool))
        })
        .collect();
    if donors.is_empty() {
        return Err(KeywordError::NoDonor {
            prompt_id: target.id.clone(),
        });
    }

    let mut rng = seeded(rng_seed);
    let n = own.len();
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    let (j, pool) = &donors[rng.gen_range(0..donors.len())];
    let noise = pool[rng.gen_range(0..pool.len())].clone();
    let mut triple = [own[a].clone(), own[b].clone(), noise];
    for k in (1..KEYWORDS_PER_LIST).rev() {
        let s = rng.gen_range(0..=k);
        triple.swap(k, s);
    }
    KeywordList::new(triple, KeywordSource::Seed { i, j: *j })
}

/// Samples three keywords from one paragraph; `None` when the paragraph has
/// fewer than three candidates.
pub fn sample_corpus_keywords(
    paragraph: &CorpusParagraph,
    rng_seed: u64,
    lexicon: &Lexicon,
) -> Option<KeywordList> {
    let cands = candidates(&paragraph.text, &lexicon.stopwords);
    let n = cands.len();
    if n < KEYWORDS_PER_LIST {
        return None;
    }
    let mut rng = seeded(rng_seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..KEYWORDS_PER_LIST {
        let s = rng.gen_range(k..n);
        idx.swap(k, s);
    }
    let picked = idx[..KEYWORDS_PER_LIST].iter().map(|&x| cands[x].clone());
    KeywordList::new(picked, KeywordSource::Corpus(paragraph.id.clone())).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "token", rename_all = "snake_case")]
pub enum KeywordRejection {
    Stopword(String),
    PersonalName(String),
    Invalid(String),
}

impl KeywordRejection {
    pub fn label(&self) -> &'static str {
        match self {
            KeywordRejection::Stopword(_) => "stopword",
            KeywordRejection::PersonalName(_) => "personal_name",
            KeywordRejection::Invalid(_) => "invalid",
        }
    }
}

impl fmt::Display for KeywordRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeywordRejection::Stopword(t) => write!(f, "stopword \"{t}\""),
            KeywordRejection::PersonalName(t) => write!(f, "personal name \"{t}\""),
            KeywordRejection::Invalid(m) => write!(f, "invalid list: {m}"),
        }
    }
}

/// Accepts a list only when no keyword is a stopword or a known name and the
/// list shape is valid.
pub fn filter_keyword_list(
    list: &KeywordList,
    stopwords: &HashSet<String>,
    names: &HashSet<String>,
) -> Result<(), KeywordRejection> {
    for k in &list.keywords {
        if stopwords.contains(k) {
            return Err(KeywordRejection::Stopword(k.clone()));
        }
    }
    for k in &list.keywords {
        if names.contains(k) {
            return Err(KeywordRejection::PersonalName(k.clone()));
        }
    }
    list.check_shape().map_err(KeywordRejection::Invalid)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordPoolStats {
    pub paragraphs: usize,
    pub skipped: usize,
    pub rejected: BTreeMap<String, usize>,
    pub duplicates: usize,
    pub accepted: usize,
}

/// Samples one list per paragraph, filters it against the lexicon plus the
/// paragraph's capitalized-name heuristic, and drops exact duplicate triples.
pub fn build_keyword_pool(
    corpus: &[CorpusParagraph],
    master_seed: u64,
    lexicon: &Lexicon,
    max_in_flight: usize,
) -> (Vec<KeywordList>, KeywordPoolStats) {
    let sampled = dispatch(corpus, max_in_flight, |_, p| {
        let seed = derive_seed(master_seed, &["corpus-keywords", &p.id]);
        sample_corpus_keywords(p, seed, lexicon).map(|list| {
            let mut names = capitalized_names(&p.text);
            names.extend(lexicon.names.iter().cloned());
            let verdict = filter_keyword_list(&list, &lexicon.stopwords, &names);
            (list, verdict)
        })
    });
    let mut stats = KeywordPoolStats {
        paragraphs: corpus.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    for item in sampled {
        match item {
            None => stats.skipped += 1,
            Some((_, Err(reason))) => {
                *stats.rejected.entry(reason.label().to_string()).or_default() += 1;
            }
            Some((list, Ok(()))) => {
                if seen.insert(list.keywords.clone()) {
                    pool.push(list);
                } else {
                    stats.duplicates += 1;
                }
            }
        }
    }
    stats.accepted = pool.len();
    (pool, stats)
}
