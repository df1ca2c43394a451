//! Byte-pair style subword vocabularies and their union across languages.
//!
//! Words are split into characters; the first character of each word carries
//! the boundary marker `▁`, so the base alphabet holds both the marked and
//! plain form of every character seen in training. Merges are learned
//! greedily by pair frequency (ties broken by the lexicographically smallest
//! merged string) until the size limit is hit or no pair occurs twice.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LangId;

pub const WORD_MARKER: char = '▁';
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

const MIN_PAIR_FREQ: u64 = 2;
const FILE_MAGIC: &str = "#ranmt-vocab";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary size {size} is below the {needed} tokens needed for specials and the alphabet")]
    SizeTooSmall { size: usize, needed: usize },
    #[error("no text to train on")]
    EmptyText,
    #[error("language `{0}` already has a vocabulary in the union")]
    DuplicateLanguage(LangId),
    #[error("no vocabulary for language `{0}`")]
    MissingLanguage(LangId),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: u32, size: usize },
    #[error("vocabulary file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("inconsistent union vocabulary: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, VocabError>;

/// Subword vocabulary for one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordVocab {
    lang: LangId,
    size_limit: usize,
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    merged: String,
    left: u32,
    right: u32,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.merged.cmp(&self.merged))
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn initial_symbols(word: &str) -> impl Iterator<Item = String> + '_ {
    word.chars().enumerate().map(|(i, c)| if i == 0 { format!("{WORD_MARKER}{c}") } else { c.to_string() })
}

struct MergeLearner {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    pair_counts: HashMap<(u32, u32), u64>,
    locations: HashMap<(u32, u32), BTreeSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl MergeLearner {
    fn symbol(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_string());
        self.symbol_ids.insert(s.to_string(), id);
        id
    }

    fn push_candidate(&mut self, pair: (u32, u32)) {
        let count = self.pair_counts.get(&pair).copied().unwrap_or(0);
        if count >= MIN_PAIR_FREQ {
            let merged = format!("{}{}", self.symbols[pair.0 as usize], self.symbols[pair.1 as usize]);
            self.heap.push(Candidate { count, merged, left: pair.0, right: pair.1 });
        }
    }

    fn add_word_pairs(&mut self, w: usize, sign: i64, touched: &mut BTreeSet<(u32, u32)>) {
        let (syms, count) = &self.words[w];
        for win in syms.windows(2) {
            let pair = (win[0], win[1]);
            let c = self.pair_counts.entry(pair).or_insert(0);
            *c = (*c as i64 + sign * *count as i64) as u64;
            if sign > 0 {
                self.locations.entry(pair).or_default().insert(w);
            }
            touched.insert(pair);
        }
    }

    fn pop_best(&mut self) -> Option<Candidate> {
        while let Some(c) = self.heap.pop() {
            if self.pair_counts.get(&(c.left, c.right)).copied() == Some(c.count) {
                return Some(c);
            }
        }
        None
    }

    fn apply(&mut self, pair: (u32, u32), merged: u32) {
        let words: Vec<usize> = self.locations.get(&pair).map(|s| s.iter().copied().collect()).unwrap_or_default();
        let mut touched = BTreeSet::new();
        for w in words {
            if !self.words[w].0.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            self.add_word_pairs(w, -1, &mut touched);
            let old = std::mem::take(&mut self.words[w].0);
            let mut out = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(old[i]);
                    i += 1;
                }
            }
            self.words[w].0 = out;
            self.add_word_pairs(w, 1, &mut touched);
        }
        for p in touched {
            self.push_candidate(p);
        }
    }
}

impl SubwordVocab {
    /// Learns a vocabulary of at most `size` tokens from whitespace-split text.
    pub fn train<'a>(lines: impl IntoIterator<Item = &'a str>, size: usize, lang: LangId) -> Result<Self> {
        let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for line in lines {
            for w in line.split_whitespace() {
                *word_counts.entry(w).or_insert(0) += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(VocabError::EmptyText);
        }
        let chars: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
        let needed = SPECIALS.len() + 2 * chars.len();
        if size < needed {
            return Err(VocabError::SizeTooSmall { size, needed });
        }

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(chars.iter().map(|c| c.to_string()));
        tokens.extend(chars.iter().map(|c| format!("{WORD_MARKER}{c}")));
        let mut known: BTreeSet<String> = tokens.iter().cloned().collect();

        let mut learner = MergeLearner {
            symbols: Vec::new(),
            symbol_ids: HashMap::new(),
            words: Vec::with_capacity(word_counts.len()),
            pair_counts: HashMap::new(),
            locations: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for (w, &count) in &word_counts {
            let syms: Vec<u32> = initial_symbols(w).map(|s| learner.symbol(&s)).collect();
            learner.words.push((syms, count));
        }
        let mut touched = BTreeSet::new();
        for w in 0..learner.words.len() {
            learner.add_word_pairs(w, 1, &mut touched);
        }
        for p in touched {
            learner.push_candidate(p);
        }

        let mut merges = Vec::new();
        while tokens.len() < size {
            let Some(best) = learner.pop_best() else { break };
            let left = learner.symbols[best.left as usize].clone();
            let right = learner.symbols[best.right as usize].clone();
            let merged_id = learner.symbol(&best.merged);
            if known.insert(best.merged.clone()) {
                tokens.push(best.merged);
            }
            merges.push((left, right));
            learner.apply((best.left, best.right), merged_id);
        }
        Ok(Self { lang, size_limit: size, tokens, merges })
    }

    pub fn lang(&self) -> &LangId {
        &self.lang
    }

    pub fn size_limit(&self) -> usize {
        self.size_limit
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn segmenter(&self) -> Segmenter {
        Segmenter::new(self)
    }

    /// Plain-text form: a header line, the tokens, then the merges.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FILE_MAGIC} v{FILE_VERSION} lang={} size={}", self.lang, self.size_limit).unwrap();
        writeln!(s, "tokens {}", self.tokens.len()).unwrap();
        for t in &self.tokens {
            writeln!(s, "{t}").unwrap();
        }
        writeln!(s, "merges {}", self.merges.len()).unwrap();
        for (l, r) in &self.merges {
            writeln!(s, "{l} {r}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| VocabError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(FILE_MAGIC) {
            return Err(err(n, "missing header"));
        }
        if fields.next() != Some(&format!("v{FILE_VERSION}")) {
            return Err(err(n, "unsupported version"));
        }
        let mut lang = None;
        let mut size = None;
        for f in fields {
            match f.split_once('=') {
                Some(("lang", v)) => lang = Some(LangId::new(v).map_err(|e| err(n, &e.to_string()))?),
                Some(("size", v)) => size = Some(v.parse::<usize>().map_err(|e| err(n, &e.to_string()))?),
                _ => return Err(err(n, "unknown header field")),
            }
        }
        let (lang, size_limit) = (lang.ok_or_else(|| err(n, "no lang"))?, size.ok_or_else(|| err(n, "no size"))?);

        let mut count = |tag: &str| -> Result<usize> {
            let (n, l) = lines.next().ok_or_else(|| err(0, "truncated"))?;
            l.strip_prefix(tag)
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| err(n, &format!("expected `{tag} N`")))
        };
        let num_tokens = count("tokens")?;
        let mut tokens = Vec::with_capacity(num_tokens);
        for _ in 0..num_tokens {
            let (_, t) = lines.next().ok_or_else(|| err(0, "truncated token list"))?;
            tokens.push(t.to_string());
        }
        let mut lines = lines;
        let (n, l) = lines.next().ok_or_else(|| err(0, "truncated"))?;
        let num_merges: usize =
            l.strip_prefix("merges").and_then(|c| c.trim().parse().ok()).ok_or_else(|| err(n, "expected `merges N`"))?;
        let mut merges = Vec::with_capacity(num_merges);
        for _ in 0..num_merges {
            let (n, m) = lines.next().ok_or_else(|| err(0, "truncated merge list"))?;
            let (l, r) = m.split_once(' ').ok_or_else(|| err(n, "merge needs two symbols"))?;
            merges.push((l.to_string(), r.to_string()));
        }
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(err(2, "special tokens missing"));
        }
        Ok(Self { lang, size_limit, tokens, merges })
    }
}

/// Applies a vocabulary's merges to words.
#[derive(Debug, Clone)]
pub struct Segmenter {
    alphabet: BTreeSet<String>,
    ranks: HashMap<(String, String), usize>,
}

impl Segmenter {
    fn new(v: &SubwordVocab) -> Self {
        let alphabet = v
            .tokens
            .iter()
            .skip(SPECIALS.len())
            .filter(|t| {
                let body = t.strip_prefix(WORD_MARKER).unwrap_or(t);
                body.chars().count() == 1
            })
            .cloned()
            .collect();
        let mut ranks = HashMap::new();
        for (i, (l, r)) in v.merges.iter().enumerate() {
            ranks.entry((l.clone(), r.clone())).or_insert(i);
        }
        Self { alphabet, ranks }
    }

    /// Subword strings for one word; `None` stands for an unknown character.
    pub fn segment_word(&self, word: &str) -> Vec<Option<String>> {
        let mut syms: Vec<Option<String>> =
            initial_symbols(word).map(|s| if self.alphabet.contains(&s) { Some(s) } else { None }).collect();
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                if let (Some(l), Some(r)) = (&syms[i], &syms[i + 1]) {
                    if let Some(&rank) = self.ranks.get(&(l.clone(), r.clone())) {
                        if best.is_none_or(|(b, _)| rank < b) {
                            best = Some((rank, i));
                        }
                    }
                }
            }
            let Some((_, first)) = best else { break };
            let (l, r) = (syms[first].clone().unwrap(), syms[first + 1].clone().unwrap());
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i].as_ref() == Some(&l) && syms[i + 1].as_ref() == Some(&r) {
                    out.push(Some(format!("{l}{r}")));
                    i += 2;
                } else {
                    out.push(syms[i].take());
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }
}

/// Shared index space over several language vocabularies. Tokens from later
/// members are appended; existing indices never move.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "UnionRepr", into = "UnionRepr")]
pub struct UnionVocab {
    members: Vec<SubwordVocab>,
    tokens: Vec<String>,
    lang_tags: bool,
    index: HashMap<String, u32>,
    segmenters: BTreeMap<LangId, Segmenter>,
}

impl PartialEq for UnionVocab {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members && self.tokens == other.tokens && self.lang_tags == other.lang_tags
    }
}

#[derive(Serialize, Deserialize)]
struct UnionRepr {
    members: Vec<SubwordVocab>,
    tokens: Vec<String>,
    lang_tags: bool,
}

impl From<UnionVocab> for UnionRepr {
    fn from(u: UnionVocab) -> Self {
        Self { members: u.members, tokens: u.tokens, lang_tags: u.lang_tags }
    }
}

impl TryFrom<UnionRepr> for UnionVocab {
    type Error = VocabError;
    fn try_from(r: UnionRepr) -> Result<Self> {
        let rebuilt = UnionVocab::build(r.members, r.lang_tags)?;
        if rebuilt.tokens != r.tokens {
            return Err(VocabError::Inconsistent("token list does not match member vocabularies".into()));
        }
        Ok(rebuilt)
    }
}

pub fn lang_tag(lang: &LangId) -> String {
    format!("<lang:{lang}>")
}

impl UnionVocab {
    fn empty(lang_tags: bool) -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { members: Vec::new(), tokens, lang_tags, index, segmenters: BTreeMap::new() }
    }

    fn push_token(&mut self, t: &str) {
        if !self.index.contains_key(t) {
            self.index.insert(t.to_string(), self.tokens.len() as u32);
            self.tokens.push(t.to_string());
        }
    }

    fn add_member(&mut self, v: SubwordVocab) -> Result<()> {
        if let Some(existing) = self.members.iter().find(|m| m.lang == v.lang) {
            if *existing == v {
                return Ok(());
            }
            return Err(VocabError::DuplicateLanguage(v.lang));
        }
        if self.lang_tags {
            self.push_token(&lang_tag(&v.lang));
        }
        for t in &v.tokens {
            self.push_token(t);
        }
        self.segmenters.insert(v.lang.clone(), v.segmenter());
        self.members.push(v);
        Ok(())
    }

    fn build(vocabs: Vec<SubwordVocab>, lang_tags: bool) -> Result<Self> {
        let mut u = Self::empty(lang_tags);
        for v in vocabs {
            u.add_member(v)?;
        }
        Ok(u)
    }

    /// Union without language tags. Repeating an identical vocabulary is a
    /// no-op; two different vocabularies for one language are an error.
    pub fn new(vocabs: impl IntoIterator<Item = SubwordVocab>) -> Result<Self> {
        Self::build(vocabs.into_iter().collect(), false)
    }

    /// Union that also reserves a `<lang:xx>` token per member, emitted after
    /// BOS when encoding.
    pub fn with_lang_tags(vocabs: impl IntoIterator<Item = SubwordVocab>) -> Result<Self> {
        Self::build(vocabs.into_iter().collect(), true)
    }

    /// Appends a new language's tokens. Returns the number of new indices.
    pub fn extend(&mut self, v: SubwordVocab) -> Result<usize> {
        if self.segmenters.contains_key(&v.lang) {
            return Err(VocabError::DuplicateLanguage(v.lang));
        }
        let before = self.tokens.len();
        self.add_member(v)?;
        Ok(self.tokens.len() - before)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn members(&self) -> &[SubwordVocab] {
        &self.members
    }

    pub fn lang_tags(&self) -> bool {
        self.lang_tags
    }

    pub fn languages(&self) -> impl Iterator<Item = &LangId> {
        self.members.iter().map(|m| &m.lang)
    }

    pub fn contains_lang(&self, lang: &LangId) -> bool {
        self.segmenters.contains_key(lang)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Subword strings for `text` in `lang`, without framing.
    pub fn segment(&self, text: &str, lang: &LangId) -> Result<Vec<Option<String>>> {
        let seg = self.segmenters.get(lang).ok_or_else(|| VocabError::MissingLanguage(lang.clone()))?;
        Ok(text.split_whitespace().flat_map(|w| seg.segment_word(w)).collect())
    }

    /// `[BOS, (tag,) tokens.., EOS]`.
    pub fn encode(&self, text: &str, lang: &LangId) -> Result<Vec<u32>> {
        let pieces = self.segment(text, lang)?;
        let mut ids = Vec::with_capacity(pieces.len() + 3);
        ids.push(BOS);
        if self.lang_tags {
            ids.push(self.index[&lang_tag(lang)]);
        }
        ids.extend(pieces.iter().map(|p| p.as_ref().and_then(|p| self.id(p)).unwrap_or(UNK)));
        ids.push(EOS);
        Ok(ids)
    }

    /// Joins subwords back into text, dropping PAD, BOS, EOS and language
    /// tags. Unknown pieces render as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(VocabError::OutOfRange { id, size: self.len() })?;
            if matches!(id, PAD | BOS | EOS) || (tok.starts_with("<lang:") && self.lang_tags) {
                continue;
            }
            let (boundary, body) = match tok.strip_prefix(WORD_MARKER) {
                Some(rest) => (true, rest),
                None => (false, tok),
            };
            if boundary && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(body);
        }
        Ok(out)
    }
}
