//! Parallel corpora, the corpus manifest, and training-set assembly.

mod manifest;
pub mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{CorpusManifest, ManifestEntry, Role, SplitPaths};

/// Pairs with more whitespace tokens than this on either side are dropped at load.
pub const MAX_SENTENCE_TOKENS: usize = 80;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line count mismatch: {src_path} has {src_lines} lines, {tgt_path} has {tgt_lines}")]
    Alignment { src_path: PathBuf, tgt_path: PathBuf, src_lines: usize, tgt_lines: usize },
    #[error("corpus {0} has no usable sentence pairs")]
    Empty(String),
    #[error("invalid language code `{0}`: must be non-empty lowercase ASCII")]
    InvalidLang(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("language `{0}` is not in the manifest")]
    UnknownLang(LangId),
    #[error("language `{0}` has no training data")]
    MissingTrainData(LangId),
    #[error("language `{0}` has no helper language in the manifest")]
    MissingHelper(LangId),
    #[error("invalid dataset request: {0}")]
    InvalidCombination(String),
    #[error("overlap must lie in [0, 1], got {0}")]
    Overlap(f64),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Short lowercase language code such as `aze` or `eng`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LangId(String);

impl LangId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let ok = !code.is_empty()
            && code.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
        if ok {
            Ok(Self(code))
        } else {
            Err(CorpusError::InvalidLang(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LangId {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<LangId> for String {
    fn from(l: LangId) -> String {
        l.0
    }
}

impl fmt::Display for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LangId {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: String,
    pub tgt: String,
    pub src_lang: LangId,
}

/// Counts of pairs rejected while building a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropStats {
    pub too_long: usize,
    pub empty: usize,
}

/// Aligned sentence pairs for one source language and split.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pairs: Vec<SentencePair>,
    src_lang: LangId,
    tgt_lang: LangId,
    split: Split,
    dropped: DropStats,
}

impl ParallelCorpus {
    /// Builds a corpus from aligned lines, dropping pairs that are empty on
    /// either side or exceed `max_len` whitespace tokens.
    pub fn from_lines<S: AsRef<str>, T: AsRef<str>>(
        src: &[S],
        tgt: &[T],
        src_lang: LangId,
        tgt_lang: LangId,
        split: Split,
        max_len: usize,
    ) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(CorpusError::Alignment {
                src_path: PathBuf::from("<memory>"),
                tgt_path: PathBuf::from("<memory>"),
                src_lines: src.len(),
                tgt_lines: tgt.len(),
            });
        }
        let mut dropped = DropStats::default();
        let mut pairs = Vec::with_capacity(src.len());
        for (s, t) in src.iter().zip(tgt) {
            let (s, t) = (s.as_ref().trim(), t.as_ref().trim());
            if s.is_empty() || t.is_empty() {
                dropped.empty += 1;
                continue;
            }
            if s.split_whitespace().count() > max_len || t.split_whitespace().count() > max_len {
                dropped.too_long += 1;
                continue;
            }
            pairs.push(SentencePair { src: s.to_string(), tgt: t.to_string(), src_lang: src_lang.clone() });
        }
        if pairs.is_empty() {
            return Err(CorpusError::Empty(format!("{src_lang}/{split}")));
        }
        if dropped.too_long + dropped.empty > 0 {
            log::info!(
                "{src_lang}/{split}: dropped {} over-length and {} empty pairs",
                dropped.too_long,
                dropped.empty
            );
        }
        Ok(Self { pairs, src_lang, tgt_lang, split, dropped })
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn src_lang(&self) -> &LangId {
        &self.src_lang
    }

    pub fn tgt_lang(&self) -> &LangId {
        &self.tgt_lang
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn dropped(&self) -> DropStats {
        self.dropped
    }

    pub fn src_lines(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.src.as_str())
    }

    pub fn tgt_lines(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.tgt.as_str())
    }

    /// First `n` pairs (all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        Self { pairs: self.pairs[..n.min(self.len())].to_vec(), ..self.clone() }
    }

    /// Pairs `start..end`, as a corpus of the given split.
    pub fn slice(&self, start: usize, end: usize, split: Split) -> Result<Self> {
        let end = end.min(self.len());
        if start >= end {
            return Err(CorpusError::Empty(format!("{}/{split} slice {start}..{end}", self.src_lang)));
        }
        Ok(Self { pairs: self.pairs[start..end].to_vec(), split, dropped: DropStats::default(), ..self.clone() })
    }

    /// Writes the two sides as one-sentence-per-line files.
    pub fn write(&self, src_path: &Path, tgt_path: &Path) -> Result<()> {
        let join = |it: &mut dyn Iterator<Item = &str>| {
            let mut s = String::new();
            for line in it {
                s.push_str(line);
                s.push('\n');
            }
            s
        };
        let src = join(&mut self.src_lines());
        let tgt = join(&mut self.tgt_lines());
        fs::write(src_path, src).map_err(|e| CorpusError::Io { path: src_path.into(), source: e })?;
        fs::write(tgt_path, tgt).map_err(|e| CorpusError::Io { path: tgt_path.into(), source: e })?;
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io { path: path.into(), source: e })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Loads aligned `src`/`tgt` files with English as the target language and
/// the default length cap.
pub fn load_corpus(src_path: &Path, tgt_path: &Path, src_lang: LangId, split: Split) -> Result<ParallelCorpus> {
    load_corpus_with(src_path, tgt_path, src_lang, LangId::new("eng")?, split, MAX_SENTENCE_TOKENS)
}

pub fn load_corpus_with(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: LangId,
    tgt_lang: LangId,
    split: Split,
    max_len: usize,
) -> Result<ParallelCorpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::Alignment {
            src_path: src_path.into(),
            tgt_path: tgt_path.into(),
            src_lines: src.len(),
            tgt_lines: tgt.len(),
        });
    }
    if src.is_empty() {
        return Err(CorpusError::Empty(src_path.display().to_string()));
    }
    ParallelCorpus::from_lines(&src, &tgt, src_lang, tgt_lang, split, max_len)
}

/// Which languages a training set draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataStrategy {
    Sing,
    Bi,
    All,
}

impl std::str::FromStr for DataStrategy {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sing" => Ok(Self::Sing),
            "bi" => Ok(Self::Bi),
            "all" => Ok(Self::All),
            _ => Err(CorpusError::InvalidCombination(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Strategy a dataset was built with, including the cold-start variants that
/// exclude the low-resource language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Sing,
    Bi,
    All,
    BiMinus,
    AllMinus,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Sing => "Sing",
            Provenance::Bi => "Bi",
            Provenance::All => "All",
            Provenance::BiMinus => "Bi-",
            Provenance::AllMinus => "All-",
        })
    }
}

/// Role of a dataset member relative to the language being adapted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Lrl,
    Hrl,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMember {
    pub corpus: ParallelCorpus,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub members: Vec<DatasetMember>,
    pub provenance: Provenance,
    pub lrl: LangId,
}

impl TrainingDataset {
    pub fn num_pairs(&self) -> usize {
        self.members.iter().map(|m| m.corpus.len()).sum()
    }

    pub fn languages(&self) -> Vec<LangId> {
        self.members.iter().map(|m| m.corpus.src_lang().clone()).collect()
    }

    /// Sentences tagged with `lang` across all members.
    pub fn count_lang(&self, lang: &LangId) -> usize {
        self.members.iter().flat_map(|m| m.corpus.pairs()).filter(|p| &p.src_lang == lang).count()
    }
}

/// Assembles the training set for `strategy` around the low-resource
/// language `lrl`. With `cold_start` every `lrl` sentence is excluded.
pub fn build_dataset(
    manifest: &CorpusManifest,
    strategy: DataStrategy,
    lrl: &LangId,
    cold_start: bool,
) -> Result<TrainingDataset> {
    if manifest.entry(lrl).is_none() {
        return Err(CorpusError::UnknownLang(lrl.clone()));
    }
    let provenance = match (strategy, cold_start) {
        (DataStrategy::Sing, true) => {
            return Err(CorpusError::InvalidCombination(
                "single-source training without the low-resource language has no data".into(),
            ))
        }
        (DataStrategy::Sing, false) => Provenance::Sing,
        (DataStrategy::Bi, false) => Provenance::Bi,
        (DataStrategy::Bi, true) => Provenance::BiMinus,
        (DataStrategy::All, false) => Provenance::All,
        (DataStrategy::All, true) => Provenance::AllMinus,
    };
    let helper = manifest.helper(lrl);
    let langs: Vec<LangId> = match strategy {
        DataStrategy::Sing => vec![lrl.clone()],
        DataStrategy::Bi => {
            let h = helper.ok_or_else(|| CorpusError::MissingHelper(lrl.clone()))?;
            vec![lrl.clone(), h.clone()]
        }
        DataStrategy::All => manifest.entries().iter().map(|e| e.lang.clone()).collect(),
    };
    let mut members = Vec::new();
    for lang in langs {
        if cold_start && &lang == lrl {
            continue;
        }
        let corpus = match manifest.corpus(&lang, Split::Train)? {
            Some(c) => c,
            None if &lang == lrl || strategy != DataStrategy::All => {
                return Err(CorpusError::MissingTrainData(lang));
            }
            None => continue,
        };
        let origin = if &lang == lrl {
            Origin::Lrl
        } else if Some(&lang) == helper {
            Origin::Hrl
        } else {
            Origin::Other
        };
        members.push(DatasetMember { corpus, origin });
    }
    if members.is_empty() {
        return Err(CorpusError::InvalidCombination(format!("{provenance} dataset for {lrl} is empty")));
    }
    Ok(TrainingDataset { members, provenance, lrl: lrl.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(s: &str) -> LangId {
        LangId::new(s).unwrap()
    }

    #[test]
    fn lang_ids_are_validated() {
        assert!(LangId::new("aze").is_ok());
        assert!(LangId::new("").is_err());
        assert!(LangId::new("AZE").is_err());
        assert!(LangId::new("a z").is_err());
    }

    #[test]
    fn aligned_lines_pair_up() {
        let c = ParallelCorpus::from_lines(&["a b", "c"], &["x", "y z"], lang("aze"), lang("eng"), Split::Train, 80)
            .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs()[1].src, "c");
        assert_eq!(c.pairs()[1].tgt, "y z");
    }

    #[test]
    fn length_cap_and_empty_sides_are_dropped_and_counted() {
        let long = vec!["w"; 81].join(" ");
        let ok = vec!["w"; 80].join(" ");
        let c = ParallelCorpus::from_lines(
            &[long.as_str(), "a", "  ", ok.as_str()],
            &["x", long.as_str(), "y", "z"],
            lang("aze"),
            lang("eng"),
            Split::Train,
            MAX_SENTENCE_TOKENS,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.dropped(), DropStats { too_long: 2, empty: 1 });
    }

    #[test]
    fn all_dropped_is_an_empty_corpus() {
        let r = ParallelCorpus::from_lines(&[""], &["x"], lang("aze"), lang("eng"), Split::Dev, 80);
        assert!(matches!(r, Err(CorpusError::Empty(_))));
    }
}
