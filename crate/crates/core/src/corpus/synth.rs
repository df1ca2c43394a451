//! Synthetic corpora for desk-scale experiments.
//!
//! [`generate_base`] produces an artificial "English" corpus whose source and
//! target sides are identical. [`synth_related_language`] derives a new source
//! language from it by rewriting word types through a seeded lexical cipher:
//! a chosen fraction of types is kept unchanged and the rest are replaced by
//! fresh pseudo-words. Two languages derived from the same parent with a high
//! overlap share most of their vocabulary, like a related language pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    CorpusError, CorpusManifest, LangId, ManifestEntry, ParallelCorpus, Result, Role, Split, SplitPaths, MAX_SENTENCE_TOKENS,
};

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "k"];

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
    w
}

/// Draws a pseudo-word not present in `taken` and records it there.
fn fresh_word(rng: &mut impl Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let w = pseudo_word(rng);
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseCorpusConfig {
    pub lexicon_size: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent of the Zipf distribution over the lexicon.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for BaseCorpusConfig {
    fn default() -> Self {
        Self { lexicon_size: 150, sentences: 10_000, min_len: 4, max_len: 9, zipf_exponent: 1.0, seed: 0 }
    }
}

/// Seeded Zipfian sentence generator over a pseudo-word lexicon.
#[derive(Debug, Clone)]
pub struct BaseGenerator {
    lexicon: Vec<String>,
    weights: WeightedIndex<f64>,
    min_len: usize,
    max_len: usize,
    rng: ChaCha8Rng,
}

impl BaseGenerator {
    pub fn new(cfg: &BaseCorpusConfig) -> Result<Self> {
        if cfg.lexicon_size == 0 || cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.max_len > MAX_SENTENCE_TOKENS {
            return Err(CorpusError::InvalidCombination(format!("bad base corpus config {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut taken = BTreeSet::new();
        let lexicon: Vec<String> = (0..cfg.lexicon_size).map(|_| fresh_word(&mut rng, &mut taken)).collect();
        let weights = WeightedIndex::new((1..=cfg.lexicon_size).map(|r| (r as f64).powf(-cfg.zipf_exponent)))
            .map_err(|e| CorpusError::InvalidCombination(e.to_string()))?;
        Ok(Self { lexicon, weights, min_len: cfg.min_len, max_len: cfg.max_len, rng })
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    pub fn sentence(&mut self) -> String {
        let n = self.rng.random_range(self.min_len..=self.max_len);
        let words: Vec<&str> = (0..n).map(|_| self.lexicon[self.weights.sample(&mut self.rng)].as_str()).collect();
        words.join(" ")
    }

    pub fn sentences(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.sentence()).collect()
    }
}

/// Base corpus with identical source and target sides, both tagged as the
/// target language `eng`.
pub fn generate_base(cfg: &BaseCorpusConfig) -> Result<ParallelCorpus> {
    let lines = BaseGenerator::new(cfg)?.sentences(cfg.sentences);
    let eng = LangId::new("eng")?;
    ParallelCorpus::from_lines(&lines, &lines, eng.clone(), eng, Split::Train, MAX_SENTENCE_TOKENS)
}

/// Word-type substitution table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cipher {
    map: BTreeMap<String, String>,
}

impl Cipher {
    /// Keeps `round(overlap * n)` of the `n` types fixed and maps every other
    /// type to a distinct fresh pseudo-word that is not itself a type.
    pub fn derive(types: &BTreeSet<String>, seed: u64, overlap: f64) -> Result<Self> {
        Self::derive_avoiding(types, &BTreeSet::new(), seed, overlap)
    }

    /// As [`Cipher::derive`], and fresh words also avoid `avoid`.
    pub fn derive_avoiding(types: &BTreeSet<String>, avoid: &BTreeSet<String>, seed: u64, overlap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(CorpusError::Overlap(overlap));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<&String> = types.iter().collect();
        order.shuffle(&mut rng);
        let keep = (overlap * types.len() as f64).round() as usize;
        let mut taken: BTreeSet<String> = types.union(avoid).cloned().collect();
        let map = order
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let image = if i < keep { t.clone() } else { fresh_word(&mut rng, &mut taken) };
                (t.clone(), image)
            })
            .collect();
        Ok(Self { map })
    }

    pub fn apply(&self, word: &str) -> String {
        self.map.get(word).cloned().unwrap_or_else(|| word.to_string())
    }

    pub fn apply_sentence(&self, s: &str) -> String {
        s.split_whitespace().map(|w| self.apply(w)).collect::<Vec<_>>().join(" ")
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Images of all mapped types.
    pub fn image(&self) -> BTreeSet<String> {
        self.map.values().cloned().collect()
    }

    /// Number of types mapped to themselves.
    pub fn fixed_points(&self) -> usize {
        self.map.iter().filter(|(k, v)| k == v).count()
    }
}

/// Source-side word types of a corpus.
pub fn word_types(corpus: &ParallelCorpus) -> BTreeSet<String> {
    corpus.src_lines().flat_map(str::split_whitespace).map(str::to_string).collect()
}

/// Rewrites the source side of `base` through a seeded cipher with the
/// given type overlap; the target side is untouched.
pub fn synth_related_language(
    base: &ParallelCorpus,
    cipher_seed: u64,
    overlap: f64,
    new_lang: LangId,
) -> Result<ParallelCorpus> {
    let cipher = Cipher::derive(&word_types(base), cipher_seed, overlap)?;
    let src: Vec<String> = base.src_lines().map(|s| cipher.apply_sentence(s)).collect();
    let tgt: Vec<&str> = base.tgt_lines().collect();
    ParallelCorpus::from_lines(&src, &tgt, new_lang, base.tgt_lang().clone(), base.split(), MAX_SENTENCE_TOKENS)
}

/// Sizes and seeds for a three-language synthetic suite: a high-resource
/// helper, a low-resource language sharing most of the helper's word types,
/// and an unrelated distractor.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub base: BaseCorpusConfig,
    pub hrl: LangId,
    pub lrl: LangId,
    pub other: LangId,
    pub hrl_train: usize,
    pub lrl_train: usize,
    pub other_train: usize,
    pub dev: usize,
    pub test: usize,
    /// Fraction of helper word types the low-resource language keeps.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            base: BaseCorpusConfig::default(),
            hrl: LangId::new("hrl").expect("valid code"),
            lrl: LangId::new("lrl").expect("valid code"),
            other: LangId::new("oth").expect("valid code"),
            hrl_train: 5000,
            lrl_train: 200,
            other_train: 2000,
            dev: 200,
            test: 200,
            overlap: 0.8,
            seed: 0,
        }
    }
}

/// Writes the suite's corpora and a manifest under `dir`; returns the
/// manifest path.
pub fn write_suite(dir: &Path, cfg: &SuiteConfig) -> Result<PathBuf> {
    let io = |path: &Path, e| CorpusError::Io { path: path.to_path_buf(), source: e };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut gen = BaseGenerator::new(&cfg.base)?;
    let base_types: BTreeSet<String> = gen.lexicon().iter().cloned().collect();
    let hrl = Cipher::derive(&base_types, cfg.seed ^ 0x4852, 0.0)?;
    let hrl_types = hrl.image();
    let mut seen: BTreeSet<String> = base_types.union(&hrl_types).cloned().collect();
    let lrl = Cipher::derive_avoiding(&hrl_types, &seen, cfg.seed ^ 0x4c52, cfg.overlap)?;
    seen.extend(lrl.image());
    let other = Cipher::derive_avoiding(&base_types, &seen, cfg.seed ^ 0x4f54, 0.0)?;

    let langs: [(&LangId, Role, Vec<&Cipher>, usize); 3] = [
        (&cfg.lrl, Role::Lrl, vec![&hrl, &lrl], cfg.lrl_train),
        (&cfg.hrl, Role::Hrl, vec![&hrl], cfg.hrl_train),
        (&cfg.other, Role::Other, vec![&other], cfg.other_train),
    ];
    let mut entries = Vec::new();
    for (lang, role, ciphers, train) in langs {
        let mut splits = BTreeMap::new();
        for (split, n) in [(Split::Train, train), (Split::Dev, cfg.dev), (Split::Test, cfg.test)] {
            if n == 0 {
                continue;
            }
            let tgt = gen.sentences(n);
            let src: Vec<String> =
                tgt.iter().map(|t| ciphers.iter().fold(t.clone(), |s, c| c.apply_sentence(&s))).collect();
            let paths = SplitPaths {
                src: PathBuf::from(format!("{lang}.{split}.src")),
                tgt: PathBuf::from(format!("{lang}.{split}.eng")),
            };
            let corpus = ParallelCorpus::from_lines(
                &src,
                &tgt,
                lang.clone(),
                LangId::new("eng")?,
                split,
                MAX_SENTENCE_TOKENS,
            )?;
            corpus.write(&dir.join(&paths.src), &dir.join(&paths.tgt))?;
            splits.insert(split, paths);
        }
        entries.push(ManifestEntry { lang: lang.clone(), role, splits });
    }
    let helpers = BTreeMap::from([(cfg.lrl.clone(), cfg.hrl.clone())]);
    let manifest = CorpusManifest::new(LangId::new("eng")?, entries, helpers, dir)?;
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| io(&path, e))?;
    Ok(path)
}
