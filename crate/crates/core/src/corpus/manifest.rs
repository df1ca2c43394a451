//! Corpus manifest.
//!
//! A JSON document listing the source languages, their roles, the split
//! files for each, and the low-resource → helper pairing:
//!
//! ```json
//! {
//!   "target_lang": "eng",
//!   "languages": [
//!     { "lang": "aze", "role": "lrl",
//!       "splits": { "train": { "src": "aze/train.src", "tgt": "aze/train.eng" },
//!                   "dev":   { "src": "aze/dev.src",   "tgt": "aze/dev.eng" } } },
//!     { "lang": "tur", "role": "hrl",
//!       "splits": { "train": { "src": "tur/train.src", "tgt": "tur/train.eng" } } }
//!   ],
//!   "helpers": { "aze": "tur" },
//!   "max_len": 80
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. `target_lang`
//! defaults to `eng` and `max_len` to [`MAX_SENTENCE_TOKENS`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_corpus_with, CorpusError, LangId, ParallelCorpus, Result, Split, MAX_SENTENCE_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Lrl,
    Hrl,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPaths {
    pub src: PathBuf,
    pub tgt: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub lang: LangId,
    pub role: Role,
    #[serde(default)]
    pub splits: BTreeMap<Split, SplitPaths>,
}

fn default_target() -> LangId {
    LangId::new("eng").expect("valid code")
}

fn default_max_len() -> usize {
    MAX_SENTENCE_TOKENS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(default = "default_target")]
    pub target_lang: LangId,
    pub languages: Vec<ManifestEntry>,
    #[serde(default)]
    pub helpers: BTreeMap<LangId, LangId>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl CorpusManifest {
    /// Parses and validates a manifest file; split paths must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::Io { path: path.into(), source: e })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: Self = serde_json::from_str(text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn new(
        target_lang: LangId,
        languages: Vec<ManifestEntry>,
        helpers: BTreeMap<LangId, LangId>,
        base_dir: &Path,
    ) -> Result<Self> {
        let m = Self { target_lang, languages, helpers, max_len: MAX_SENTENCE_TOKENS, base_dir: base_dir.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for e in &self.languages {
            if seen.insert(e.lang.clone(), e.role).is_some() {
                return Err(CorpusError::Manifest(format!("language `{}` listed twice", e.lang)));
            }
            for (split, p) in &e.splits {
                for f in [&p.src, &p.tgt] {
                    let full = self.resolve(f);
                    if !full.is_file() {
                        return Err(CorpusError::Manifest(format!(
                            "{}/{split}: file {} does not exist",
                            e.lang,
                            full.display()
                        )));
                    }
                }
            }
        }
        for (lrl, hrl) in &self.helpers {
            match seen.get(lrl) {
                Some(Role::Lrl) => {}
                Some(_) => return Err(CorpusError::Manifest(format!("helper key `{lrl}` is not a low-resource language"))),
                None => return Err(CorpusError::Manifest(format!("helper key `{lrl}` is not listed"))),
            }
            if seen.get(hrl) != Some(&Role::Hrl) {
                return Err(CorpusError::Manifest(format!("helper `{hrl}` of `{lrl}` is not a listed high-resource language")));
            }
        }
        for (lang, role) in &seen {
            if *role == Role::Lrl && !self.helpers.contains_key(lang) {
                return Err(CorpusError::Manifest(format!("low-resource language `{lang}` has no helper")));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.languages
    }

    pub fn entry(&self, lang: &LangId) -> Option<&ManifestEntry> {
        self.languages.iter().find(|e| &e.lang == lang)
    }

    pub fn helper(&self, lrl: &LangId) -> Option<&LangId> {
        self.helpers.get(lrl)
    }

    pub fn has_split(&self, lang: &LangId, split: Split) -> bool {
        self.entry(lang).is_some_and(|e| e.splits.contains_key(&split))
    }

    /// Loads one split; `None` when the manifest lists no files for it.
    pub fn corpus(&self, lang: &LangId, split: Split) -> Result<Option<ParallelCorpus>> {
        let entry = self.entry(lang).ok_or_else(|| CorpusError::UnknownLang(lang.clone()))?;
        let Some(paths) = entry.splits.get(&split) else {
            return Ok(None);
        };
        load_corpus_with(
            &self.resolve(&paths.src),
            &self.resolve(&paths.tgt),
            lang.clone(),
            self.target_lang.clone(),
            split,
            self.max_len,
        )
        .map(Some)
    }
}
