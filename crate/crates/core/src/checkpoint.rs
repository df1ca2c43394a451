//! Checkpoint files.
//!
//! Layout: the 5-byte magic `RANMT`, a format-version byte, a little-endian
//! `u64` length followed by that many bytes of JSON metadata, then one
//! section per parameter array. A section is a `u32` name length, the UTF-8
//! name, a `u64` element count and that many little-endian `f32` values.
//! Every parameter contributes three sections: `<name>`, `<name>.adam_m`
//! and `<name>.adam_v`, in the order listed in the metadata.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use ranmt_tensor::{init, read_f32_le, write_f32_le, ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LangId;
use crate::model::{ModelError, Seq2Seq, Seq2SeqConfig};
use crate::subword::{SubwordVocab, UnionVocab, VocabError};
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 5] = b"RANMT";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint section: {0}")]
    Section(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub adam_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: Seq2SeqConfig,
    pub src_vocab: UnionVocab,
    pub tgt_vocab: UnionVocab,
    pub target_lang: LangId,
    /// Source languages whose data the parameters have been trained on.
    pub languages: Vec<LangId>,
    /// Training stages that produced this checkpoint, oldest first.
    pub lineage: Vec<String>,
    pub step: u64,
    pub dev_bleu: Option<f64>,
    pub wall_clock_seconds: f64,
    pub tensors: Vec<TensorMeta>,
    /// Present only in resumable checkpoints.
    pub train_state: Option<TrainState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

fn take_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().unwrap()))
}

fn write_section(out: &mut Vec<u8>, name: &str, values: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    write_f32_le(values, out);
}

fn read_section(bytes: &mut &[u8], expect: &str) -> Result<Vec<f32>> {
    let n = take_u32(bytes)? as usize;
    let name = std::str::from_utf8(take(bytes, n)?).map_err(|e| CheckpointError::Section(e.to_string()))?;
    if name != expect {
        return Err(CheckpointError::Section(format!("expected `{expect}`, found `{name}`")));
    }
    let count = take_u64(bytes)? as usize;
    let raw = take(bytes, count.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
    read_f32_le(raw).ok_or(CheckpointError::Truncated)
}

impl Checkpoint {
    /// Packages a model with its vocabularies; tensor metadata is filled in
    /// from the parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &Seq2Seq<f32>,
        src_vocab: UnionVocab,
        tgt_vocab: UnionVocab,
        target_lang: LangId,
        languages: Vec<LangId>,
        lineage: Vec<String>,
        step: u64,
        dev_bleu: Option<f64>,
        wall_clock_seconds: f64,
    ) -> Self {
        let mut params = model.store().clone();
        params.zero_grad();
        let tensors = tensor_meta(&params);
        Self {
            meta: CheckpointMeta {
                config: model.config().clone(),
                src_vocab,
                tgt_vocab,
                target_lang,
                languages,
                lineage,
                step,
                dev_bleu,
                wall_clock_seconds,
                tensors,
                train_state: None,
            },
            params,
        }
    }

    pub fn model(&self) -> Result<Seq2Seq<f32>> {
        Ok(Seq2Seq::from_store(self.meta.config.clone(), self.params.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = self.meta.clone();
        meta.tensors = tensor_meta(&self.params);
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(json.len() + self.params.num_values() * 12 + 64);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            write_section(&mut out, &p.name, p.value.data());
            write_section(&mut out, &format!("{}.adam_m", p.name), &p.adam_m);
            write_section(&mut out, &format!("{}.adam_v", p.name), &p.adam_v);
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = take(b, 1)?[0];
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let n = take_u64(b)? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(b, n)?)?;
        let mut params = ParamStore::new();
        for t in &meta.tensors {
            let value = read_section(b, &t.name)?;
            let m = read_section(b, &format!("{}.adam_m", t.name))?;
            let v = read_section(b, &format!("{}.adam_v", t.name))?;
            if m.len() != value.len() || v.len() != value.len() {
                return Err(CheckpointError::Section(format!("moment size mismatch for `{}`", t.name)));
            }
            let tensor = Tensor::new(t.shape.clone(), value).map_err(|e| CheckpointError::Section(e.to_string()))?;
            let id = params.add(t.name.clone(), tensor).map_err(|e| CheckpointError::Section(e.to_string()))?;
            let p = params.get_mut(id);
            p.adam_m = m;
            p.adam_v = v;
            p.step_count = t.adam_steps;
        }
        if !b.is_empty() {
            return Err(CheckpointError::Section(format!("{} trailing bytes", b.len())));
        }
        Seq2Seq::from_store(meta.config.clone(), params.clone())?;
        Ok(Self { meta, params })
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| CheckpointError::Io { path: path.display().to_string(), source: e };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })?;
        Self::from_bytes(&bytes)
    }

    /// Whether `lang` is absent from the data the parameters were trained on.
    pub fn is_cold_start(&self, lang: &LangId) -> bool {
        !self.meta.languages.contains(lang)
    }
}

pub(crate) fn tensor_meta(params: &ParamStore<f32>) -> Vec<TensorMeta> {
    params
        .iter()
        .map(|p| TensorMeta { name: p.name.clone(), shape: p.value.shape().to_vec(), adam_steps: p.step_count })
        .collect()
}

/// Adds a new source language's vocabulary to a checkpoint. Tokens already
/// in the union keep their rows; each new token gets an embedding row drawn
/// per dimension from a normal distribution with the mean and standard
/// deviation of the existing rows. Optimizer moments of new rows are zero.
pub fn extend_checkpoint_vocab(ckpt: &Checkpoint, vocab: SubwordVocab, seed: u64) -> Result<Checkpoint> {
    let lang = vocab.lang().clone();
    let mut out = ckpt.clone();
    let added = out.meta.src_vocab.extend(vocab)?;
    let mut model = ckpt.model()?;
    let e = model.config().embed_dim;
    let table = &model.store().by_name("src_embed").expect("model has a source embedding").value;
    let rows = table.rows();
    let mut rng = init::stream(seed, &format!("extend:{lang}"));
    let mut fresh = Vec::with_capacity(added * e);
    let dists: Vec<Normal<f64>> = (0..e)
        .map(|d| {
            let col: Vec<f64> = (0..rows).map(|r| table.row(r)[d] as f64).collect();
            let mean = col.iter().sum::<f64>() / rows as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / rows as f64;
            Normal::new(mean, var.sqrt()).expect("finite moments")
        })
        .collect();
    for _ in 0..added {
        fresh.extend(dists.iter().map(|n| n.sample(&mut rng) as f32));
    }
    model.append_src_rows(&fresh)?;
    let (config, params) = model.into_parts();
    out.meta.config = config;
    out.meta.tensors = tensor_meta(&params);
    out.params = params;
    Ok(out)
}
