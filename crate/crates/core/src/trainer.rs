//! Seed-model training and adaptation to a low-resource language.
//!
//! Both entry points share one loop: draw a batch, take an Adam step, and
//! every `eval_interval` steps score the dev sets with greedy decoding. The
//! best-scoring parameters are kept; a non-improving evaluation halves the
//! learning rate, and `patience` of them in a row end the run.
//!
//! With a run directory, the loop writes `metrics.jsonl`, `best.ckpt`, and a
//! resumable `last.ckpt` after every evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use ranmt_tensor::{init, Adam, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{extend_checkpoint_vocab, tensor_meta, Checkpoint, CheckpointError, CheckpointMeta};
use crate::clock::{ClockKind, RunClock};
use crate::corpus::{
    build_dataset, CorpusError, CorpusManifest, DataStrategy, LangId, Origin, ParallelCorpus, Provenance, Split,
    TrainingDataset,
};
use crate::eval::{corpus_bleu, EvalError};
use crate::metrics::{append_record, MetricLog, MetricRecord, MetricsError};
use crate::model::{ModelError, Seq2Seq, Seq2SeqConfig};
use crate::sampler::{
    EncodedDataset, EncodedMember, EncodedPair, Sampler, SamplerError, SamplerState, SamplingStrategy,
    DEFAULT_BUCKET_WINDOW,
};
use crate::subword::{SubwordVocab, UnionVocab, VocabError};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64, last_good: Box<Checkpoint> },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Learning-rate factor applied after a non-improving evaluation.
    pub lr_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 5.0, lr_decay: 0.5 }
    }
}

impl OptimConfig {
    fn adam(&self, lr: f64) -> Adam {
        Adam { lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub eval_interval: u64,
    pub patience: u32,
    /// Hard step limit; the run also ends when patience runs out.
    pub max_steps: Option<u64>,
    /// Dev sentences per language during seed training.
    pub dev_limit: usize,
    /// Sentences per greedy-decoding batch at evaluation.
    pub eval_batch: usize,
    pub bucket_window: usize,
    pub seed: u64,
    pub clock: ClockKind,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            optim: OptimConfig::default(),
            eval_interval: 1000,
            patience: 5,
            max_steps: None,
            dev_limit: 200,
            eval_batch: 64,
            bucket_window: DEFAULT_BUCKET_WINDOW,
            seed: 1,
            clock: ClockKind::Cpu,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Invalid(m.to_string()));
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval interval must be at least 1");
        }
        if self.batch_size == 0 || self.eval_batch == 0 || self.bucket_window == 0 || self.dev_limit == 0 {
            return bad("batch sizes, bucket window and dev limit must be positive");
        }
        if !(self.optim.lr > 0.0) || !(self.optim.clip_norm > 0.0) || !(self.optim.lr_decay > 0.0) {
            return bad("learning rate, clip norm and decay must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_len_factor: usize,
    pub max_len_extra: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self { embed_dim: 128, hidden_dim: 512, dropout: 0.3, max_len_factor: 2, max_len_extra: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub strategy: DataStrategy,
    /// Leave the low-resource language out of the data (Bi⁻ / All⁻).
    pub cold_start: bool,
    pub lrl: LangId,
    pub sampling: SamplingStrategy,
    pub vocab_size: usize,
    pub lang_tags: bool,
    /// Dev languages for model selection; all member languages when unset.
    #[serde(default)]
    pub dev_langs: Option<Vec<LangId>>,
    pub model: ModelShape,
    pub train: LoopConfig,
}

impl TrainSpec {
    pub fn new(strategy: DataStrategy, cold_start: bool, lrl: LangId) -> Self {
        Self {
            strategy,
            cold_start,
            lrl,
            sampling: SamplingStrategy::Concat,
            vocab_size: 8000,
            lang_tags: false,
            dev_langs: None,
            model: ModelShape::default(),
            train: LoopConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptTarget {
    Sing,
    Bi,
}

impl std::str::FromStr for AdaptTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sing" => Ok(Self::Sing),
            "bi" => Ok(Self::Bi),
            _ => Err(format!("unknown adaptation target `{s}`; expected `sing` or `bi`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSpec {
    pub seed_checkpoint: PathBuf,
    pub target: AdaptTarget,
    /// Sampling between the low-resource language and its helper; only
    /// meaningful for the bi-source target, where it defaults to `concat`.
    pub slr: Option<SamplingStrategy>,
    pub lrl: LangId,
    /// Size of vocabularies created for languages new to the checkpoint.
    pub vocab_size: usize,
    pub train: LoopConfig,
}

impl AdaptationSpec {
    pub fn new(seed_checkpoint: PathBuf, target: AdaptTarget, lrl: LangId) -> Self {
        Self { seed_checkpoint, target, slr: None, lrl, vocab_size: 8000, train: LoopConfig::default() }
    }

    fn sampling(&self) -> Result<SamplingStrategy> {
        match (self.target, self.slr) {
            (AdaptTarget::Sing, Some(_)) => {
                Err(TrainError::Invalid("similar-language sampling needs the bi-source target".into()))
            }
            (AdaptTarget::Sing, None) => Ok(SamplingStrategy::Concat),
            (AdaptTarget::Bi, s) => Ok(s.unwrap_or(SamplingStrategy::Concat)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub run_dir: Option<PathBuf>,
    /// Continue from `last.ckpt` in the run directory when it is resumable.
    pub resume: bool,
    /// Return early after this many evaluations in this invocation.
    pub stop_after_evals: Option<u32>,
}

impl RunOptions {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self { run_dir: Some(dir.into()), ..Self::default() }
    }
}

/// Loop position saved in resumable checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub lr: f64,
    pub best_bleu: Option<f64>,
    pub best_step: u64,
    pub bad_evals: u32,
    pub finished: bool,
    pub elapsed: f64,
    pub loss_sum: f64,
    pub loss_count: u64,
    pub sampler: SamplerState,
    pub dropout_rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub best: Checkpoint,
    pub log: MetricLog,
    /// `false` when the run stopped early on request and can be resumed.
    pub finished: bool,
    pub cold_start: bool,
}

/// Encoded dev sentences with raw reference text.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub lang: LangId,
    pub srcs: Vec<Vec<u32>>,
    pub refs: Vec<String>,
}

impl DevSet {
    pub fn new(corpus: &ParallelCorpus, src_vocab: &UnionVocab) -> Result<Self> {
        let lang = corpus.src_lang().clone();
        let srcs = corpus.src_lines().map(|s| src_vocab.encode(s, &lang)).collect::<std::result::Result<_, _>>()?;
        Ok(Self { lang, srcs, refs: corpus.tgt_lines().map(str::to_string).collect() })
    }
}

/// Greedy-decodes `dev` and returns its corpus BLEU.
pub fn dev_bleu(model: &Seq2Seq<f32>, tgt_vocab: &UnionVocab, dev: &DevSet, batch: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(dev.srcs.len());
    for chunk in dev.srcs.chunks(batch.max(1)) {
        for h in model.greedy_decode_batch(chunk)? {
            hyps.push(tgt_vocab.decode(h.content())?);
        }
    }
    Ok(corpus_bleu(&hyps, &dev.refs)?.score)
}

pub fn encode_dataset(
    ds: &TrainingDataset,
    src_vocab: &UnionVocab,
    tgt_vocab: &UnionVocab,
    target_lang: &LangId,
) -> Result<EncodedDataset> {
    let mut members = Vec::with_capacity(ds.members.len());
    for m in &ds.members {
        let lang = m.corpus.src_lang().clone();
        let mut pairs = Vec::with_capacity(m.corpus.len());
        for p in m.corpus.pairs() {
            pairs.push(EncodedPair { src: src_vocab.encode(&p.src, &lang)?, tgt: tgt_vocab.encode(&p.tgt, target_lang)? });
        }
        members.push(EncodedMember { lang, origin: m.origin, pairs });
    }
    Ok(EncodedDataset { members })
}

struct RunFiles {
    dir: Option<PathBuf>,
}

impl RunFiles {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d).map_err(|e| TrainError::Io { path: d.into(), source: e })?;
        }
        Ok(Self { dir: dir.map(Path::to_path_buf) })
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn resumable(&self) -> Option<Checkpoint> {
        let path = self.path(LAST_CHECKPOINT)?;
        let ckpt = Checkpoint::load(&path).ok()?;
        ckpt.meta.train_state.as_ref()?;
        Some(ckpt)
    }

    fn reset_metrics(&self, log: &MetricLog) -> Result<()> {
        if let Some(p) = self.path(METRICS_FILE) {
            fs::write(&p, log.to_jsonl()).map_err(|e| TrainError::Io { path: p, source: e })?;
        }
        Ok(())
    }

    fn append(&self, r: &MetricRecord) -> Result<()> {
        if let Some(p) = self.path(METRICS_FILE) {
            append_record(&p, r)?;
        }
        Ok(())
    }

    fn save(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        if let Some(p) = self.path(name) {
            ckpt.save(&p)?;
        }
        Ok(())
    }
}

struct Loop<'a> {
    model: Seq2Seq<f32>,
    template: CheckpointMeta,
    data: &'a EncodedDataset,
    dev: &'a [DevSet],
    cfg: &'a LoopConfig,
    files: RunFiles,
}

impl Loop<'_> {
    fn snapshot(&self, step: u64, bleu: Option<f64>, elapsed: f64) -> Checkpoint {
        let mut params = self.model.store().clone();
        params.zero_grad();
        let mut meta = self.template.clone();
        meta.config = self.model.config().clone();
        meta.step = step;
        meta.dev_bleu = bleu;
        meta.wall_clock_seconds = elapsed;
        meta.train_state = None;
        meta.tensors = tensor_meta(&params);
        Checkpoint { meta, params }
    }

    fn evaluate(&self) -> Result<f64> {
        let mut total = 0.0;
        for d in self.dev {
            total += dev_bleu(&self.model, &self.template.tgt_vocab, d, self.cfg.eval_batch)?;
        }
        Ok(total / self.dev.len() as f64)
    }

    fn dev_label(&self) -> String {
        self.dev.iter().map(|d| d.lang.as_str()).collect::<Vec<_>>().join("+")
    }

    #[allow(clippy::too_many_arguments)]
    fn eval_point(
        &self,
        st: &mut TrainState,
        sampler: &Sampler,
        clock: &RunClock,
        log: &mut MetricLog,
        best: &mut Option<Checkpoint>,
    ) -> Result<()> {
        let bleu = self.evaluate()?;
        let elapsed = clock.elapsed(st.step);
        let rec = MetricRecord {
            step: st.step,
            wall_clock_seconds: elapsed,
            train_loss: (st.loss_count > 0).then(|| st.loss_sum / st.loss_count as f64),
            dev_bleu: bleu,
            dev_lang: self.dev_label(),
        };
        log::info!("step {} dev BLEU {:.2} lr {:.2e} loss {:?}", st.step, bleu, st.lr, rec.train_loss);
        log.push(rec.clone())?;
        self.files.append(&rec)?;
        st.loss_sum = 0.0;
        st.loss_count = 0;
        if st.best_bleu.is_none_or(|b| bleu > b) {
            st.best_bleu = Some(bleu);
            st.best_step = st.step;
            st.bad_evals = 0;
            let b = self.snapshot(st.step, Some(bleu), elapsed);
            self.files.save(BEST_CHECKPOINT, &b)?;
            *best = Some(b);
        } else {
            st.bad_evals += 1;
            st.lr *= self.cfg.optim.lr_decay;
            if st.bad_evals >= self.cfg.patience {
                st.finished = true;
            }
        }
        if self.cfg.max_steps.is_some_and(|m| st.step >= m) {
            st.finished = true;
        }
        st.elapsed = elapsed;
        st.sampler = sampler.state().clone();
        let mut last = self.snapshot(st.step, Some(bleu), elapsed);
        last.meta.train_state = Some(st.clone());
        self.files.save(LAST_CHECKPOINT, &last)?;
        Ok(())
    }

    fn run(
        mut self,
        sampling: SamplingStrategy,
        eval_at_start: bool,
        resumed: Option<(TrainState, Checkpoint, MetricLog)>,
        stop_after: Option<u32>,
        cold_start: bool,
    ) -> Result<RunOutput> {
        let (mut st, mut sampler, mut best, mut log) = match resumed {
            Some((st, best, log)) => {
                let sampler = Sampler::resume(self.data, st.sampler.clone())?;
                (st, sampler, Some(best), log)
            }
            None => {
                let sampler = Sampler::new(
                    self.data,
                    sampling,
                    self.cfg.batch_size,
                    self.cfg.bucket_window,
                    self.cfg.seed ^ init::fnv1a(b"sampler"),
                )?;
                let st = TrainState {
                    step: 0,
                    lr: self.cfg.optim.lr,
                    best_bleu: None,
                    best_step: 0,
                    bad_evals: 0,
                    finished: false,
                    elapsed: 0.0,
                    loss_sum: 0.0,
                    loss_count: 0,
                    sampler: sampler.state().clone(),
                    dropout_rng: init::stream(self.cfg.seed, "dropout"),
                };
                (st, sampler, None, MetricLog::new())
            }
        };
        self.files.reset_metrics(&log)?;
        let clock = RunClock::start(self.cfg.clock, st.elapsed, st.step);
        let mut evals = 0u32;
        if log.is_empty() && eval_at_start {
            self.eval_point(&mut st, &sampler, &clock, &mut log, &mut best)?;
            evals += 1;
        }
        while !st.finished {
            if stop_after.is_some_and(|n| evals >= n) {
                let best = best.unwrap_or_else(|| self.snapshot(st.step, None, clock.elapsed(st.step)));
                return Ok(RunOutput { best, log, finished: false, cold_start });
            }
            if self.cfg.max_steps.is_some_and(|m| st.step >= m) {
                if log.records().last().is_none_or(|r| r.step != st.step) {
                    self.eval_point(&mut st, &sampler, &clock, &mut log, &mut best)?;
                }
                st.finished = true;
                break;
            }
            let batch = sampler.next_batch();
            let adam = self.cfg.optim.adam(st.lr);
            match self.model.train_step(&batch.batch, &adam, self.cfg.optim.clip_norm, Some(&mut st.dropout_rng)) {
                Ok(loss) => {
                    st.loss_sum += loss;
                    st.loss_count += 1;
                }
                Err(ModelError::NonFiniteLoss(_)) | Err(ModelError::Tensor(TensorError::NonFiniteGradient(_))) => {
                    let last_good = self.snapshot(st.step, st.best_bleu, clock.elapsed(st.step));
                    return Err(TrainError::NonFiniteLoss { step: st.step + 1, last_good: Box::new(last_good) });
                }
                Err(e) => return Err(e.into()),
            }
            st.step += 1;
            let at_max = self.cfg.max_steps.is_some_and(|m| st.step >= m);
            if st.step % self.cfg.eval_interval == 0 || at_max {
                self.eval_point(&mut st, &sampler, &clock, &mut log, &mut best)?;
                evals += 1;
            }
        }
        let best = best.expect("a finished run has evaluated at least once");
        Ok(RunOutput { best, log, finished: true, cold_start })
    }
}

fn load_resume(files: &RunFiles, resume: bool) -> Result<Option<(Checkpoint, TrainState, Checkpoint, MetricLog)>> {
    if !resume {
        return Ok(None);
    }
    let Some(last) = files.resumable() else { return Ok(None) };
    let st = last.meta.train_state.clone().expect("checked by resumable");
    let best = Checkpoint::load(&files.path(BEST_CHECKPOINT).expect("run dir set"))?;
    let mut log = match files.path(METRICS_FILE) {
        Some(p) if p.exists() => MetricLog::read(&p)?,
        _ => MetricLog::new(),
    };
    log.truncate_after(st.step);
    Ok(Some((last, st, best, log)))
}

fn dev_sets(
    manifest: &CorpusManifest,
    langs: &[LangId],
    src_vocab: &UnionVocab,
    limit: Option<usize>,
) -> Result<Vec<DevSet>> {
    let mut out = Vec::new();
    for lang in langs {
        if let Some(c) = manifest.corpus(lang, Split::Dev)? {
            let c = match limit {
                Some(n) => c.head(n),
                None => c,
            };
            out.push(DevSet::new(&c, src_vocab)?);
        }
    }
    if out.is_empty() {
        return Err(TrainError::Invalid("no dev data for the training languages".into()));
    }
    Ok(out)
}

/// Trains a model from scratch on the dataset described by `spec`.
pub fn train_seed(manifest: &CorpusManifest, spec: &TrainSpec, opts: &RunOptions) -> Result<RunOutput> {
    spec.train.validate()?;
    let files = RunFiles::new(opts.run_dir.as_deref())?;
    let dataset = build_dataset(manifest, spec.strategy, &spec.lrl, spec.cold_start)?;
    let langs = dataset.languages();
    let resumed = load_resume(&files, opts.resume)?;

    let (model, template) = match &resumed {
        Some((last, ..)) => (last.model()?, last.meta.clone()),
        None => {
            let mut vocabs = Vec::new();
            for m in &dataset.members {
                vocabs.push(SubwordVocab::train(m.corpus.src_lines(), spec.vocab_size, m.corpus.src_lang().clone())?);
            }
            let src_vocab = if spec.lang_tags { UnionVocab::with_lang_tags(vocabs)? } else { UnionVocab::new(vocabs)? };
            let tgt_lines = dataset.members.iter().flat_map(|m| m.corpus.tgt_lines());
            let tgt_vocab = UnionVocab::new([SubwordVocab::train(tgt_lines, spec.vocab_size, manifest.target_lang.clone())?])?;
            let config = Seq2SeqConfig {
                embed_dim: spec.model.embed_dim,
                hidden_dim: spec.model.hidden_dim,
                src_vocab_size: src_vocab.len(),
                tgt_vocab_size: tgt_vocab.len(),
                dropout: spec.model.dropout,
                max_len_factor: spec.model.max_len_factor,
                max_len_extra: spec.model.max_len_extra,
            };
            let model = Seq2Seq::new(config, spec.train.seed)?;
            let ckpt = Checkpoint::new(
                &model,
                src_vocab,
                tgt_vocab,
                manifest.target_lang.clone(),
                langs.clone(),
                vec![dataset.provenance.to_string()],
                0,
                None,
                0.0,
            );
            (model, ckpt.meta)
        }
    };
    let data = encode_dataset(&dataset, &template.src_vocab, &template.tgt_vocab, &manifest.target_lang)?;
    let dev_langs = spec.dev_langs.as_ref().unwrap_or(&langs);
    if let Some(l) = dev_langs.iter().find(|l| !langs.contains(l)) {
        return Err(TrainError::Invalid(format!("dev language {l} is not in the training data")));
    }
    let dev = dev_sets(manifest, dev_langs, &template.src_vocab, Some(spec.train.dev_limit))?;
    let lp = Loop { model, template, data: &data, dev: &dev, cfg: &spec.train, files };
    let resumed = resumed.map(|(_, st, best, log)| (st, best, log));
    lp.run(spec.sampling, false, resumed, opts.stop_after_evals, false)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Continues training a seed checkpoint on the low-resource language,
/// optionally mixed with its helper. A language the seed never saw gets its
/// subword vocabulary trained now and appended to the checkpoint's.
pub fn adapt(manifest: &CorpusManifest, spec: &AdaptationSpec, opts: &RunOptions) -> Result<RunOutput> {
    spec.train.validate()?;
    let sampling = spec.sampling()?;
    let files = RunFiles::new(opts.run_dir.as_deref())?;
    for name in [BEST_CHECKPOINT, LAST_CHECKPOINT] {
        if files.path(name).is_some_and(|p| same_file(&p, &spec.seed_checkpoint)) {
            return Err(TrainError::Invalid("the run directory would overwrite the seed checkpoint".into()));
        }
    }
    let seed = Checkpoint::load(&spec.seed_checkpoint)?;
    let cold_start = seed.is_cold_start(&spec.lrl);
    let strategy = match spec.target {
        AdaptTarget::Sing => DataStrategy::Sing,
        AdaptTarget::Bi => DataStrategy::Bi,
    };
    let dataset = build_dataset(manifest, strategy, &spec.lrl, false)?;
    if !dataset.members.iter().any(|m| m.origin == Origin::Lrl) {
        return Err(CorpusError::MissingTrainData(spec.lrl.clone()).into());
    }
    let resumed = load_resume(&files, opts.resume)?;

    let (model, template) = match &resumed {
        Some((last, ..)) => (last.model()?, last.meta.clone()),
        None => {
            let mut ckpt = seed.clone();
            for m in &dataset.members {
                let lang = m.corpus.src_lang();
                if !ckpt.meta.src_vocab.contains_lang(lang) {
                    let v = SubwordVocab::train(m.corpus.src_lines(), spec.vocab_size, lang.clone())?;
                    ckpt = extend_checkpoint_vocab(&ckpt, v, spec.train.seed)?;
                }
            }
            let mut model = ckpt.model()?;
            model.store_mut().reset_moments();
            let mut meta = ckpt.meta;
            for lang in dataset.languages() {
                if !meta.languages.contains(&lang) {
                    meta.languages.push(lang);
                }
            }
            let label = match spec.target {
                AdaptTarget::Sing => "Sing".to_string(),
                AdaptTarget::Bi => format!("Bi:{sampling}"),
            };
            meta.lineage.push(label);
            (model, meta)
        }
    };
    let data = encode_dataset(&dataset, &template.src_vocab, &template.tgt_vocab, &manifest.target_lang)?;
    let dev = dev_sets(manifest, std::slice::from_ref(&spec.lrl), &template.src_vocab, None)?;
    let lp = Loop { model, template, data: &data, dev: &dev, cfg: &spec.train, files };
    let resumed = resumed.map(|(_, st, best, log)| (st, best, log));
    lp.run(sampling, true, resumed, opts.stop_after_evals, cold_start)
}

/// Provenance label of a training request, for reporting.
pub fn provenance(strategy: DataStrategy, cold_start: bool) -> Option<Provenance> {
    match (strategy, cold_start) {
        (DataStrategy::Sing, false) => Some(Provenance::Sing),
        (DataStrategy::Sing, true) => None,
        (DataStrategy::Bi, false) => Some(Provenance::Bi),
        (DataStrategy::Bi, true) => Some(Provenance::BiMinus),
        (DataStrategy::All, false) => Some(Provenance::All),
        (DataStrategy::All, true) => Some(Provenance::AllMinus),
    }
}
