//! Command-line workflow: build vocabularies, train seed models, adapt them
//! to a low-resource language, translate, score, and export curves.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ranmt::checkpoint::Checkpoint;
use ranmt::clock::ClockKind;
use ranmt::corpus::synth::{synth_related_language, write_suite, BaseCorpusConfig, SuiteConfig};
use ranmt::corpus::{load_corpus_with, CorpusManifest, DataStrategy, LangId, Split};
use ranmt::eval::{corpus_bleu, time_to_threshold};
use ranmt::metrics::MetricLog;
use ranmt::sampler::SamplingStrategy;
use ranmt::subword::SubwordVocab;
use ranmt::trainer::{
    adapt, train_seed, AdaptTarget, AdaptationSpec, LoopConfig, ModelShape, OptimConfig, RunOptions, RunOutput,
    TrainSpec, METRICS_FILE,
};
use serde::{Deserialize, Serialize};

/// Name of the frozen configuration written into every run directory.
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, Parser)]
#[command(name = "ranmt", version, about = "Multilingual seed models and rapid adaptation for low-resource NMT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a subword vocabulary for one language of a manifest.
    Vocab(VocabArgs),
    /// Train a model from scratch (seed model or baseline).
    Train(TrainArgs),
    /// Fine-tune a seed checkpoint on a low-resource language.
    Adapt(AdaptArgs),
    /// Translate a file of source sentences, one per line.
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Eval(EvalArgs),
    /// Export metric logs as `hours,dev_bleu` CSV.
    Curves(CurvesArgs),
    /// Generate synthetic cipher-language corpora.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Language whose training text is used; the target language uses the
    /// target side of every training corpus.
    #[arg(long)]
    pub lang: LangId,
    #[arg(long, default_value_t = 8000)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LoopArgs {
    /// Sentences per mini-batch.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Global gradient-norm clip.
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Learning-rate factor after a non-improving evaluation.
    #[arg(long, default_value_t = 0.5)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 1000)]
    pub eval_interval: u64,
    /// Non-improving evaluations before stopping.
    #[arg(long, default_value_t = 5)]
    pub patience: u32,
    /// Hard step limit (unlimited by default).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Dev sentences per language during seed training.
    #[arg(long, default_value_t = 200)]
    pub dev_limit: usize,
    #[arg(long, default_value_t = 64)]
    pub eval_batch: usize,
    /// Shuffled window sorted by length before batching.
    #[arg(long, default_value_t = 1024)]
    pub bucket_window: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `cpu` (thread CPU time) or `virtual` (one second per step).
    #[arg(long, default_value = "cpu")]
    pub clock: ClockKind,
}

impl LoopArgs {
    pub fn to_config(&self) -> LoopConfig {
        LoopConfig {
            batch_size: self.batch_size,
            optim: OptimConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                clip_norm: self.clip_norm,
                lr_decay: self.lr_decay,
            },
            eval_interval: self.eval_interval,
            patience: self.patience,
            max_steps: self.max_steps,
            dev_limit: self.dev_limit,
            eval_batch: self.eval_batch,
            bucket_window: self.bucket_window,
            seed: self.seed,
            clock: self.clock,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run directory for checkpoints, metrics and the frozen config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-run a frozen `run_config.json`; other training flags are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue an interrupted run in the same directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    /// `sing`, `bi` or `all`.
    #[arg(long, default_value = "all")]
    pub strategy: DataStrategy,
    /// Exclude the low-resource language (Bi⁻ / All⁻ seeds).
    #[arg(long)]
    pub cold: bool,
    #[arg(long, required_unless_present = "config")]
    pub lrl: Option<LangId>,
    /// `concat` or `balanced:R-S`.
    #[arg(long, default_value = "concat")]
    pub slr: SamplingStrategy,
    /// Subword vocabulary size per language.
    #[arg(long, default_value_t = 8000)]
    pub vocab_size: usize,
    /// Prefix each source sentence with a language token.
    #[arg(long)]
    pub lang_tags: bool,
    /// Comma-separated dev languages for model selection (default: all
    /// training languages).
    #[arg(long, value_delimiter = ',')]
    pub dev_langs: Option<Vec<LangId>>,
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Decoding stops after `factor * source length + extra` tokens.
    #[arg(long, default_value_t = 2)]
    pub max_len_factor: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len_extra: usize,
    #[command(flatten)]
    pub train: LoopArgs,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub seed_checkpoint: Option<PathBuf>,
    /// `sing` or `bi`.
    #[arg(long, default_value = "bi")]
    pub target: AdaptTarget,
    /// `concat` or `balanced:R-S`; bi target only.
    #[arg(long)]
    pub slr: Option<SamplingStrategy>,
    #[arg(long, required_unless_present = "config")]
    pub lrl: Option<LangId>,
    /// Vocabulary size for languages new to the checkpoint.
    #[arg(long, default_value_t = 8000)]
    pub vocab_size: usize,
    #[command(flatten)]
    pub train: LoopArgs,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Source language; may be omitted for single-language checkpoints.
    #[arg(long)]
    pub lang: Option<LangId>,
    /// Beam width; 1 is greedy decoding.
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Metric logs (`metrics.jsonl`).
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Output file for one log, or a directory for several (named after
    /// each log's run directory). One log defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also report hours to reach this dev BLEU on standard error.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of word types kept from the helper (suite) or the base corpus.
    #[arg(long, default_value_t = 0.8)]
    pub overlap: f64,
    /// Cipher this corpus instead of generating a suite.
    #[arg(long, requires_all = ["base_tgt", "lang"])]
    pub base_src: Option<PathBuf>,
    #[arg(long)]
    pub base_tgt: Option<PathBuf>,
    /// Language code of the ciphered corpus.
    #[arg(long)]
    pub lang: Option<LangId>,
    #[arg(long, default_value_t = 150)]
    pub lexicon_size: usize,
    #[arg(long, default_value_t = 5000)]
    pub hrl_train: usize,
    #[arg(long, default_value_t = 200)]
    pub lrl_train: usize,
    #[arg(long, default_value_t = 2000)]
    pub other_train: usize,
    #[arg(long, default_value_t = 200)]
    pub dev: usize,
    #[arg(long, default_value_t = 200)]
    pub test: usize,
}

/// Fully resolved training job; frozen into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum RunConfig {
    Train { manifest: PathBuf, out: PathBuf, spec: TrainSpec },
    Adapt { manifest: PathBuf, out: PathBuf, spec: AdaptationSpec },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn out(&self) -> &Path {
        match self {
            RunConfig::Train { out, .. } | RunConfig::Adapt { out, .. } => out,
        }
    }

    pub fn with_out(mut self, dir: PathBuf) -> Self {
        match &mut self {
            RunConfig::Train { out, .. } | RunConfig::Adapt { out, .. } => *out = dir,
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Runs the job, writing the frozen config, metrics, checkpoints and
    /// the curve CSV under the run directory.
    pub fn execute(&self, resume: bool) -> Result<RunOutput> {
        let out = self.out();
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let frozen = out.join(RUN_CONFIG_FILE);
        if resume && frozen.exists() && RunConfig::load(&frozen)? != *self {
            bail!("{} describes a different run; refusing to resume", frozen.display());
        }
        fs::write(&frozen, self.to_json()).with_context(|| format!("writing {}", frozen.display()))?;
        let opts = RunOptions { resume, ..RunOptions::in_dir(out) };
        let output = match self {
            RunConfig::Train { manifest, spec, .. } => train_seed(&CorpusManifest::load(manifest)?, spec, &opts)?,
            RunConfig::Adapt { manifest, spec, .. } => adapt(&CorpusManifest::load(manifest)?, spec, &opts)?,
        };
        fs::write(out.join(CURVE_FILE), output.log.curve_csv())?;
        Ok(output)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

fn resolve_out(run: &RunArgs, base: Option<RunConfig>) -> Result<Option<RunConfig>> {
    let Some(path) = &run.config else { return Ok(base) };
    let cfg = RunConfig::load(path)?;
    Ok(Some(match &run.out {
        Some(o) => cfg.with_out(o.clone()),
        None => cfg,
    }))
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        if let Some(cfg) = resolve_out(&self.run, None)? {
            return Ok(cfg);
        }
        let out = self.run.out.clone().context("--out is required")?;
        let manifest = absolute(self.manifest.as_ref().context("--manifest is required")?)?;
        let lrl = self.lrl.clone().context("--lrl is required")?;
        let spec = TrainSpec {
            strategy: self.strategy,
            cold_start: self.cold,
            lrl,
            sampling: self.slr,
            vocab_size: self.vocab_size,
            lang_tags: self.lang_tags,
            dev_langs: self.dev_langs.clone(),
            model: ModelShape {
                embed_dim: self.embed_dim,
                hidden_dim: self.hidden_dim,
                dropout: self.dropout,
                max_len_factor: self.max_len_factor,
                max_len_extra: self.max_len_extra,
            },
            train: self.train.to_config(),
        };
        Ok(RunConfig::Train { manifest, out, spec })
    }
}

impl AdaptArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        if let Some(cfg) = resolve_out(&self.run, None)? {
            return Ok(cfg);
        }
        let out = self.run.out.clone().context("--out is required")?;
        let manifest = absolute(self.manifest.as_ref().context("--manifest is required")?)?;
        let seed = absolute(self.seed_checkpoint.as_ref().context("--seed-checkpoint is required")?)?;
        let spec = AdaptationSpec {
            seed_checkpoint: seed,
            target: self.target,
            slr: self.slr,
            lrl: self.lrl.clone().context("--lrl is required")?,
            vocab_size: self.vocab_size,
            train: self.train.to_config(),
        };
        Ok(RunConfig::Adapt { manifest, out, spec })
    }
}

fn report(output: &RunOutput, out: &Path) {
    let best = &output.best.meta;
    eprintln!(
        "best dev BLEU {:.2} at step {} ({} evaluations, {}); artifacts in {}",
        best.dev_bleu.unwrap_or(0.0),
        best.step,
        output.log.len(),
        if output.cold_start { "cold start" } else { "warm start" },
        out.display()
    );
}

fn cmd_vocab(a: &VocabArgs) -> Result<()> {
    let m = CorpusManifest::load(&a.manifest)?;
    let vocab = if a.lang == m.target_lang {
        let mut lines = Vec::new();
        for e in m.entries() {
            if let Some(c) = m.corpus(&e.lang, Split::Train)? {
                lines.extend(c.tgt_lines().map(str::to_string));
            }
        }
        SubwordVocab::train(lines.iter().map(String::as_str), a.size, a.lang.clone())?
    } else {
        let c = m
            .corpus(&a.lang, Split::Train)?
            .with_context(|| format!("{} has no training corpus in the manifest", a.lang))?;
        SubwordVocab::train(c.src_lines(), a.size, a.lang.clone())?
    };
    fs::write(&a.out, vocab.to_text()).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("{} tokens for {} written to {}", vocab.len(), a.lang, a.out.display());
    Ok(())
}

fn cmd_translate(a: &TranslateArgs) -> Result<()> {
    if a.beam == 0 {
        bail!("beam width must be at least 1");
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let lang = match &a.lang {
        Some(l) => l.clone(),
        None => {
            let langs: Vec<&LangId> = ckpt.meta.src_vocab.languages().collect();
            match langs.as_slice() {
                [only] => (*only).clone(),
                _ => bail!("checkpoint covers several languages; pass --lang"),
            }
        }
    };
    let model = ckpt.model()?;
    let input = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut text = String::new();
    for line in input.lines() {
        if !line.trim().is_empty() {
            let src = ckpt.meta.src_vocab.encode(line, &lang)?;
            let hyp = if a.beam == 1 { model.greedy_decode(&src)? } else { model.beam_search(&src, a.beam)?.best };
            text.push_str(&ckpt.meta.tgt_vocab.decode(hyp.content())?);
        }
        text.push('\n');
    }
    match &a.output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_lines(p: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?.lines().map(str::to_string).collect())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let report = corpus_bleu(&read_lines(&a.hyp)?, &read_lines(&a.reference)?)?;
    println!("{}", serde_json::to_string(&report)?);
    let p = report.precisions.map(|x| format!("{:.1}", 100.0 * x)).join("/");
    println!(
        "BLEU = {:.2}, {p} (BP = {:.3}, hyp_len = {}, ref_len = {})",
        report.score, report.brevity_penalty, report.hyp_len, report.ref_len
    );
    Ok(())
}

fn cmd_curves(a: &CurvesArgs) -> Result<()> {
    let mut named = Vec::new();
    for path in &a.logs {
        let log = MetricLog::read(path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(t) = a.threshold {
            match time_to_threshold(&log, t) {
                Some(h) => eprintln!("{}: {h:.6} h to reach {t}", path.display()),
                None => eprintln!("{}: never reaches {t}", path.display()),
            }
        }
        named.push((path, log));
    }
    match (&a.out, named.as_slice()) {
        (None, [(_, log)]) => io::stdout().write_all(log.curve_csv().as_bytes())?,
        (Some(p), [(_, log)]) if !p.is_dir() => fs::write(p, log.curve_csv())?,
        (None, _) => bail!("several logs need --out DIR"),
        (Some(dir), logs) => {
            fs::create_dir_all(dir)?;
            for (path, log) in logs {
                let stem = path
                    .parent()
                    .and_then(Path::file_name)
                    .or_else(|| path.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "curve".into());
                fs::write(dir.join(format!("{stem}.csv")), log.curve_csv())?;
            }
        }
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    match (&a.base_src, &a.base_tgt, &a.lang) {
        (Some(src), Some(tgt), Some(lang)) => {
            let base = load_corpus_with(src, tgt, LangId::new("base")?, LangId::new("eng")?, Split::Train, usize::MAX)?;
            let out = synth_related_language(&base, a.seed, a.overlap, lang.clone())?;
            fs::create_dir_all(&a.out)?;
            out.write(&a.out.join(format!("{lang}.src")), &a.out.join(format!("{lang}.tgt")))?;
            eprintln!("{} pairs written to {}", out.len(), a.out.display());
        }
        (None, None, _) => {
            let cfg = SuiteConfig {
                base: BaseCorpusConfig { lexicon_size: a.lexicon_size, seed: a.seed, ..BaseCorpusConfig::default() },
                hrl_train: a.hrl_train,
                lrl_train: a.lrl_train,
                other_train: a.other_train,
                dev: a.dev,
                test: a.test,
                overlap: a.overlap,
                seed: a.seed,
                ..SuiteConfig::default()
            };
            let manifest = write_suite(&a.out, &cfg)?;
            eprintln!("suite written; manifest at {}", manifest.display());
        }
        _ => bail!("--base-src, --base-tgt and --lang go together"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Vocab(a) => cmd_vocab(a),
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let out = cfg.execute(a.run.resume)?;
            report(&out, cfg.out());
            Ok(())
        }
        Command::Adapt(a) => {
            let cfg = a.resolve()?;
            let out = cfg.execute(a.run.resume)?;
            report(&out, cfg.out());
            Ok(())
        }
        Command::Translate(a) => cmd_translate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Path of a run directory's metric log.
pub fn metrics_path(run_dir: &Path) -> PathBuf {
    run_dir.join(METRICS_FILE)
}
