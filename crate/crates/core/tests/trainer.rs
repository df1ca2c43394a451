use std::fs;
use std::path::Path;

use ranmt::checkpoint::Checkpoint;
use ranmt::clock::ClockKind;
use ranmt::corpus::synth::{write_suite, BaseCorpusConfig, SuiteConfig};
use ranmt::corpus::{CorpusManifest, DataStrategy, LangId, Split};
use ranmt::metrics::MetricLog;
use ranmt::sampler::SamplingStrategy;
use ranmt::trainer::{
    adapt, dev_bleu, train_seed, AdaptTarget, AdaptationSpec, DevSet, LoopConfig, ModelShape, RunOptions,
    TrainError, TrainSpec, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE,
};

fn lang(s: &str) -> LangId {
    LangId::new(s).unwrap()
}

fn suite(dir: &Path) -> CorpusManifest {
    let cfg = SuiteConfig {
        base: BaseCorpusConfig { lexicon_size: 30, min_len: 3, max_len: 5, ..BaseCorpusConfig::default() },
        hrl_train: 80,
        lrl_train: 24,
        other_train: 40,
        dev: 8,
        test: 4,
        ..SuiteConfig::default()
    };
    CorpusManifest::load(&write_suite(dir, &cfg).unwrap()).unwrap()
}

fn tiny_loop(max_steps: u64) -> LoopConfig {
    LoopConfig {
        batch_size: 8,
        eval_interval: 5,
        max_steps: Some(max_steps),
        eval_batch: 16,
        clock: ClockKind::Virtual,
        seed: 11,
        ..LoopConfig::default()
    }
}

fn tiny_spec(strategy: DataStrategy, cold: bool, max_steps: u64) -> TrainSpec {
    TrainSpec {
        vocab_size: 60,
        model: ModelShape { embed_dim: 8, hidden_dim: 12, dropout: 0.1, ..ModelShape::default() },
        train: tiny_loop(max_steps),
        ..TrainSpec::new(strategy, cold, lang("lrl"))
    }
}

fn file_bytes(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn cold_bi_seed_records_only_the_helper() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let out = train_seed(&m, &tiny_spec(DataStrategy::Bi, true, 10), &RunOptions::default()).unwrap();
    assert_eq!(out.best.meta.languages, [lang("hrl")]);
    assert_eq!(out.best.meta.lineage, ["Bi-"]);
    assert!(!out.best.meta.src_vocab.contains_lang(&lang("lrl")));
    assert_eq!(out.log.records().iter().map(|r| r.step).collect::<Vec<_>>(), [5, 10]);
    assert!(out.log.records().iter().all(|r| r.dev_lang == "hrl"));
    assert!(out.finished);
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = tiny_spec(DataStrategy::All, false, 15);
    train_seed(&m, &spec, &RunOptions::in_dir(a.path())).unwrap();
    train_seed(&m, &spec, &RunOptions::in_dir(b.path())).unwrap();
    for f in [METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        assert_eq!(file_bytes(a.path(), f), file_bytes(b.path(), f), "{f}");
    }
    let log = MetricLog::read(&a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(log.records()[0].dev_lang, "lrl+hrl+oth");
    assert_eq!(log.records().iter().map(|r| r.wall_clock_seconds).collect::<Vec<_>>(), [5.0, 10.0, 15.0]);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let spec = tiny_spec(DataStrategy::Bi, false, 25);
    let (full, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let whole = train_seed(&m, &spec, &RunOptions::in_dir(full.path())).unwrap();

    let first = RunOptions { stop_after_evals: Some(2), ..RunOptions::in_dir(split.path()) };
    let part = train_seed(&m, &spec, &first).unwrap();
    assert!(!part.finished);
    assert_eq!(part.log.len(), 2);
    let resume = RunOptions { resume: true, ..RunOptions::in_dir(split.path()) };
    let rest = train_seed(&m, &spec, &resume).unwrap();
    assert!(rest.finished);
    assert_eq!(rest.log, whole.log);
    assert_eq!(rest.best, whole.best);
    for f in [METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        assert_eq!(file_bytes(full.path(), f), file_bytes(split.path(), f), "{f}");
    }
}

#[test]
fn patience_halves_the_rate_and_stops() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let mut spec = tiny_spec(DataStrategy::Sing, false, 1000);
    spec.train.optim.lr = 1e-12;
    spec.train.patience = 2;
    spec.train.eval_interval = 1;
    let dir = tempfile::tempdir().unwrap();
    let out = train_seed(&m, &spec, &RunOptions::in_dir(dir.path())).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.best.meta.step, 1);
    let last = Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    let st = last.meta.train_state.unwrap();
    assert!(st.finished);
    assert_eq!(st.lr, 0.25e-12);
    assert_eq!(st.bad_evals, 2);
}

#[test]
fn exploding_updates_abort_with_the_last_good_parameters() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let mut spec = tiny_spec(DataStrategy::Sing, false, 200);
    spec.train.optim.lr = 1e36;
    match train_seed(&m, &spec, &RunOptions::default()) {
        Err(TrainError::NonFiniteLoss { step, last_good }) => {
            assert!(step >= 1);
            assert!(last_good.params.iter().all(|p| p.value.data().iter().all(|x| x.is_finite())));
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn invalid_loop_settings_are_rejected() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let mut spec = tiny_spec(DataStrategy::Sing, false, 5);
    spec.train.patience = 0;
    assert!(matches!(train_seed(&m, &spec, &RunOptions::default()), Err(TrainError::Invalid(_))));
    spec.train.patience = 1;
    spec.train.eval_interval = 0;
    assert!(matches!(train_seed(&m, &spec, &RunOptions::default()), Err(TrainError::Invalid(_))));
}

fn seed_ckpt(m: &CorpusManifest, dir: &Path, strategy: DataStrategy, cold: bool) -> std::path::PathBuf {
    train_seed(m, &tiny_spec(strategy, cold, 20), &RunOptions::in_dir(dir)).unwrap();
    dir.join(BEST_CHECKPOINT)
}

fn adapt_spec(seed: &Path, target: AdaptTarget, max_steps: u64) -> AdaptationSpec {
    AdaptationSpec { vocab_size: 60, train: tiny_loop(max_steps), ..AdaptationSpec::new(seed.into(), target, lang("lrl")) }
}

#[test]
fn zero_step_cold_adaptation_only_appends_rows() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let sd = tempfile::tempdir().unwrap();
    let seed_path = seed_ckpt(&m, sd.path(), DataStrategy::Bi, true);
    let before = fs::read(&seed_path).unwrap();
    let seed = Checkpoint::load(&seed_path).unwrap();

    let out = adapt(&m, &adapt_spec(&seed_path, AdaptTarget::Sing, 0), &RunOptions::default()).unwrap();
    assert!(out.cold_start);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log.records()[0].step, 0);
    assert_eq!(out.log.records()[0].train_loss, None);
    assert_eq!(out.log.records()[0].dev_lang, "lrl");
    assert!(out.best.meta.src_vocab.contains_lang(&lang("lrl")));
    assert_eq!(out.best.meta.languages, [lang("hrl"), lang("lrl")]);
    assert_eq!(out.best.meta.lineage, ["Bi-", "Sing"]);
    for p in seed.params.iter() {
        let q = out.best.params.by_name(&p.name).unwrap();
        let n = p.value.len();
        assert_eq!(&q.value.data()[..n], p.value.data(), "{}", p.name);
        assert!(q.adam_m.iter().chain(&q.adam_v).all(|&x| x == 0.0));
    }
    assert_eq!(fs::read(&seed_path).unwrap(), before);
}

#[test]
fn warm_adaptation_never_ends_below_the_seed() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let sd = tempfile::tempdir().unwrap();
    let seed_path = seed_ckpt(&m, sd.path(), DataStrategy::All, false);
    let seed = Checkpoint::load(&seed_path).unwrap();
    let dev_corpus = m.corpus(&lang("lrl"), Split::Dev).unwrap().unwrap();
    let dev = DevSet::new(&dev_corpus, &seed.meta.src_vocab).unwrap();
    let seed_score = dev_bleu(&seed.model().unwrap(), &seed.meta.tgt_vocab, &dev, 16).unwrap();

    let out = adapt(&m, &adapt_spec(&seed_path, AdaptTarget::Sing, 20), &RunOptions::default()).unwrap();
    assert!(!out.cold_start);
    assert_eq!(out.log.records()[0].dev_bleu, seed_score);
    assert!(out.best.meta.dev_bleu.unwrap() >= seed_score);
    assert_eq!(out.best.meta.src_vocab, seed.meta.src_vocab);
}

#[test]
fn bi_adaptation_accepts_balanced_sampling_and_sing_refuses_it() {
    let data = tempfile::tempdir().unwrap();
    let m = suite(data.path());
    let sd = tempfile::tempdir().unwrap();
    let seed_path = seed_ckpt(&m, sd.path(), DataStrategy::Bi, true);
    let mut spec = adapt_spec(&seed_path, AdaptTarget::Bi, 10);
    spec.slr = Some(SamplingStrategy::Balanced { lrl: 1, other: 4 });
    let out = adapt(&m, &spec, &RunOptions::default()).unwrap();
    assert_eq!(out.best.meta.lineage.last().unwrap(), "Bi:balanced:1-4");

    spec.target = AdaptTarget::Sing;
    assert!(matches!(adapt(&m, &spec, &RunOptions::default()), Err(TrainError::Invalid(_))));
    let clash = adapt_spec(&seed_path, AdaptTarget::Sing, 5);
    assert!(matches!(adapt(&m, &clash, &RunOptions::in_dir(sd.path())), Err(TrainError::Invalid(_))));
}
