use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use ranmt::corpus::synth::{generate_base, synth_related_language, write_suite, BaseCorpusConfig, Cipher, SuiteConfig};
use ranmt::corpus::{
    build_dataset, load_corpus, CorpusError, CorpusManifest, DataStrategy, LangId, Origin, ParallelCorpus, Split,
};

fn lang(s: &str) -> LangId {
    LangId::new(s).unwrap()
}

fn small_suite() -> SuiteConfig {
    SuiteConfig {
        base: BaseCorpusConfig { lexicon_size: 60, ..BaseCorpusConfig::default() },
        hrl_train: 120,
        lrl_train: 30,
        other_train: 50,
        dev: 20,
        test: 10,
        ..SuiteConfig::default()
    }
}

#[test]
fn loading_keeps_sides_aligned_and_drops_bad_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.src"), dir.path().join("a.eng"));
    let long = vec!["x"; 81].join(" ");
    fs::write(&s, format!("a b\n  \n{long}\nc\n")).unwrap();
    fs::write(&t, "A B\nX\nY\nC\n").unwrap();
    let c = load_corpus(&s, &t, lang("xx"), Split::Train).unwrap();
    assert_eq!(c.src_lines().collect::<Vec<_>>(), ["a b", "c"]);
    assert_eq!(c.tgt_lines().count(), c.len());
    assert_eq!((c.dropped().empty, c.dropped().too_long), (1, 1));

    fs::write(&t, "A B\nX\n").unwrap();
    assert!(matches!(load_corpus(&s, &t, lang("xx"), Split::Train), Err(CorpusError::Alignment { .. })));
    fs::write(&s, "\n").unwrap();
    fs::write(&t, "\n").unwrap();
    assert!(matches!(load_corpus(&s, &t, lang("xx"), Split::Train), Err(CorpusError::Empty(_))));
    let missing = dir.path().join("nope");
    assert!(matches!(load_corpus(&missing, &t, lang("xx"), Split::Train), Err(CorpusError::Io { .. })));
}

#[test]
fn language_ids_are_lowercase_codes() {
    assert!(LangId::new("aze").is_ok());
    for bad in ["", "AZE", "a z", "é"] {
        assert!(LangId::new(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn dataset_strategies_select_the_right_languages() {
    let dir = tempfile::tempdir().unwrap();
    let m = CorpusManifest::load(&write_suite(dir.path(), &small_suite()).unwrap()).unwrap();
    let (lrl, hrl, oth) = (lang("lrl"), lang("hrl"), lang("oth"));

    let sing = build_dataset(&m, DataStrategy::Sing, &lrl, false).unwrap();
    assert_eq!(sing.languages(), [lrl.clone()]);
    assert_eq!(sing.members[0].corpus, m.corpus(&lrl, Split::Train).unwrap().unwrap());

    let bi = build_dataset(&m, DataStrategy::Bi, &lrl, false).unwrap();
    assert_eq!(bi.languages(), [lrl.clone(), hrl.clone()]);
    assert_eq!(bi.members[1].origin, Origin::Hrl);

    let bi_minus = build_dataset(&m, DataStrategy::Bi, &lrl, true).unwrap();
    assert_eq!(bi_minus.languages(), [hrl.clone()]);
    assert_eq!(bi_minus.count_lang(&lrl), 0);
    assert_eq!(bi_minus.provenance.to_string(), "Bi-");

    let all = build_dataset(&m, DataStrategy::All, &lrl, false).unwrap();
    let total: usize = [&lrl, &hrl, &oth].iter().map(|l| m.corpus(l, Split::Train).unwrap().unwrap().len()).sum();
    assert_eq!(all.num_pairs(), total);

    let all_minus = build_dataset(&m, DataStrategy::All, &lrl, true).unwrap();
    assert_eq!(all_minus.count_lang(&lrl), 0);
    assert_eq!(all_minus.num_pairs(), total - sing.num_pairs());

    assert!(matches!(build_dataset(&m, DataStrategy::Sing, &lrl, true), Err(CorpusError::InvalidCombination(_))));
    assert!(matches!(build_dataset(&m, DataStrategy::Bi, &hrl, false), Err(CorpusError::MissingHelper(_))));
    assert!(matches!(build_dataset(&m, DataStrategy::Sing, &lang("zzz"), false), Err(CorpusError::UnknownLang(_))));
}

#[test]
fn manifest_validation_rejects_broken_setups() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_suite(dir.path(), &small_suite()).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();

    let mut no_helper = json.clone();
    no_helper["helpers"] = serde_json::json!({});
    assert!(CorpusManifest::from_json(&no_helper.to_string(), dir.path()).is_err());

    let mut bad_helper = json.clone();
    bad_helper["helpers"] = serde_json::json!({"lrl": "oth"});
    assert!(CorpusManifest::from_json(&bad_helper.to_string(), dir.path()).is_err());

    fs::remove_file(dir.path().join("oth.test.src")).unwrap();
    assert!(CorpusManifest::load(&path).is_err());
    assert!(CorpusManifest::from_json("{", dir.path()).is_err());
}

#[test]
fn manifest_json_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let m = CorpusManifest::load(&write_suite(dir.path(), &small_suite()).unwrap()).unwrap();
    let again = CorpusManifest::from_json(&m.to_json(), dir.path()).unwrap();
    assert_eq!(m, again);
    assert_eq!(m.helper(&lang("lrl")), Some(&lang("hrl")));
}

#[test]
fn suites_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_suite(a.path(), &small_suite()).unwrap();
    write_suite(b.path(), &small_suite()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 19);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn related_language_shares_the_requested_share_of_helper_types() {
    let base = generate_base(&BaseCorpusConfig { sentences: 2000, ..BaseCorpusConfig::default() }).unwrap();
    let types: BTreeSet<String> = ranmt::corpus::synth::word_types(&base);
    let hrl = Cipher::derive(&types, 1, 0.0).unwrap();
    let hrl_types = hrl.image();
    let lrl = Cipher::derive(&hrl_types, 2, 0.8).unwrap();
    let shared = types.iter().filter(|t| lrl.apply(&hrl.apply(t)) == hrl.apply(t)).count();
    assert_eq!(shared, (0.8 * types.len() as f64).round() as usize);

    let hundred: BTreeSet<String> = (0..100).map(|i| format!("t{i}")).collect();
    assert_eq!(Cipher::derive(&hundred, 9, 0.8).unwrap().fixed_points(), 80);
}

#[test]
fn full_overlap_is_the_identity_and_targets_are_untouched() {
    let base = generate_base(&BaseCorpusConfig { sentences: 300, ..BaseCorpusConfig::default() }).unwrap();
    let a = synth_related_language(&base, 4, 0.0, lang("aaa")).unwrap();
    let same = synth_related_language(&a, 5, 1.0, lang("aaa")).unwrap();
    assert_eq!(a, same);
    assert_eq!(a.tgt_lines().collect::<Vec<_>>(), base.tgt_lines().collect::<Vec<_>>());
    assert_ne!(a.src_lines().collect::<Vec<_>>(), base.src_lines().collect::<Vec<_>>());
    assert!(matches!(synth_related_language(&base, 1, 1.5, lang("bbb")), Err(CorpusError::Overlap(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cipher_output_is_deterministic(seed in any::<u64>(), overlap in 0.0f64..=1.0) {
        let base = generate_base(&BaseCorpusConfig { sentences: 50, seed: seed % 7, ..BaseCorpusConfig::default() }).unwrap();
        let a = synth_related_language(&base, seed, overlap, lang("xyz")).unwrap();
        let b = synth_related_language(&base, seed, overlap, lang("xyz")).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), base.len());
    }

    #[test]
    fn corpora_never_hold_empty_or_overlong_pairs(lines in prop::collection::vec(("[a-c ]{0,12}", "[a-c ]{0,12}"), 1..20)) {
        let (src, tgt): (Vec<String>, Vec<String>) = lines.into_iter().unzip();
        if let Ok(c) = ParallelCorpus::from_lines(&src, &tgt, lang("xx"), lang("eng"), Split::Train, 4) {
            for p in c.pairs() {
                prop_assert!(!p.src.trim().is_empty() && !p.tgt.trim().is_empty());
                prop_assert!(p.src.split_whitespace().count() <= 4 && p.tgt.split_whitespace().count() <= 4);
            }
            prop_assert_eq!(c.len() + c.dropped().empty + c.dropped().too_long, src.len());
        }
    }
}
