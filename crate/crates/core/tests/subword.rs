use proptest::prelude::*;
use ranmt::corpus::synth::{BaseCorpusConfig, BaseGenerator};
use ranmt::corpus::LangId;
use ranmt::subword::{SubwordVocab, UnionVocab, VocabError, BOS, EOS, SPECIALS, UNK};

fn lang(s: &str) -> LangId {
    LangId::new(s).unwrap()
}

fn text(seed: u64, n: usize) -> Vec<String> {
    BaseGenerator::new(&BaseCorpusConfig { seed, ..BaseCorpusConfig::default() }).unwrap().sentences(n)
}

#[test]
fn held_out_sentences_roundtrip() {
    let train = text(0, 2000);
    let v = SubwordVocab::train(train.iter().map(String::as_str), 500, lang("xx")).unwrap();
    let u = UnionVocab::new([v]).unwrap();
    for s in text(0, 12000).into_iter().skip(2000) {
        let ids = u.encode(&s, &lang("xx")).unwrap();
        assert!(!ids.contains(&UNK));
        assert_eq!(u.decode(&ids).unwrap(), s);
    }
}

#[test]
fn training_is_byte_deterministic_and_bounded() {
    let lines = text(3, 1500);
    let a = SubwordVocab::train(lines.iter().map(String::as_str), 300, lang("xx")).unwrap();
    let b = SubwordVocab::train(lines.iter().map(String::as_str), 300, lang("xx")).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert!(a.len() <= 300);
    assert_eq!(&a.tokens()[..4], SPECIALS);
    let unique: std::collections::BTreeSet<_> = a.tokens().iter().collect();
    assert_eq!(unique.len(), a.len());
    assert_eq!(SubwordVocab::from_text(&a.to_text()).unwrap(), a);
}

#[test]
fn size_below_alphabet_is_rejected() {
    let err = SubwordVocab::train(["ab ba"], 5, lang("xx")).unwrap_err();
    assert!(matches!(err, VocabError::SizeTooSmall { needed: 8, .. }));
    assert!(matches!(SubwordVocab::train(["  "], 50, lang("xx")), Err(VocabError::EmptyText)));
}

#[test]
fn unseen_characters_become_unk() {
    let v = SubwordVocab::train(["abc abc cab"], 40, lang("xx")).unwrap();
    let u = UnionVocab::new([v]).unwrap();
    let ids = u.encode("abz", &lang("xx")).unwrap();
    assert!(ids.contains(&UNK));
    assert_eq!(u.decode(&ids).unwrap(), "ab<unk>");
    assert_eq!(u.decode(&[BOS, EOS]).unwrap(), "");
    assert!(matches!(u.decode(&[9999]), Err(VocabError::OutOfRange { .. })));
}

#[test]
fn union_extension_keeps_indices_and_isolates_languages() {
    let a = SubwordVocab::train(text(1, 400).iter().map(String::as_str), 200, lang("aaa")).unwrap();
    let b_small = SubwordVocab::train(text(2, 50).iter().map(String::as_str), 120, lang("bbb")).unwrap();
    let b_big = SubwordVocab::train(text(2, 500).iter().map(String::as_str), 250, lang("bbb")).unwrap();
    let a_again = SubwordVocab::train(text(1, 400).iter().map(String::as_str), 200, lang("aaa")).unwrap();
    assert_eq!(a.to_text(), a_again.to_text());

    let mut u = UnionVocab::new([a.clone()]).unwrap();
    let before: Vec<String> = u.tokens().to_vec();
    let added = u.extend(b_big.clone()).unwrap();
    assert_eq!(u.len(), before.len() + added);
    assert_eq!(&u.tokens()[..before.len()], &before[..]);
    for (i, t) in u.tokens().iter().enumerate() {
        assert_eq!(u.id(t), Some(i as u32));
    }
    assert!(matches!(u.extend(b_small), Err(VocabError::DuplicateLanguage(_))));
    assert!(UnionVocab::new([a.clone(), a.clone()]).is_ok());
}

#[test]
fn language_tags_follow_bos() {
    let a = SubwordVocab::train(["ab ab ba"], 30, lang("aaa")).unwrap();
    let u = UnionVocab::with_lang_tags([a]).unwrap();
    let ids = u.encode("ab", &lang("aaa")).unwrap();
    assert_eq!(u.token(ids[1]), Some("<lang:aaa>"));
    assert_eq!(u.decode(&ids).unwrap(), "ab");
    assert!(u.encode("ab", &lang("zzz")).is_err());
}

#[test]
fn union_survives_serde() {
    let a = SubwordVocab::train(text(5, 200).iter().map(String::as_str), 150, lang("aaa")).unwrap();
    let b = SubwordVocab::train(text(6, 200).iter().map(String::as_str), 150, lang("bbb")).unwrap();
    let u = UnionVocab::new([a, b]).unwrap();
    let back: UnionVocab = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
    assert_eq!(u, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roundtrip_for_any_text_over_the_training_alphabet(s in "[a-f]{1,6}( [a-f]{1,6}){0,6}", size in 20usize..120) {
        let train = "abc def fed cba abcdef fedcba ad be cf".to_string();
        let v = SubwordVocab::train([train.as_str()], size, lang("xx")).unwrap();
        let u = UnionVocab::new([v]).unwrap();
        let ids = u.encode(&s, &lang("xx")).unwrap();
        prop_assert_eq!(ids[0], BOS);
        prop_assert_eq!(*ids.last().unwrap(), EOS);
        prop_assert_eq!(u.decode(&ids).unwrap(), s);
    }

    #[test]
    fn extension_never_moves_existing_tokens(seeds in prop::collection::vec(0u64..50, 1..4)) {
        let base = SubwordVocab::train(text(100, 100).iter().map(String::as_str), 120, lang("base")).unwrap();
        let mut u = UnionVocab::new([base]).unwrap();
        for (i, s) in seeds.iter().enumerate() {
            let before = u.tokens().to_vec();
            let v = SubwordVocab::train(text(*s, 60).iter().map(String::as_str), 100, lang(&format!("l{i}"))).unwrap();
            u.extend(v).unwrap();
            prop_assert_eq!(&u.tokens()[..before.len()], &before[..]);
        }
    }
}
