use ranmt::checkpoint::{extend_checkpoint_vocab, Checkpoint, CheckpointError, FORMAT_VERSION};
use ranmt::corpus::LangId;
use ranmt::model::{Seq2Seq, Seq2SeqConfig};
use ranmt::subword::{SubwordVocab, UnionVocab};
use ranmt_tensor::Adam;

fn lang(s: &str) -> LangId {
    LangId::new(s).unwrap()
}

const TEXT_A: &[&str] = &["kala mori tun", "mori kala kala", "tun sepa mori", "sepa tun"];
const TEXT_B: &[&str] = &["vexo quiz wyb", "quiz vexo", "wyb wyb vexo"];

fn sample() -> Checkpoint {
    let src = UnionVocab::new([SubwordVocab::train(TEXT_A.iter().copied(), 40, lang("aaa")).unwrap()]).unwrap();
    let tgt = UnionVocab::new([SubwordVocab::train(TEXT_A.iter().copied(), 40, lang("eng")).unwrap()]).unwrap();
    let cfg = Seq2SeqConfig::new(6, 8, src.len(), tgt.len());
    let mut model = Seq2Seq::<f32>::new(cfg, 4).unwrap();
    let ids: Vec<Vec<u32>> = TEXT_A.iter().map(|s| src.encode(s, &lang("aaa")).unwrap()).collect();
    let tids: Vec<Vec<u32>> = TEXT_A.iter().map(|s| tgt.encode(s, &lang("eng")).unwrap()).collect();
    let pairs: Vec<(&[u32], &[u32])> = ids.iter().zip(&tids).map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
    let batch = ranmt::batch::PaddedBatch::new(&pairs);
    for _ in 0..3 {
        model.train_step(&batch, &Adam::default(), 5.0, None).unwrap();
    }
    Checkpoint::new(&model, src, tgt, lang("eng"), vec![lang("aaa")], vec!["Sing".into()], 3, Some(1.5), 0.25)
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ck = sample();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    ck.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    assert_eq!(loaded, ck);
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(&std::fs::read(&p1).unwrap()[..6], b"RANMT\x01");
    assert_eq!(FORMAT_VERSION, 1);
}

#[test]
fn loaded_model_decodes_like_the_original() {
    let ck = sample();
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let src = ck.meta.src_vocab.encode("kala tun", &lang("aaa")).unwrap();
    assert_eq!(ck.model().unwrap().greedy_decode(&src).unwrap(), back.model().unwrap().greedy_decode(&src).unwrap());
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = sample().to_bytes();
    assert!(matches!(Checkpoint::from_bytes(b"NOPE!"), Err(CheckpointError::BadMagic)));
    let mut v2 = bytes.clone();
    v2[5] = 9;
    assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version(9))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
}

#[test]
fn warm_and_cold_detection_uses_metadata() {
    let ck = sample();
    assert!(!ck.is_cold_start(&lang("aaa")));
    assert!(ck.is_cold_start(&lang("bbb")));
}

#[test]
fn extension_appends_rows_and_leaves_everything_else_alone() {
    let ck = sample();
    let v = SubwordVocab::train(TEXT_B.iter().copied(), 40, lang("bbb")).unwrap();
    let ext = extend_checkpoint_vocab(&ck, v, 7).unwrap();
    let k = ext.meta.src_vocab.len() - ck.meta.src_vocab.len();
    assert!(k > 0);
    let d = ck.meta.config.embed_dim;
    for p in ck.params.iter() {
        let q = ext.params.by_name(&p.name).unwrap();
        if p.name == "src_embed" {
            assert_eq!(q.value.len(), p.value.len() + k * d);
            assert_eq!(&q.value.data()[..p.value.len()], p.value.data());
            assert_eq!(&q.adam_m[..p.value.len()], &p.adam_m[..]);
            assert!(q.adam_m[p.value.len()..].iter().all(|&x| x == 0.0));
        } else {
            assert_eq!(q, p, "{}", p.name);
        }
    }
    assert_eq!(ext.meta.config.src_vocab_size, ext.meta.src_vocab.len());
    assert_eq!(&ext.meta.src_vocab.tokens()[..ck.meta.src_vocab.len()], ck.meta.src_vocab.tokens());
    ext.model().unwrap();
    assert_eq!(ext, extend_checkpoint_vocab(&ck, SubwordVocab::train(TEXT_B.iter().copied(), 40, lang("bbb")).unwrap(), 7).unwrap());

    let dup = SubwordVocab::train(TEXT_B.iter().copied(), 40, lang("aaa")).unwrap();
    assert!(matches!(extend_checkpoint_vocab(&ck, dup, 7), Err(CheckpointError::Vocab(_))));
}

#[test]
fn extension_rows_follow_existing_statistics() {
    let ck = sample();
    let many: Vec<String> = (0..400).map(|i| format!("{}{}", (b'a' + (i % 26) as u8) as char, i)).collect();
    let v = SubwordVocab::train(many.iter().map(String::as_str), 300, lang("ccc")).unwrap();
    let ext = extend_checkpoint_vocab(&ck, v, 1).unwrap();
    let d = ck.meta.config.embed_dim;
    let old = ck.params.by_name("src_embed").unwrap().value.data().to_vec();
    let new = ext.params.by_name("src_embed").unwrap().value.data()[old.len()..].to_vec();
    let (n_old, n_new) = (old.len() / d, new.len() / d);
    assert!(n_new > 20);
    for j in 0..d {
        let col = |v: &[f32], n: usize| (0..n).map(|r| v[r * d + j] as f64).collect::<Vec<_>>();
        let (a, b) = (col(&old, n_old), col(&new, n_new));
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let sd = |x: &[f64]| (x.iter().map(|v| (v - mean(x)).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!((mean(&a) - mean(&b)).abs() < 4.0 * sd(&a) / (n_new as f64).sqrt() + 1e-6);
        assert!(sd(&b) < 2.0 * sd(&a) + 1e-6);
    }
}

#[test]
fn extension_with_no_new_tokens_is_a_no_op() {
    let ck = sample();
    let same = SubwordVocab::train(TEXT_A.iter().copied(), 40, lang("bbb")).unwrap();
    let ext = extend_checkpoint_vocab(&ck, same, 3).unwrap();
    assert_eq!(ext.params, ck.params);
    assert!(ext.meta.src_vocab.contains_lang(&lang("bbb")));
}
