//! Attentional encoder-decoder.
//!
//! A bidirectional LSTM encodes the source; a unidirectional LSTM decoder
//! attends over the encoder states with additive attention at every step.
//! Batches are laid out time-major on the tape: row `s·B + b` holds
//! position `s` of sentence `b`.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ranmt_tensor::{init, Adam, ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{Padded, PaddedBatch};
use crate::subword::{BOS, EOS, PAD};

const EMBED_INIT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("empty input")]
    Empty,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("parameter set does not match the configuration: {0}")]
    Params(String),
    #[error("training loss is not finite ({0})")]
    NonFiniteLoss(f64),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub dropout: f64,
    /// Output length cap is `max_len_factor · |src| + max_len_extra`.
    pub max_len_factor: usize,
    pub max_len_extra: usize,
}

impl Seq2SeqConfig {
    pub fn new(embed_dim: usize, hidden_dim: usize, src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self { embed_dim, hidden_dim, src_vocab_size, tgt_vocab_size, dropout: 0.3, max_len_factor: 2, max_len_extra: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if self.src_vocab_size < 4 || self.tgt_vocab_size < 4 {
            return Err(ModelError::Config("vocabularies must hold at least the special tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Parameter names and shapes in creation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, h) = (self.embed_dim, self.hidden_dim);
        let mut v = vec![("src_embed".to_string(), vec![self.src_vocab_size, e])];
        for dir in ["enc_fwd", "enc_bwd"] {
            v.push((format!("{dir}.w_x"), vec![e, 4 * h]));
            v.push((format!("{dir}.w_h"), vec![h, 4 * h]));
            v.push((format!("{dir}.b"), vec![4 * h]));
        }
        v.extend([
            ("bridge.w".to_string(), vec![2 * h, h]),
            ("bridge.b".to_string(), vec![h]),
            ("tgt_embed".to_string(), vec![self.tgt_vocab_size, e]),
            ("dec.w_x".to_string(), vec![e, 4 * h]),
            ("dec.w_h".to_string(), vec![h, 4 * h]),
            ("dec.b".to_string(), vec![4 * h]),
            ("att.w_query".to_string(), vec![h, h]),
            ("att.w_key".to_string(), vec![2 * h, h]),
            ("att.v".to_string(), vec![h]),
            ("comb.w".to_string(), vec![3 * h, h]),
            ("comb.b".to_string(), vec![h]),
            ("out.w".to_string(), vec![h, self.tgt_vocab_size]),
            ("out.b".to_string(), vec![self.tgt_vocab_size]),
        ]);
        v
    }

    pub fn max_output_len(&self, src_len: usize) -> usize {
        self.max_len_factor * src_len + self.max_len_extra
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    src_embed: ParamId,
    enc_fwd: LstmIds,
    enc_bwd: LstmIds,
    bridge_w: ParamId,
    bridge_b: ParamId,
    tgt_embed: ParamId,
    dec: LstmIds,
    att_wq: ParamId,
    att_wk: ParamId,
    att_v: ParamId,
    comb_w: ParamId,
    comb_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl Ids {
    fn resolve<F: Real>(store: &ParamStore<F>) -> Result<Self> {
        let id = |n: &str| store.id(n).map_err(|e| ModelError::Params(e.to_string()));
        let lstm = |p: &str| -> Result<LstmIds> {
            Ok(LstmIds { w_x: id(&format!("{p}.w_x"))?, w_h: id(&format!("{p}.w_h"))?, b: id(&format!("{p}.b"))? })
        };
        Ok(Self {
            src_embed: id("src_embed")?,
            enc_fwd: lstm("enc_fwd")?,
            enc_bwd: lstm("enc_bwd")?,
            bridge_w: id("bridge.w")?,
            bridge_b: id("bridge.b")?,
            tgt_embed: id("tgt_embed")?,
            dec: lstm("dec")?,
            att_wq: id("att.w_query")?,
            att_wk: id("att.w_key")?,
            att_v: id("att.v")?,
            comb_w: id("comb.w")?,
            comb_b: id("comb.b")?,
            out_w: id("out.w")?,
            out_b: id("out.b")?,
        })
    }
}

/// Inverted dropout driven by an optional RNG; without one it is the identity.
pub struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn new(p: f64, rng: Option<&'r mut ChaCha8Rng>) -> Self {
        Self { p, rng }
    }

    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    fn apply<F: Real>(&mut self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if self.p == 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64(1.0 / (1.0 - self.p));
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask: Vec<F> = (0..n).map(|_| if rng.random::<f64>() < self.p { F::zero() } else { keep }).collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        Ok(tape.mul(x, m)?)
    }
}

/// What the decoder attends over.
struct Memory {
    /// `[(S·B)×2H]`, time-major.
    states: Var,
    /// `states · W_key`, `[(S·B)×H]`.
    keys: Var,
    /// `[B×S]`, row-major; `false` at padding.
    keep: Vec<bool>,
}

struct Encoded {
    memory: Memory,
    init_h: Var,
    batch: usize,
    len: usize,
}

struct StepOut {
    h: Var,
    c: Var,
    comb: Var,
}

/// Encoder output for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates<F> {
    /// `[n × 2H]`; the first `H` columns come from the forward direction.
    pub states: Tensor<F>,
    pub mask: Vec<bool>,
}

/// A decoded output sequence (excluding BOS) with its total log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Log-probability divided by output length.
    pub fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    /// Tokens before EOS.
    pub fn content(&self) -> &[u32] {
        match self.tokens.iter().position(|&t| t == EOS) {
            Some(i) => &self.tokens[..i],
            None => &self.tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    pub best: Hypothesis,
    /// Largest number of simultaneously live hypotheses.
    pub max_live: usize,
}

#[derive(Debug, Clone)]
pub struct Seq2Seq<F: Real> {
    config: Seq2SeqConfig,
    store: ParamStore<F>,
    ids: Ids,
}

fn log_softmax_row<F: Real>(row: &[F]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x.as_f64() - lse).collect()
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in row.iter().enumerate() {
        if *x > row[best] {
            best = i;
        }
    }
    best
}

impl<F: Real> Seq2Seq<F> {
    /// Fresh model with Glorot-uniform matrices, zero biases and small
    /// uniform embeddings, each drawn from its own named seeded stream.
    pub fn new(config: Seq2SeqConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape) in config.param_shapes() {
            let mut rng = init::stream(seed, &name);
            let t = if name.ends_with("embed") {
                init::uniform(&shape, -EMBED_INIT, EMBED_INIT, &mut rng)
            } else if name == "att.v" {
                Tensor::new(shape.clone(), init::glorot_uniform::<F>(shape[0], 1, &mut rng).into_data())?
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                init::glorot_uniform(shape[0], shape[1], &mut rng)
            };
            store.add(name, t)?;
        }
        let ids = Ids::resolve(&store)?;
        Ok(Self { config, store, ids })
    }

    /// Wraps an existing parameter set, checking names and shapes.
    pub fn from_store(config: Seq2SeqConfig, store: ParamStore<F>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != store.len() {
            return Err(ModelError::Params(format!("expected {} parameters, found {}", expected.len(), store.len())));
        }
        for (name, shape) in &expected {
            let p = store.by_name(name).ok_or_else(|| ModelError::Params(format!("missing `{name}`")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(ModelError::Params(format!("`{name}` has shape {:?}, expected {shape:?}", p.value.shape())));
            }
        }
        let ids = Ids::resolve(&store)?;
        Ok(Self { config, store, ids })
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn into_parts(self) -> (Seq2SeqConfig, ParamStore<F>) {
        (self.config, self.store)
    }

    pub fn cast<G: Real>(&self) -> Seq2Seq<G> {
        Seq2Seq { config: self.config.clone(), store: self.store.cast(), ids: self.ids }
    }

    /// Appends rows to the source embedding table and grows the source
    /// vocabulary accordingly. `rows` holds `k · embed_dim` values.
    pub fn append_src_rows(&mut self, rows: &[F]) -> Result<()> {
        let e = self.config.embed_dim;
        if rows.len() % e != 0 {
            return Err(ModelError::Config(format!("{} values do not form rows of width {e}", rows.len())));
        }
        let k = rows.len() / e;
        let p = self.store.get(self.ids.src_embed);
        let mut data = p.value.data().to_vec();
        data.extend_from_slice(rows);
        let n = self.config.src_vocab_size + k;
        self.store.replace_value(self.ids.src_embed, Tensor::new(vec![n, e], data)?);
        self.config.src_vocab_size = n;
        Ok(())
    }

    fn check_ids(ids: &[u32], size: usize) -> Result<()> {
        match ids.iter().find(|&&t| t as usize >= size) {
            Some(&id) => Err(ModelError::TokenOutOfRange { id, size }),
            None => Ok(()),
        }
    }

    fn lstm_step(&self, tape: &mut Tape<'_, F>, w: LstmIds, x_gates: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.config.hidden_dim;
        let w_h = tape.param(w.w_h);
        let hw = tape.matmul(h, w_h)?;
        let g = tape.add(x_gates, hw)?;
        let hc = tape.lstm_cell(g, c)?;
        Ok((tape.slice_cols(hc, 0, hd)?, tape.slice_cols(hc, hd, hd)?))
    }

    fn input_gates(&self, tape: &mut Tape<'_, F>, w: LstmIds, x: Var) -> Result<Var> {
        let w_x = tape.param(w.w_x);
        let b = tape.param(w.b);
        let xw = tape.matmul(x, w_x)?;
        Ok(tape.add_row(xw, b)?)
    }

    fn encode(&self, tape: &mut Tape<'_, F>, src: &Padded, dropout: &mut Dropout) -> Result<Encoded> {
        let (b, s_len, hd) = (src.rows, src.width, self.config.hidden_dim);
        if b == 0 || s_len == 0 || src.lens.contains(&0) {
            return Err(ModelError::Empty);
        }
        Self::check_ids(&src.ids, self.config.src_vocab_size)?;
        let ids: Vec<usize> = (0..s_len).flat_map(|s| (0..b).map(move |r| (s, r))).map(|(s, r)| src.get(r, s) as usize).collect();
        let table = tape.param(self.ids.src_embed);
        let emb = tape.gather_rows(table, &ids)?;
        let emb = dropout.apply(tape, emb)?;
        let xg_f = self.input_gates(tape, self.ids.enc_fwd, emb)?;
        let xg_b = self.input_gates(tape, self.ids.enc_bwd, emb)?;
        let zeros = tape.constant(Tensor::zeros(&[b, hd]));

        let run = |tape: &mut Tape<'_, F>, w: LstmIds, xg: Var, order: &mut dyn Iterator<Item = usize>| -> Result<(Vec<Option<Var>>, Var)> {
            let (mut h, mut c) = (zeros, zeros);
            let mut outs = vec![None; s_len];
            for s in order {
                let x = tape.slice_rows(xg, s * b, b)?;
                let (hn, cn) = self.lstm_step(tape, w, x, h, c)?;
                let valid: Vec<bool> = src.lens.iter().map(|&l| s < l).collect();
                if valid.iter().all(|&v| v) {
                    (h, c) = (hn, cn);
                } else {
                    h = tape.select_rows(&valid, hn, h)?;
                    c = tape.select_rows(&valid, cn, c)?;
                }
                outs[s] = Some(h);
            }
            Ok((outs, h))
        };
        let (fwd, fwd_final) = run(tape, self.ids.enc_fwd, xg_f, &mut (0..s_len))?;
        let (bwd, _) = run(tape, self.ids.enc_bwd, xg_b, &mut (0..s_len).rev())?;

        let mut rows = Vec::with_capacity(s_len);
        for s in 0..s_len {
            rows.push(tape.concat_cols(&[fwd[s].unwrap(), bwd[s].unwrap()])?);
        }
        let states = tape.concat_rows(&rows)?;
        let states = dropout.apply(tape, states)?;
        let w_key = tape.param(self.ids.att_wk);
        let keys = tape.matmul(states, w_key)?;

        let ends = tape.concat_cols(&[fwd_final, bwd[0].unwrap()])?;
        let bw = tape.param(self.ids.bridge_w);
        let bb = tape.param(self.ids.bridge_b);
        let pre = tape.matmul(ends, bw)?;
        let pre = tape.add_row(pre, bb)?;
        let init_h = tape.tanh(pre);
        Ok(Encoded { memory: Memory { states, keys, keep: src.mask() }, init_h, batch: b, len: s_len })
    }

    fn attention(&self, tape: &mut Tape<'_, F>, mem: &Memory, query_state: Var) -> Result<(Var, Var)> {
        let wq = tape.param(self.ids.att_wq);
        let v = tape.param(self.ids.att_v);
        let q = tape.matmul(query_state, wq)?;
        let scores = tape.additive_scores(mem.keys, q, v)?;
        let alpha = tape.masked_softmax(scores, &mem.keep)?;
        let ctx = tape.weighted_sum(alpha, mem.states)?;
        Ok((ctx, alpha))
    }

    fn decode_step(
        &self,
        tape: &mut Tape<'_, F>,
        mem: &Memory,
        x_gates: Var,
        h: Var,
        c: Var,
        dropout: &mut Dropout,
    ) -> Result<StepOut> {
        let (h, c) = self.lstm_step(tape, self.ids.dec, x_gates, h, c)?;
        let s = dropout.apply(tape, h)?;
        let (ctx, _) = self.attention(tape, mem, s)?;
        let sc = tape.concat_cols(&[s, ctx])?;
        let cw = tape.param(self.ids.comb_w);
        let cb = tape.param(self.ids.comb_b);
        let pre = tape.matmul(sc, cw)?;
        let pre = tape.add_row(pre, cb)?;
        let comb = tape.tanh(pre);
        Ok(StepOut { h, c, comb })
    }

    fn logits(&self, tape: &mut Tape<'_, F>, comb: Var) -> Result<Var> {
        let w = tape.param(self.ids.out_w);
        let b = tape.param(self.ids.out_b);
        let l = tape.matmul(comb, w)?;
        Ok(tape.add_row(l, b)?)
    }

    fn embed_targets(&self, tape: &mut Tape<'_, F>, ids: &[u32], dropout: &mut Dropout) -> Result<Var> {
        Self::check_ids(ids, self.config.tgt_vocab_size)?;
        let table = tape.param(self.ids.tgt_embed);
        let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let emb = tape.gather_rows(table, &idx)?;
        let emb = dropout.apply(tape, emb)?;
        self.input_gates(tape, self.ids.dec, emb)
    }

    /// Mean per-token negative log-likelihood of the batch targets under
    /// teacher forcing. Dropout is active only when `rng` is given.
    pub fn loss(&self, tape: &mut Tape<'_, F>, batch: &PaddedBatch, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let mut dropout = Dropout::new(self.config.dropout, rng);
        let enc = self.encode(tape, &batch.src, &mut dropout)?;
        let tgt = &batch.tgt;
        if tgt.rows != enc.batch || tgt.width < 2 {
            return Err(ModelError::Empty);
        }
        let steps = tgt.width - 1;
        let b = enc.batch;
        let inputs: Vec<u32> = (0..steps).flat_map(|t| tgt.column(t)).collect();
        let targets: Vec<usize> = (1..=steps).flat_map(|t| tgt.column(t)).map(|x| x as usize).collect();
        let xg = self.embed_targets(tape, &inputs, &mut dropout)?;
        let (mut h, mut c) = (enc.init_h, tape.constant(Tensor::zeros(&[b, self.config.hidden_dim])));
        let mut combs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.slice_rows(xg, t * b, b)?;
            let out = self.decode_step(tape, &enc.memory, x, h, c, &mut dropout)?;
            (h, c) = (out.h, out.c);
            combs.push(out.comb);
        }
        let all = tape.concat_rows(&combs)?;
        let logits = self.logits(tape, all)?;
        Ok(tape.cross_entropy(logits, &targets, PAD as usize)?)
    }

    /// Sum of target log-probabilities of `tgt` (which starts with BOS) given
    /// `src`, without dropout.
    pub fn score(&self, src: &[u32], tgt: &[u32]) -> Result<f64> {
        let mut tape = Tape::inference(&self.store);
        let batch = PaddedBatch::new(&[(src, tgt)]);
        let loss = self.loss(&mut tape, &batch, None)?;
        Ok(-tape.scalar(loss).as_f64() * (tgt.len() - 1) as f64)
    }

    /// One optimizer update on `batch`; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &PaddedBatch, adam: &Adam, clip: f64, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
        let (loss, grads) = {
            let mut tape = Tape::new(&self.store);
            let l = self.loss(&mut tape, batch, rng)?;
            (tape.scalar(l).as_f64(), tape.backward(l)?)
        };
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(loss));
        }
        self.store.zero_grad();
        self.store.accumulate(&grads);
        self.store.clip_grad_norm(clip);
        adam.step(&mut self.store)?;
        Ok(loss)
    }

    /// Encoder states for one sentence, without dropout.
    pub fn encode_states(&self, src: &[u32]) -> Result<EncoderStates<F>> {
        let mut tape = Tape::inference(&self.store);
        let enc = self.encode(&mut tape, &Padded::new(&[src]), &mut Dropout::off())?;
        Ok(EncoderStates { states: tape.value(enc.memory.states).clone(), mask: enc.memory.keep })
    }

    /// Attention of one decoder state (`H` values) over `enc`; returns the
    /// context vector and the weights.
    pub fn attend(&self, decoder_state: &[F], enc: &EncoderStates<F>) -> Result<(Vec<F>, Vec<F>)> {
        let hd = self.config.hidden_dim;
        let mut tape = Tape::inference(&self.store);
        let states = tape.constant(enc.states.clone());
        let w_key = tape.param(self.ids.att_wk);
        let keys = tape.matmul(states, w_key)?;
        let mem = Memory { states, keys, keep: enc.mask.clone() };
        let q = tape.constant(Tensor::new(vec![1, hd], decoder_state.to_vec())?);
        let (ctx, alpha) = self.attention(&mut tape, &mem, q)?;
        Ok((tape.value(ctx).data().to_vec(), tape.value(alpha).data().to_vec()))
    }

    /// Greedy decoding of one sentence.
    pub fn greedy_decode(&self, src: &[u32]) -> Result<Hypothesis> {
        Ok(self.greedy_decode_batch(&[src.to_vec()])?.remove(0))
    }

    /// Greedy decoding of several sentences at once; each output matches
    /// decoding that sentence alone.
    pub fn greedy_decode_batch(&self, srcs: &[Vec<u32>]) -> Result<Vec<Hypothesis>> {
        if srcs.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&[u32]> = srcs.iter().map(Vec::as_slice).collect();
        let src = Padded::new(&refs);
        let mut tape = Tape::inference(&self.store);
        let mut dropout = Dropout::off();
        let enc = self.encode(&mut tape, &src, &mut dropout)?;
        let b = enc.batch;
        let caps: Vec<usize> = src.lens.iter().map(|&l| self.config.max_output_len(l)).collect();
        let mut outs: Vec<Hypothesis> = (0..b).map(|_| Hypothesis { tokens: Vec::new(), log_prob: 0.0 }).collect();
        let mut done = vec![false; b];
        let mut inputs = vec![BOS; b];
        let (mut h, mut c) = (enc.init_h, tape.constant(Tensor::zeros(&[b, self.config.hidden_dim])));
        while !done.iter().all(|&d| d) {
            let x = self.embed_targets(&mut tape, &inputs, &mut dropout)?;
            let out = self.decode_step(&mut tape, &enc.memory, x, h, c, &mut dropout)?;
            (h, c) = (out.h, out.c);
            let logits = self.logits(&mut tape, out.comb)?;
            let lv = tape.value(logits);
            for r in 0..b {
                if done[r] {
                    continue;
                }
                let row = lv.row(r);
                let tok = argmax(row);
                outs[r].log_prob += log_softmax_row(row)[tok];
                outs[r].tokens.push(tok as u32);
                inputs[r] = tok as u32;
                done[r] = tok as u32 == EOS || outs[r].tokens.len() >= caps[r];
            }
        }
        Ok(outs)
    }

    /// Beam search with length-normalized scores. The greedy output is
    /// always among the candidates, so the result never scores below it.
    pub fn beam_search(&self, src: &[u32], beam: usize) -> Result<BeamOutput> {
        let beam = beam.max(1);
        let greedy = self.greedy_decode(src)?;
        let cap = self.config.max_output_len(src.len());
        let mut tape = Tape::inference(&self.store);
        let mut dropout = Dropout::off();
        let base = self.encode(&mut tape, &Padded::new(&[src]), &mut dropout)?;
        let s_len = base.len;
        let mut tiled: HashMap<usize, Memory> = HashMap::new();

        let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
        let (mut h, mut c) = (base.init_h, tape.constant(Tensor::zeros(&[1, self.config.hidden_dim])));
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut max_live = 0;
        while !live.is_empty() && finished.len() < beam {
            let k = live.len();
            max_live = max_live.max(k);
            if !tiled.contains_key(&k) {
                let idx: Vec<usize> = (0..s_len).flat_map(|s| std::iter::repeat_n(s, k)).collect();
                let states = tape.gather_rows(base.memory.states, &idx)?;
                let keys = tape.gather_rows(base.memory.keys, &idx)?;
                tiled.insert(k, Memory { states, keys, keep: vec![true; k * s_len] });
            }
            let mem = &tiled[&k];
            let inputs: Vec<u32> = live.iter().map(|hy| hy.tokens.last().copied().unwrap_or(BOS)).collect();
            let x = self.embed_targets(&mut tape, &inputs, &mut dropout)?;
            let out = self.decode_step(&mut tape, mem, x, h, c, &mut dropout)?;
            let logits = self.logits(&mut tape, out.comb)?;
            let lv = tape.value(logits);
            let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(k * lv.cols());
            for (j, hy) in live.iter().enumerate() {
                for (v, lp) in log_softmax_row(lv.row(j)).into_iter().enumerate() {
                    cands.push((hy.log_prob + lp, j, v));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            let mut parents = Vec::new();
            for &(score, j, v) in cands.iter().take(beam) {
                let mut tokens = live[j].tokens.clone();
                tokens.push(v as u32);
                let hy = Hypothesis { tokens, log_prob: score };
                if v as u32 == EOS || hy.tokens.len() >= cap {
                    finished.push(hy);
                } else {
                    next.push(hy);
                    parents.push(j);
                }
            }
            if !parents.is_empty() {
                h = tape.gather_rows(out.h, &parents)?;
                c = tape.gather_rows(out.c, &parents)?;
            }
            live = next;
        }
        finished.extend(live);
        finished.push(greedy);
        let mut best = 0;
        for (i, hy) in finished.iter().enumerate() {
            if hy.normalized() > finished[best].normalized() {
                best = i;
            }
        }
        Ok(BeamOutput { best: finished.swap_remove(best), max_live })
    }
}
