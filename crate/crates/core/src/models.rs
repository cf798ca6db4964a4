//! GAR and NAR model assembly and training.
//!
//! The GAR model embeds the unified vocabulary restricted to phonemes,
//! specials and layer-1 codes, and its single head covers layer-1 codes plus
//! EOP and EOS only: phonemes and BOS are not representable as outputs. The
//! NAR model sums per-layer code embeddings of layers `< j` plus a learned
//! embedding of `j`, attends bidirectionally and has one head per predicted
//! layer `j = 2..=L`.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Code, LanguageConfig, Utterance};
use crate::error::{Error, Result};
use crate::rng::mix;
use crate::seqbuild::{
    attention_mask, build_hybrid, loss_mask, prefix_causal_mask, HybridSequence, SeqVariant, Stage, TokenId,
    TokenKind, VariantKind, Vocab,
};
use crate::tensornn::{
    load_checkpoint, masked_cross_entropy_grad, save_checkpoint, softmax_row, AdamW, AdamWConfig, Batch, Checkpoint,
    CheckpointHeader, HeadGrad, InferenceSession, InverseSqrt, Lookups, ModelConfig, Params, Scalar, Segment,
    Transformer,
};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences are added to a batch until it holds at least this many tokens.
    pub batch_tokens: usize,
    pub peak_lr: f64,
    pub warmup: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub init_std: f64,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_tokens: 512,
            peak_lr: 1e-3,
            warmup: 1000,
            grad_clip: Some(1.0),
            init_std: 0.02,
            adamw: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Renders the tab-separated training log.
pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from("step\tlr\tloss\n");
    for r in rows {
        s.push_str(&format!("{}\t{:e}\t{:.6}\n", r.step, r.lr, r.loss));
    }
    s
}

pub fn save_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    write_atomic(path, format_log(rows).as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub log: Vec<LogRow>,
    /// Mean loss over the last epoch's worth of steps.
    pub final_loss: f64,
    /// Utterances dropped for exceeding `max_seq_len`.
    pub skipped: usize,
}

/// Output-head class of a GAR target: code, EOP or EOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GarClass {
    Acoustic(Code),
    Eop,
    Eos,
}

/// Index layout of the GAR head: `[0, K)` codes, `K` EOP, `K + 1` EOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GarHead {
    pub codebook_size: u32,
}

impl GarHead {
    pub fn size(&self) -> usize {
        self.codebook_size as usize + 2
    }
    pub fn eop(&self) -> usize {
        self.codebook_size as usize
    }
    pub fn eos(&self) -> usize {
        self.codebook_size as usize + 1
    }
    pub fn class(&self, index: usize) -> GarClass {
        match index {
            i if i < self.codebook_size as usize => GarClass::Acoustic(i as Code),
            i if i == self.eop() => GarClass::Eop,
            _ => GarClass::Eos,
        }
    }

    /// Head index of a unified target token, if it is predictable.
    pub fn index_of(&self, vocab: &Vocab, token: TokenId) -> Option<usize> {
        if token == vocab.eop() {
            Some(self.eop())
        } else if token == vocab.eos() {
            Some(self.eos())
        } else {
            match vocab.acoustic_code(token) {
                Some((1, c)) => Some(c as usize),
                _ => None,
            }
        }
    }
}

/// Incremental scoring of a growing GAR context.
pub trait GarSession {
    /// Probabilities over the head classes for the next token.
    fn distribution(&mut self) -> Result<Vec<f64>>;
    fn push(&mut self, token: TokenId) -> Result<()>;
}

/// Anything that can score GAR continuations.
pub trait GarLm {
    fn head(&self) -> GarHead;
    fn session<'a>(&'a self, prefix: &HybridSequence) -> Result<Box<dyn GarSession + 'a>>;
}

#[derive(Debug, Clone)]
pub struct GarModel<F = f32> {
    pub net: Transformer,
    pub vocab: Vocab,
    pub variant: SeqVariant,
    pub params: Params<F>,
    pub step: u64,
}

impl<F: Scalar> GarModel<F> {
    pub fn new(vocab: Vocab, variant: SeqVariant, mut cfg: ModelConfig, init_std: f64, seed: u64) -> Result<Self> {
        cfg.vocab_size = vocab.size();
        let head = GarHead {
            codebook_size: vocab.codebook_size,
        };
        let net = Transformer::new(cfg, &[vocab.gar_input_size()], &[head.size()])?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x6172));
        let params = Params::init(&net.layout, init_std, &mut rng);
        Ok(Self {
            net,
            vocab,
            variant,
            params,
            step: 0,
        })
    }

    pub fn head(&self) -> GarHead {
        GarHead {
            codebook_size: self.vocab.codebook_size,
        }
    }

    fn lookups(tokens: &[TokenId]) -> Lookups {
        let mut l = Lookups::new();
        for &t in tokens {
            l.push(&[(0, t)]);
        }
        l
    }

    /// Next-token distribution after `context` by a full forward pass.
    pub fn next_distribution(&self, context: &HybridSequence) -> Result<Vec<f64>> {
        let n = context.len();
        if n > self.net.config.max_seq_len {
            return Err(Error::Length {
                len: n,
                max: self.net.config.max_seq_len,
            });
        }
        let emb = self.net.embed(&self.params, &Self::lookups(&context.tokens));
        let logits = self
            .net
            .forward_logits(&self.params, &emb, &attention_mask(context), 0)?;
        Ok(softmax_row(logits.row(n - 1)))
    }

    /// Per-position training example: inputs, attention segment, loss rows
    /// and head targets.
    fn example(&self, seq: &HybridSequence) -> Example {
        let head = self.head();
        let n = seq.len() - 1;
        let lm = loss_mask(seq, Stage::Gar);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for t in 0..n {
            if lm[t + 1] {
                rows.push(t);
                targets.push(head.index_of(&self.vocab, seq.tokens[t + 1]).expect("GAR target is predictable"));
            }
        }
        Example {
            lookups: Self::lookups(&seq.tokens[..n]),
            mask: prefix_causal_mask(n, seq.bos_index),
            rows,
            targets,
            head: 0,
        }
    }

    /// Mean masked loss of one sequence, with gradients when `grads` is given.
    pub fn sequence_loss(&self, seq: &HybridSequence, grads: Option<&mut Params<F>>) -> Result<f64> {
        let ex = self.example(seq);
        batch_step(&self.net, &self.params, &[ex], grads, None)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint<F> {
        Checkpoint {
            header: CheckpointHeader {
                kind: "gar".into(),
                dtype: F::DTYPE.into(),
                model: self.net.config.clone(),
                vocab: self.vocab,
                table_rows: vec![self.vocab.gar_input_size()],
                head_sizes: vec![self.head().size()],
                layout: self.net.layout.clone(),
                step: self.step,
                meta: merge_meta(meta, serde_json::json!({ "variant": self.variant })),
            },
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<F>) -> Result<Self> {
        let h = &ckpt.header;
        if h.kind != "gar" {
            return Err(Error::Checkpoint(format!("expected a gar checkpoint, found {}", h.kind)));
        }
        let variant: SeqVariant = serde_json::from_value(h.meta["variant"].clone())
            .map_err(|e| Error::Checkpoint(format!("variant: {e}")))?;
        let net = Transformer::new(h.model.clone(), &h.table_rows, &h.head_sizes)?;
        if net.layout != h.layout {
            return Err(Error::Checkpoint("parameter layout does not match the model config".into()));
        }
        Ok(Self {
            net,
            vocab: h.vocab,
            variant,
            params: ckpt.params,
            step: h.step,
        })
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint(meta))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }
}

fn merge_meta(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    if !base.is_object() {
        base = serde_json::json!({});
    }
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
    base
}

struct GarInference<'a, F> {
    model: &'a GarModel<F>,
    session: InferenceSession<'a, F>,
}

impl<F: Scalar> GarSession for GarInference<'_, F> {
    fn distribution(&mut self) -> Result<Vec<f64>> {
        let logits = self.session.logits(0);
        let p = softmax_row(logits.view());
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("next-token distribution"));
        }
        Ok(p)
    }

    fn push(&mut self, token: TokenId) -> Result<()> {
        let m = self.model;
        let emb = m.net.embed(&m.params, &GarModel::<F>::lookups(&[token]));
        self.session.append(emb.row(0))
    }
}

impl<F: Scalar> GarLm for GarModel<F> {
    fn head(&self) -> GarHead {
        GarModel::head(self)
    }

    fn session<'a>(&'a self, prefix: &HybridSequence) -> Result<Box<dyn GarSession + 'a>> {
        if prefix.len() > self.net.config.max_seq_len {
            return Err(Error::Length {
                len: prefix.len(),
                max: self.net.config.max_seq_len,
            });
        }
        let emb = self.net.embed(&self.params, &Self::lookups(&prefix.tokens));
        let session = InferenceSession::prefill(&self.net, &self.params, emb, attention_mask(prefix))?;
        Ok(Box::new(GarInference { model: self, session }))
    }
}

/// One packed training example.
struct Example {
    lookups: Lookups,
    mask: Array2<bool>,
    /// Rows (relative to the example) that carry a loss.
    rows: Vec<usize>,
    targets: Vec<usize>,
    head: usize,
}

impl Example {
    fn len(&self) -> usize {
        self.lookups.len()
    }
}

/// Forward (and optionally backward) over packed examples. Returns the mean
/// loss over all loss rows; gradients are those of that mean.
fn batch_step<F: Scalar>(
    net: &Transformer,
    params: &Params<F>,
    examples: &[Example],
    grads: Option<&mut Params<F>>,
    rng: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let mut lookups = Lookups::new();
    let mut segments = Vec::with_capacity(examples.len());
    let mut start = 0;
    // rows and targets grouped by head
    let n_heads = net.n_heads_out();
    let mut head_rows: Vec<Vec<usize>> = vec![Vec::new(); n_heads];
    let mut head_targets: Vec<Vec<usize>> = vec![Vec::new(); n_heads];
    for ex in examples {
        lookups.extend(&ex.lookups);
        segments.push(Segment {
            start,
            len: ex.len(),
            mask: ex.mask.clone(),
        });
        head_rows[ex.head].extend(ex.rows.iter().map(|&r| r + start));
        head_targets[ex.head].extend_from_slice(&ex.targets);
        start += ex.len();
    }
    let total_rows: usize = head_rows.iter().map(Vec::len).sum();
    if total_rows == 0 {
        return Err(Error::EmptyMask);
    }
    let batch = Batch {
        emb: net.embed(params, &lookups),
        segments,
    };
    let cache = net.forward(params, &batch, rng)?;
    let mut loss = 0.0;
    let mut head_grads = Vec::new();
    for h in 0..n_heads {
        if head_rows[h].is_empty() {
            continue;
        }
        let hidden = cache.hidden.select(Axis(0), &head_rows[h]);
        let logits = net.head_logits(params, hidden.view(), h);
        let on = vec![true; head_rows[h].len()];
        let (l, mut dlogits) = masked_cross_entropy_grad(&logits, &head_targets[h], &on)?;
        // re-weight per-head means into one mean over all loss rows
        let w = head_rows[h].len() as f64 / total_rows as f64;
        loss += l * w;
        dlogits.mapv_inplace(|v| v * F::of(w));
        head_grads.push(HeadGrad {
            head: h,
            rows: head_rows[h].clone(),
            dlogits,
        });
    }
    if let Some(grads) = grads {
        let d_emb = net.backward(params, &batch, &cache, &head_grads, grads);
        net.embed_backward(grads, &lookups, &d_emb);
    }
    Ok(loss)
}

/// Draws batches by walking shuffled epochs.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self, lens: &[usize], batch_tokens: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut tokens = 0;
        while tokens < batch_tokens && out.len() < self.order.len() {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            tokens += lens[i];
            out.push(i);
        }
        out
    }
}

/// Shared optimisation loop over prepared examples.
fn optimise<F: Scalar>(
    net: &Transformer,
    params: &mut Params<F>,
    train: &TrainConfig,
    seed: u64,
    n_items: usize,
    lens: &[usize],
    mut make: impl FnMut(usize, &mut ChaCha8Rng) -> Example,
) -> Result<(Vec<LogRow>, f64, u64)> {
    let schedule = InverseSqrt::new(train.peak_lr, train.warmup);
    let mut opt = AdamW::new(train.adamw, &net.layout);
    let mut sampler = BatchSampler::new(n_items, mix(seed ^ 0x6461_7461));
    let mut example_rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x6c61_7972));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x6472_6f70));
    let mut grads = Params::zeros(&net.layout);
    let mut log = Vec::with_capacity(train.steps);
    for _ in 0..train.steps {
        let idx = sampler.next(lens, train.batch_tokens);
        let examples: Vec<Example> = idx.iter().map(|&i| make(i, &mut example_rng)).collect();
        grads.fill(F::zero());
        let loss = batch_step(
            net,
            params,
            &examples,
            Some(&mut grads),
            Some(&mut dropout_rng as &mut dyn RngCore),
        )?;
        if let Some(clip) = train.grad_clip {
            let norm = grads.l2_norm();
            if norm > clip {
                grads.scale(F::of(clip / norm));
            }
        }
        let lr = schedule.lr(opt.step + 1);
        opt.update(params, &grads, &net.layout, lr)?;
        log.push(LogRow {
            step: opt.step,
            lr,
            loss,
        });
    }
    let total_tokens: usize = lens.iter().sum();
    let per_epoch = total_tokens.div_ceil(train.batch_tokens.max(1)).clamp(1, log.len().max(1));
    let tail = &log[log.len().saturating_sub(per_epoch)..];
    let final_loss = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    };
    Ok((log, final_loss, opt.step))
}

/// Trains a GAR model on `corpus` in the given sequence order.
pub fn train_gar(
    corpus: &[Utterance],
    lang: &LanguageConfig,
    variant: SeqVariant,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<GarModel>> {
    let vocab = Vocab::new(lang);
    let mut model = GarModel::<f32>::new(vocab, variant, model_cfg.clone(), train.init_std, seed)?;
    let max = model.net.config.max_seq_len;
    let mut seqs = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for u in corpus {
        let s = build_hybrid(&vocab, u, 1, variant)?;
        if s.len() - 1 > max {
            skipped += 1;
        } else {
            seqs.push(s);
        }
    }
    if seqs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {} utterances exceed max_seq_len {max}",
            corpus.len()
        )));
    }
    let examples: Vec<Example> = seqs.iter().map(|s| model.example(s)).collect();
    let lens: Vec<usize> = examples.iter().map(Example::len).collect();
    let net = model.net.clone();
    let (log, final_loss, step) = optimise(&net, &mut model.params, train, seed, examples.len(), &lens, |i, _| {
        let e = &examples[i];
        Example {
            lookups: e.lookups.clone(),
            mask: e.mask.clone(),
            rows: e.rows.clone(),
            targets: e.targets.clone(),
            head: 0,
        }
    })?;
    model.step = step;
    Ok(TrainOutcome {
        model,
        log,
        final_loss,
        skipped,
    })
}

/// NAR model: table 0 holds phonemes and specials, tables `1..=L` the codes
/// of each layer, table `L + 1` the target-layer embedding. Head `j - 2`
/// predicts layer `j`.
#[derive(Debug, Clone)]
pub struct NarModel<F = f32> {
    pub net: Transformer,
    pub vocab: Vocab,
    pub variant: SeqVariant,
    pub params: Params<F>,
    pub step: u64,
}

/// Layer-1 hybrid structure with every layer's code at each acoustic position.
#[derive(Debug, Clone)]
pub struct NarInput {
    pub seq: HybridSequence,
    /// `codes[k - 1][a]`: layer-`k` code of the `a`-th acoustic position.
    pub codes: Vec<Vec<Code>>,
}

impl NarInput {
    pub fn from_utterance(vocab: &Vocab, utt: &Utterance, variant: SeqVariant) -> Result<Self> {
        Ok(Self {
            seq: build_hybrid(vocab, utt, 1, variant)?,
            codes: utt.codes.clone(),
        })
    }
}

impl<F: Scalar> NarModel<F> {
    pub fn new(vocab: Vocab, variant: SeqVariant, mut cfg: ModelConfig, init_std: f64, seed: u64) -> Result<Self> {
        if vocab.n_layers < 2 {
            return Err(Error::Config("the NAR model needs at least two code layers".into()));
        }
        cfg.vocab_size = vocab.size();
        let net = Transformer::new(cfg, &Self::table_rows(&vocab), &Self::head_sizes(&vocab))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x6e61_72));
        let params = Params::init(&net.layout, init_std, &mut rng);
        Ok(Self {
            net,
            vocab,
            variant,
            params,
            step: 0,
        })
    }

    fn table_rows(vocab: &Vocab) -> Vec<usize> {
        let mut rows = vec![vocab.base_size()];
        rows.extend(std::iter::repeat_n(vocab.codebook_size as usize, vocab.n_layers as usize));
        rows.push(vocab.n_layers as usize + 1);
        rows
    }

    fn head_sizes(vocab: &Vocab) -> Vec<usize> {
        vec![vocab.codebook_size as usize; vocab.n_layers as usize - 1]
    }

    fn layer_table(&self) -> u32 {
        self.vocab.n_layers + 1
    }

    /// Inputs for predicting `layer`: code embeddings of layers `< layer` at
    /// acoustic positions, base embeddings elsewhere, plus the layer embedding.
    pub fn lookups(&self, input: &NarInput, layer: usize) -> Lookups {
        let mut l = Lookups::new();
        let mut a = 0;
        let lt = (self.layer_table(), layer as u32);
        let mut items = Vec::with_capacity(layer + 1);
        for (&tok, &kind) in input.seq.tokens.iter().zip(&input.seq.kinds) {
            items.clear();
            if kind == TokenKind::Acoustic {
                for k in 1..layer {
                    items.push((k as u32, input.codes[k - 1][a]));
                }
                a += 1;
            } else {
                items.push((0, tok));
            }
            items.push(lt);
            l.push(&items);
        }
        l
    }

    fn example(&self, input: &NarInput, layer: usize) -> Example {
        let n = input.seq.len();
        let lm = loss_mask(&input.seq, Stage::Nar);
        let rows: Vec<usize> = (0..n).filter(|&t| lm[t]).collect();
        let targets = input.codes[layer - 1].iter().map(|&c| c as usize).collect();
        Example {
            lookups: self.lookups(input, layer),
            mask: Array2::from_elem((n, n), true),
            rows,
            targets,
            head: layer - 2,
        }
    }

    pub fn sequence_loss(&self, input: &NarInput, layer: usize, grads: Option<&mut Params<F>>) -> Result<f64> {
        let ex = self.example(input, layer);
        batch_step(&self.net, &self.params, &[ex], grads, None)
    }

    /// Greedy layer-`layer` codes at every acoustic position.
    pub fn predict_layer(&self, input: &NarInput, layer: usize) -> Result<Vec<Code>> {
        if layer < 2 || layer > self.vocab.n_layers as usize {
            return Err(Error::Validation(format!("NAR cannot predict layer {layer}")));
        }
        if input.codes.len() < layer - 1 {
            return Err(Error::Validation(format!("layers below {layer} are missing")));
        }
        let n = input.seq.len();
        if n > self.net.config.max_seq_len {
            return Err(Error::Length {
                len: n,
                max: self.net.config.max_seq_len,
            });
        }
        let lm = loss_mask(&input.seq, Stage::Nar);
        let rows: Vec<usize> = (0..n).filter(|&t| lm[t]).collect();
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let batch = Batch {
            emb: self.net.embed(&self.params, &self.lookups(input, layer)),
            segments: vec![Segment {
                start: 0,
                len: n,
                mask: Array2::from_elem((n, n), true),
            }],
        };
        let cache = self.net.forward(&self.params, &batch, None)?;
        let hidden = cache.hidden.select(Axis(0), &rows);
        let logits = self.net.head_logits(&self.params, hidden.view(), layer - 2);
        Ok(logits
            .outer_iter()
            .map(|row| {
                // lowest index wins ties
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as Code
            })
            .collect())
    }

    /// Fills layers `2..=L` greedily from layer 1.
    pub fn complete(&self, seq: &HybridSequence, layer1: &[Code]) -> Result<Vec<Vec<Code>>> {
        let mut input = NarInput {
            seq: seq.clone(),
            codes: vec![layer1.to_vec()],
        };
        for j in 2..=self.vocab.n_layers as usize {
            let next = self.predict_layer(&input, j)?;
            input.codes.push(next);
        }
        Ok(input.codes)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint<F> {
        Checkpoint {
            header: CheckpointHeader {
                kind: "nar".into(),
                dtype: F::DTYPE.into(),
                model: self.net.config.clone(),
                vocab: self.vocab,
                table_rows: Self::table_rows(&self.vocab),
                head_sizes: Self::head_sizes(&self.vocab),
                layout: self.net.layout.clone(),
                step: self.step,
                meta: merge_meta(meta, serde_json::json!({ "variant": self.variant })),
            },
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<F>) -> Result<Self> {
        let h = &ckpt.header;
        if h.kind != "nar" {
            return Err(Error::Checkpoint(format!("expected a nar checkpoint, found {}", h.kind)));
        }
        let variant: SeqVariant = serde_json::from_value(h.meta["variant"].clone())
            .map_err(|e| Error::Checkpoint(format!("variant: {e}")))?;
        let net = Transformer::new(h.model.clone(), &h.table_rows, &h.head_sizes)?;
        if net.layout != h.layout {
            return Err(Error::Checkpoint("parameter layout does not match the model config".into()));
        }
        Ok(Self {
            net,
            vocab: h.vocab,
            variant,
            params: ckpt.params,
            step: h.step,
        })
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint(meta))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }
}

/// Trains the NAR model; each sampled sequence gets a target layer drawn
/// uniformly from `2..=L`.
pub fn train_nar(
    corpus: &[Utterance],
    lang: &LanguageConfig,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<NarModel>> {
    let vocab = Vocab::new(lang);
    let variant = SeqVariant::plain(VariantKind::Ellav);
    let mut model = NarModel::<f32>::new(vocab, variant, model_cfg.clone(), train.init_std, seed)?;
    let max = model.net.config.max_seq_len;
    let mut inputs = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for u in corpus {
        let input = NarInput::from_utterance(&vocab, u, variant)?;
        if input.seq.len() > max {
            skipped += 1;
        } else {
            inputs.push(input);
        }
    }
    if inputs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {} utterances exceed max_seq_len {max}",
            corpus.len()
        )));
    }
    let lens: Vec<usize> = inputs.iter().map(|i| i.seq.len()).collect();
    let n_layers = vocab.n_layers as usize;
    let net = model.net.clone();
    let template = model.clone();
    let (log, final_loss, step) = optimise(&net, &mut model.params, train, seed, inputs.len(), &lens, |i, rng| {
        let layer = rng.random_range(2..=n_layers);
        template.example(&inputs[i], layer)
    })?;
    model.step = step;
    Ok(TrainOutcome {
        model,
        log,
        final_loss,
        skipped,
    })
}

/// Fraction of acoustic positions where greedy layer-`layer` prediction
/// matches the corpus.
pub fn nar_layer_accuracy<F: Scalar>(model: &NarModel<F>, corpus: &[Utterance], layer: usize) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for u in corpus {
        let input = NarInput::from_utterance(&model.vocab, u, model.variant)?;
        let pred = model.predict_layer(&input, layer)?;
        hits += pred.iter().zip(&u.codes[layer - 1]).filter(|(a, b)| a == b).count();
        total += pred.len();
    }
    if total == 0 {
        return Err(Error::EmptyDataset("no acoustic positions to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gen_corpus;
    use crate::tensornn::grad_check;

    fn small_lang() -> LanguageConfig {
        LanguageConfig {
            n_phonemes: 4,
            n_speakers: 2,
            codebook_size: 20,
            n_layers: 3,
            utt_len_range: [2, 3],
            mean_dur: 2,
            mean_sil_dur: 2,
            ..LanguageConfig::default()
        }
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 0,
            max_seq_len: 40,
            dropout: 0.0,
        }
    }

    #[test]
    fn gar_head_excludes_phonemes_and_bos() {
        let lang = LanguageConfig::default();
        let v = Vocab::new(&lang);
        let h = GarHead {
            codebook_size: lang.codebook_size,
        };
        assert_eq!(h.size(), 146);
        for p in 0..=lang.n_phonemes {
            assert_eq!(h.index_of(&v, v.phoneme(p)), None);
        }
        assert_eq!(h.index_of(&v, v.bos()), None);
        assert_eq!(h.index_of(&v, v.pad()), None);
        assert_eq!(h.index_of(&v, v.acoustic(2, 3)), None);
        assert_eq!(h.index_of(&v, v.eop()), Some(144));
        assert_eq!(h.index_of(&v, v.acoustic(1, 7)), Some(7));
    }

    #[test]
    fn gar_distribution_is_normalised_and_uniform_at_init() {
        let lang = LanguageConfig::default();
        let v = Vocab::new(&lang);
        let u = gen_corpus(&lang, 1, 3).unwrap().remove(0);
        let seq = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::Ellav)).unwrap();
        let m = GarModel::<f32>::new(v, SeqVariant::plain(VariantKind::Ellav), ModelConfig::default(), 0.02, 1).unwrap();
        let p = m.next_distribution(&seq).unwrap();
        assert_eq!(p.len(), 146);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let loss = m.sequence_loss(&seq, None).unwrap();
        assert!((loss - 146f64.ln()).abs() < 0.2, "{loss}");
    }

    #[test]
    fn gar_assembly_gradients_match_finite_differences() {
        let lang = small_lang();
        let v = Vocab::new(&lang);
        let u = gen_corpus(&lang, 1, 9).unwrap().remove(0);
        let variant = SeqVariant::plain(VariantKind::Ellav);
        let seq = build_hybrid(&v, &u, 1, variant).unwrap();
        let m = GarModel::<f64>::new(v, variant, small_cfg(), 0.5, 2).unwrap();
        let mut grads = Params::zeros(&m.net.layout);
        m.sequence_loss(&seq, Some(&mut grads)).unwrap();
        let report = grad_check(&m.net.layout, &m.params, &grads, 1e-5, |p| {
            let probe = GarModel {
                params: p.clone(),
                ..m.clone()
            };
            probe.sequence_loss(&seq, None)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{:?}", report.per_tensor);
    }

    #[test]
    fn nar_assembly_gradients_match_finite_differences() {
        let lang = small_lang();
        let v = Vocab::new(&lang);
        let u = gen_corpus(&lang, 1, 4).unwrap().remove(0);
        let m = NarModel::<f64>::new(v, SeqVariant::plain(VariantKind::Ellav), small_cfg(), 0.5, 2).unwrap();
        let input = NarInput::from_utterance(&v, &u, m.variant).unwrap();
        let mut grads = Params::zeros(&m.net.layout);
        m.sequence_loss(&input, 3, Some(&mut grads)).unwrap();
        let report = grad_check(&m.net.layout, &m.params, &grads, 1e-5, |p| {
            let probe = NarModel {
                params: p.clone(),
                ..m.clone()
            };
            probe.sequence_loss(&input, 3, None)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{:?}", report.per_tensor);
    }

    #[test]
    fn nar_prediction_ignores_layers_at_or_above_target() {
        let lang = small_lang();
        let v = Vocab::new(&lang);
        let u = gen_corpus(&lang, 1, 4).unwrap().remove(0);
        let m = NarModel::<f64>::new(v, SeqVariant::plain(VariantKind::Ellav), small_cfg(), 0.5, 2).unwrap();
        let input = NarInput::from_utterance(&v, &u, m.variant).unwrap();
        let base = m.predict_layer(&input, 2).unwrap();
        let mut perturbed = input.clone();
        for c in perturbed.codes[1..].iter_mut().flatten() {
            *c = (*c + 7) % lang.codebook_size;
        }
        assert_eq!(m.predict_layer(&perturbed, 2).unwrap(), base);
        let mut below = input.clone();
        for c in below.codes[0].iter_mut() {
            *c = (*c + 7) % lang.codebook_size;
        }
        // perturbing layer 1 is allowed to (and here does) matter
        let lk = m.lookups(&below, 2);
        let lk0 = m.lookups(&input, 2);
        assert!((0..lk.len()).any(|i| lk.get(i) != lk0.get(i)));
    }

    #[test]
    fn masked_loss_equals_loss_over_kept_positions() {
        let lang = small_lang();
        let v = Vocab::new(&lang);
        let u = gen_corpus(&lang, 1, 5).unwrap().remove(0);
        let variant = SeqVariant::plain(VariantKind::Ellav);
        let seq = build_hybrid(&v, &u, 1, variant).unwrap();
        let m = GarModel::<f64>::new(v, variant, small_cfg(), 0.3, 3).unwrap();
        let loss = m.sequence_loss(&seq, None).unwrap();
        // explicit route: full logits, drop masked positions by hand
        let n = seq.len() - 1;
        let emb = m.net.embed(&m.params, &GarModel::<f64>::lookups(&seq.tokens[..n]));
        let logits = m
            .net
            .forward_logits(&m.params, &emb, &prefix_causal_mask(n, seq.bos_index), 0)
            .unwrap();
        let lm = loss_mask(&seq, Stage::Gar);
        let head = m.head();
        let mut total = 0.0;
        let mut count = 0;
        for t in 0..n {
            if !lm[t + 1] {
                continue;
            }
            let p = softmax_row(logits.row(t));
            total -= p[head.index_of(&v, seq.tokens[t + 1]).unwrap()].ln();
            count += 1;
        }
        assert!((loss - total / count as f64).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let lang = small_lang();
        let corpus = gen_corpus(&lang, 3, 1).unwrap();
        let cfg = ModelConfig {
            max_seq_len: 3,
            ..small_cfg()
        };
        let train = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let err = train_gar(&corpus, &lang, SeqVariant::plain(VariantKind::Ellav), &cfg, &train, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
        let err = train_nar(&corpus, &lang, &cfg, &train, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn nar_needs_two_layers() {
        let lang = LanguageConfig {
            n_layers: 1,
            ..small_lang()
        };
        let err = NarModel::<f32>::new(Vocab::new(&lang), SeqVariant::plain(VariantKind::Ellav), small_cfg(), 0.02, 1);
        assert!(err.is_err());
    }

    #[test]
    fn checkpoints_round_trip() {
        let lang = small_lang();
        let v = Vocab::new(&lang);
        let g = GarModel::<f32>::new(v, SeqVariant::new(VariantKind::EllavNophn, 1).unwrap(), small_cfg(), 0.02, 1)
            .unwrap();
        let back = GarModel::<f32>::from_checkpoint(g.to_checkpoint(serde_json::json!({"note": 1}))).unwrap();
        assert_eq!(back.params, g.params);
        assert_eq!(back.variant, g.variant);
        let n = NarModel::<f32>::new(v, SeqVariant::plain(VariantKind::Ellav), small_cfg(), 0.02, 1).unwrap();
        assert!(GarModel::<f32>::from_checkpoint(n.to_checkpoint(serde_json::Value::Null)).is_err());
        let back = NarModel::<f32>::from_checkpoint(n.to_checkpoint(serde_json::Value::Null)).unwrap();
        assert_eq!(back.params, n.params);
    }
}
