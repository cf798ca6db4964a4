//! Hybrid phoneme/acoustic sequences.
//!
//! The interleaved layout for one code layer is
//!
//! ```text
//! G(P1) .. G(Pn') BOS  P1 <C1> EOP  <Csil>  P2 <C2> EOP ..  Pn' <Cn'> EOP  EOS
//! ```
//!
//! where `G(..)` is the global phoneme prefix and silence spans carry neither
//! a phoneme token nor an EOP. Every non-global token keeps the index of the
//! utterance phoneme it belongs to, which is what local advance, prompt
//! cutting and span bookkeeping operate on.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Code, LanguageConfig, PhonemeId, Utterance};
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Unified id space: phonemes (silence included but never emitted), the four
/// specials, then one block of `codebook_size` ids per quantizer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_phonemes: u32,
    pub codebook_size: u32,
    pub n_layers: u32,
}

impl Vocab {
    pub fn new(cfg: &LanguageConfig) -> Self {
        Self {
            n_phonemes: cfg.n_phonemes,
            codebook_size: cfg.codebook_size,
            n_layers: cfg.n_layers,
        }
    }

    pub fn silence(&self) -> TokenId {
        self.n_phonemes
    }
    pub fn bos(&self) -> TokenId {
        self.n_phonemes + 1
    }
    pub fn eop(&self) -> TokenId {
        self.n_phonemes + 2
    }
    pub fn eos(&self) -> TokenId {
        self.n_phonemes + 3
    }
    pub fn pad(&self) -> TokenId {
        self.n_phonemes + 4
    }

    fn acoustic_base(&self) -> TokenId {
        self.n_phonemes + 5
    }

    pub fn phoneme(&self, p: PhonemeId) -> TokenId {
        p
    }

    /// Unified id of `code` in 1-based `layer`.
    pub fn acoustic(&self, layer: usize, code: Code) -> TokenId {
        self.acoustic_base() + (layer as u32 - 1) * self.codebook_size + code
    }

    /// Inverse of [`Vocab::acoustic`].
    pub fn acoustic_code(&self, id: TokenId) -> Option<(usize, Code)> {
        let base = self.acoustic_base();
        if id < base || id >= base + self.n_layers * self.codebook_size {
            return None;
        }
        let off = id - base;
        Some(((off / self.codebook_size) as usize + 1, off % self.codebook_size))
    }

    pub fn is_phoneme(&self, id: TokenId) -> bool {
        id <= self.n_phonemes
    }

    /// Ids of phonemes, specials and layer-1 acoustics: the GAR input vocabulary.
    pub fn gar_input_size(&self) -> usize {
        (self.acoustic_base() + self.codebook_size) as usize
    }

    /// Phonemes and specials only.
    pub fn base_size(&self) -> usize {
        self.acoustic_base() as usize
    }

    pub fn size(&self) -> usize {
        (self.acoustic_base() + self.n_layers * self.codebook_size) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    GlobalPhoneme,
    Bos,
    LocalPhoneme,
    Acoustic,
    Eop,
    Eos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Ellav,
    EllavNoglobal,
    EllavNophn,
    ValleOrder,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Ellav,
        VariantKind::EllavNoglobal,
        VariantKind::EllavNophn,
        VariantKind::ValleOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Ellav => "ellav",
            VariantKind::EllavNoglobal => "ellav_noglobal",
            VariantKind::EllavNophn => "ellav_nophn",
            VariantKind::ValleOrder => "valle",
        }
    }

    pub fn has_global(self) -> bool {
        !matches!(self, VariantKind::EllavNoglobal)
    }

    pub fn has_local_phonemes(self) -> bool {
        matches!(self, VariantKind::Ellav | VariantKind::EllavNoglobal)
    }

    /// ELLA-V family variants carry EOP markers and a phoneme schedule.
    pub fn interleaved(self) -> bool {
        !matches!(self, VariantKind::ValleOrder)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ellav" | "ella_v" => Ok(VariantKind::Ellav),
            "ellav_noglobal" | "noglobal" => Ok(VariantKind::EllavNoglobal),
            "ellav_nophn" | "nophn" => Ok(VariantKind::EllavNophn),
            "valle" | "valle_order" => Ok(VariantKind::ValleOrder),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqVariant {
    pub kind: VariantKind,
    /// Local-advance frames; always 0 for the VALL-E order.
    pub adv: u32,
}

impl SeqVariant {
    pub fn new(kind: VariantKind, adv: u32) -> Result<Self> {
        let v = Self { kind, adv };
        v.validate()?;
        Ok(v)
    }

    pub fn plain(kind: VariantKind) -> Self {
        Self { kind, adv: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == VariantKind::ValleOrder && self.adv != 0 {
            return Err(Error::Config("local advance is undefined for the valle order".into()));
        }
        Ok(())
    }
}

/// Acoustic-token range of one utterance phoneme inside a hybrid sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSpan {
    pub phoneme: PhonemeId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridSequence {
    pub tokens: Vec<TokenId>,
    pub kinds: Vec<TokenKind>,
    /// Utterance phoneme index each LocalPhoneme/Acoustic/EOP token belongs to.
    pub owners: Vec<Option<u32>>,
    pub bos_index: usize,
    pub layer: usize,
    pub phoneme_spans: Vec<PhonemeSpan>,
}

impl HybridSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn push(&mut self, token: TokenId, kind: TokenKind, owner: Option<u32>) {
        self.tokens.push(token);
        self.kinds.push(kind);
        self.owners.push(owner);
    }

    /// Recomputes `phoneme_spans` from `owners` for `phonemes`.
    pub fn rebuild_spans(&mut self, phonemes: &[PhonemeId]) {
        let mut spans: Vec<PhonemeSpan> = phonemes
            .iter()
            .map(|&p| PhonemeSpan {
                phoneme: p,
                start: usize::MAX,
                end: 0,
            })
            .collect();
        for (t, (&k, &o)) in self.kinds.iter().zip(&self.owners).enumerate() {
            if let (TokenKind::Acoustic, Some(o)) = (k, o) {
                let s = &mut spans[o as usize];
                s.start = s.start.min(t);
                s.end = s.end.max(t + 1);
            }
        }
        for s in &mut spans {
            if s.start == usize::MAX {
                s.start = s.end;
            }
        }
        self.phoneme_spans = spans;
    }

    /// Layer-local codes of the Acoustic tokens, in order.
    pub fn extract_acoustic(&self, vocab: &Vocab) -> Vec<Code> {
        self.tokens
            .iter()
            .zip(&self.kinds)
            .filter(|(_, &k)| k == TokenKind::Acoustic)
            .map(|(&t, _)| vocab.acoustic_code(t).expect("acoustic token in range").1)
            .collect()
    }

    /// Same token structure with the acoustic tokens replaced by `layer`'s codes.
    pub fn with_layer_codes(&self, vocab: &Vocab, layer: usize, codes: &[Code]) -> Result<Self> {
        let mut out = self.clone();
        let mut it = codes.iter();
        for (t, &k) in out.tokens.iter_mut().zip(&self.kinds) {
            if k == TokenKind::Acoustic {
                let &c = it
                    .next()
                    .ok_or_else(|| Error::Invariant("too few codes for acoustic positions".into()))?;
                *t = vocab.acoustic(layer, c);
            }
        }
        if it.next().is_some() {
            return Err(Error::Invariant("too many codes for acoustic positions".into()));
        }
        out.layer = layer;
        Ok(out)
    }
}

fn check_phonemes(vocab: &Vocab, utt: &Utterance) -> Result<()> {
    if let Some(p) = utt.phonemes.iter().find(|&&p| p > vocab.silence()) {
        return Err(Error::Invariant(format!("phoneme {p} outside the vocabulary")));
    }
    Ok(())
}

/// Builds the sequence for 1-based `layer` in the given variant.
pub fn build_hybrid(vocab: &Vocab, utt: &Utterance, layer: usize, variant: SeqVariant) -> Result<HybridSequence> {
    variant.validate()?;
    check_phonemes(vocab, utt)?;
    if layer == 0 || layer > utt.n_layers() {
        return Err(Error::Validation(format!(
            "layer {layer} outside 1..={}",
            utt.n_layers()
        )));
    }
    let real: Vec<PhonemeId> = utt.real_phonemes(vocab.silence());
    let global = if variant.kind.has_global() { real.as_slice() } else { &[] };
    let mut seq = start_sequence(vocab, global, layer)?;
    append_interleaved(vocab, &mut seq, utt, layer, variant.kind, 0..utt.phonemes.len());
    seq.push(vocab.eos(), TokenKind::Eos, None);
    seq.rebuild_spans(&utt.phonemes);
    if variant.adv > 0 {
        seq = apply_local_advance(&seq, variant.adv, &utt.phonemes);
    }
    Ok(seq)
}

/// Global prefix and BOS.
fn start_sequence(vocab: &Vocab, global: &[PhonemeId], layer: usize) -> Result<HybridSequence> {
    let mut seq = HybridSequence {
        tokens: Vec::new(),
        kinds: Vec::new(),
        owners: Vec::new(),
        bos_index: global.len(),
        layer,
        phoneme_spans: Vec::new(),
    };
    for &p in global {
        if p == vocab.silence() {
            return Err(Error::Invariant("silence in the global phoneme prefix".into()));
        }
        seq.push(vocab.phoneme(p), TokenKind::GlobalPhoneme, None);
    }
    seq.push(vocab.bos(), TokenKind::Bos, None);
    Ok(seq)
}

fn append_interleaved(
    vocab: &Vocab,
    seq: &mut HybridSequence,
    utt: &Utterance,
    layer: usize,
    kind: VariantKind,
    phonemes: std::ops::Range<usize>,
) {
    let frames = utt.phoneme_frames();
    let row = &utt.codes[layer - 1];
    for k in phonemes {
        let p = utt.phonemes[k];
        let owner = Some(k as u32);
        let real = p != vocab.silence();
        if real && kind.has_local_phonemes() {
            seq.push(vocab.phoneme(p), TokenKind::LocalPhoneme, owner);
        }
        let (s, e) = frames[k];
        for &c in &row[s..e] {
            seq.push(vocab.acoustic(layer, c), TokenKind::Acoustic, owner);
        }
        if real && kind.interleaved() {
            seq.push(vocab.eop(), TokenKind::Eop, owner);
        }
    }
}

/// Moves every run of marker tokens after BOS (an EOP, the following
/// LocalPhoneme, or both) earlier by `min(adv, l)` acoustic frames, where `l`
/// is the number of directly preceding acoustic tokens of the same phoneme.
/// EOS and the global prefix never move.
pub fn apply_local_advance(seq: &HybridSequence, adv: u32, phonemes: &[PhonemeId]) -> HybridSequence {
    let adv = adv as usize;
    let n = seq.len();
    let mut out = HybridSequence {
        tokens: Vec::with_capacity(n),
        kinds: Vec::with_capacity(n),
        owners: Vec::with_capacity(n),
        bos_index: seq.bos_index,
        layer: seq.layer,
        phoneme_spans: Vec::new(),
    };
    let is_marker = |k: TokenKind| matches!(k, TokenKind::Eop | TokenKind::LocalPhoneme);
    let mut t = 0;
    while t < n {
        let k = seq.kinds[t];
        if t <= seq.bos_index || !is_marker(k) || adv == 0 {
            out.push(seq.tokens[t], k, seq.owners[t]);
            t += 1;
            continue;
        }
        let run_end = (t..n).find(|&u| !is_marker(seq.kinds[u])).unwrap_or(n);
        // trailing acoustic tokens of the same phoneme already emitted
        let mut trailing = 0;
        let mut owner = None;
        for u in (0..out.len()).rev() {
            if out.kinds[u] != TokenKind::Acoustic {
                break;
            }
            if owner.is_none() {
                owner = out.owners[u];
            }
            if out.owners[u] != owner {
                break;
            }
            trailing += 1;
        }
        let shift = adv.min(trailing);
        let at = out.len() - shift;
        for (off, u) in (t..run_end).enumerate() {
            out.tokens.insert(at + off, seq.tokens[u]);
            out.kinds.insert(at + off, seq.kinds[u]);
            out.owners.insert(at + off, seq.owners[u]);
        }
        t = run_end;
    }
    out.rebuild_spans(phonemes);
    out
}

/// `allow(i, j) = (i < bos && j < bos) || j <= i`.
pub fn attention_mask(seq: &HybridSequence) -> Array2<bool> {
    prefix_causal_mask(seq.len(), seq.bos_index)
}

pub fn prefix_causal_mask(len: usize, bos_index: usize) -> Array2<bool> {
    Array2::from_shape_fn((len, len), |(i, j)| (i < bos_index && j < bos_index) || j <= i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Gar,
    Nar,
}

/// Positions whose token is a training target.
pub fn loss_mask(seq: &HybridSequence, stage: Stage) -> Vec<bool> {
    seq.kinds
        .iter()
        .enumerate()
        .map(|(t, &k)| match stage {
            Stage::Gar => {
                t > seq.bos_index && matches!(k, TokenKind::Acoustic | TokenKind::Eop | TokenKind::Eos)
            }
            Stage::Nar => k == TokenKind::Acoustic,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptTask {
    /// Leading frames of an utterance prompt the rest of the same utterance.
    Continuation { prompt_frames: usize },
    /// A whole utterance prompts a new target phoneme sequence.
    CrossSpeaker,
}

/// Decoding input: the hybrid prefix plus the phonemes still to be spoken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub prefix: HybridSequence,
    /// Real phonemes the decoder must still generate, in order.
    pub schedule: Vec<PhonemeId>,
    pub speaker: u32,
    /// Frame count the generated audio is compared against for INF.
    pub reference_frames: usize,
    /// Number of acoustic frames in the prompt.
    pub prompt_frames: usize,
}

/// Builds the decoding prompt for `task`.
///
/// Continuation snaps the split to the largest phoneme boundary not after
/// `prompt_frames`, keeps the full real-phoneme sequence as the global prefix
/// and cuts the hybrid sequence before the first token belonging to an
/// unprompted phoneme. Cross-speaker concatenates the prompt's and the
/// target's real phonemes in the global prefix and keeps the whole prompt
/// utterance interleaved.
pub fn build_prompt(
    vocab: &Vocab,
    lang: &LanguageConfig,
    task: PromptTask,
    prompt_utt: &Utterance,
    target_phonemes: &[PhonemeId],
    variant: SeqVariant,
) -> Result<Prompt> {
    variant.validate()?;
    check_phonemes(vocab, prompt_utt)?;
    let sil = vocab.silence();
    match task {
        PromptTask::Continuation { prompt_frames } => {
            let total = prompt_utt.n_frames();
            if prompt_frames > total {
                return Err(Error::InvalidPrompt(format!(
                    "{}: prompt of {prompt_frames} frames exceeds utterance length {total}",
                    prompt_utt.id
                )));
            }
            let frames = prompt_utt.phoneme_frames();
            let n_prompt = frames.iter().take_while(|&&(_, e)| e <= prompt_frames).count();
            let full = build_hybrid(vocab, prompt_utt, 1, variant)?;
            let cut = (full.bos_index + 1..full.len())
                .find(|&t| {
                    full.kinds[t] == TokenKind::Eos
                        || full.owners[t].is_some_and(|o| o as usize >= n_prompt)
                })
                .unwrap_or(full.len());
            let mut prefix = truncate(&full, cut);
            prefix.rebuild_spans(&prompt_utt.phonemes[..n_prompt]);
            let schedule: Vec<PhonemeId> = prompt_utt.phonemes[n_prompt..]
                .iter()
                .copied()
                .filter(|&p| p != sil)
                .collect();
            let done = frames.get(n_prompt.wrapping_sub(1)).map_or(0, |&(_, e)| e);
            Ok(Prompt {
                prefix,
                schedule,
                speaker: prompt_utt.speaker,
                reference_frames: total - done,
                prompt_frames: done,
            })
        }
        PromptTask::CrossSpeaker => {
            if let Some(&p) = target_phonemes.iter().find(|&&p| p >= sil) {
                return Err(Error::InvalidPrompt(format!("target phoneme {p} is not a real phoneme")));
            }
            let mut global = prompt_utt.real_phonemes(sil);
            global.extend_from_slice(target_phonemes);
            let global = if variant.kind.has_global() { global } else { Vec::new() };
            let mut seq = start_sequence(vocab, &global, 1)?;
            append_interleaved(vocab, &mut seq, prompt_utt, 1, variant.kind, 0..prompt_utt.phonemes.len());
            seq.rebuild_spans(&prompt_utt.phonemes);
            if variant.adv > 0 {
                seq = apply_local_advance(&seq, variant.adv, &prompt_utt.phonemes);
            }
            Ok(Prompt {
                prefix: seq,
                schedule: target_phonemes.to_vec(),
                speaker: prompt_utt.speaker,
                reference_frames: target_phonemes.len() * lang.mean_dur as usize,
                prompt_frames: prompt_utt.n_frames(),
            })
        }
    }
}

fn truncate(seq: &HybridSequence, len: usize) -> HybridSequence {
    HybridSequence {
        tokens: seq.tokens[..len].to_vec(),
        kinds: seq.kinds[..len].to_vec(),
        owners: seq.owners[..len].to_vec(),
        bos_index: seq.bos_index,
        layer: seq.layer,
        phoneme_spans: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang() -> LanguageConfig {
        LanguageConfig {
            n_layers: 2,
            ..LanguageConfig::default()
        }
    }

    /// Utterance with explicit phonemes, durations and layer-1 codes.
    fn utt(phonemes: &[PhonemeId], durations: &[u32], codes: &[Code]) -> Utterance {
        let l = lang();
        Utterance {
            id: "t".into(),
            speaker: 0,
            phonemes: phonemes.to_vec(),
            durations: durations.to_vec(),
            codes: crate::corpus::complete_layers(&l, codes, 0),
        }
    }

    #[derive(Debug, PartialEq, Clone, Copy)]
    enum S {
        P(u32),
        A(Code),
        Bos,
        Eop,
        Eos,
    }

    fn render(v: &Vocab, seq: &HybridSequence) -> Vec<S> {
        seq.tokens
            .iter()
            .map(|&t| {
                if v.is_phoneme(t) {
                    S::P(t)
                } else if t == v.bos() {
                    S::Bos
                } else if t == v.eop() {
                    S::Eop
                } else if t == v.eos() {
                    S::Eos
                } else {
                    S::A(v.acoustic_code(t).unwrap().1)
                }
            })
            .collect()
    }

    use S::*;

    #[test]
    fn vocab_regions_are_disjoint() {
        let v = Vocab::new(&lang());
        let specials = [v.bos(), v.eop(), v.eos(), v.pad()];
        for s in specials {
            assert!(!v.is_phoneme(s));
            assert!(v.acoustic_code(s).is_none());
        }
        assert_eq!(v.acoustic_code(v.acoustic(2, 5)), Some((2, 5)));
        assert_ne!(v.acoustic(1, 143), v.acoustic(2, 0));
        assert_eq!(v.size(), 21 + 2 * 144);
    }

    #[test]
    fn interleaved_layout() {
        let v = Vocab::new(&lang());
        let u = utt(&[3, 1], &[2, 3], &[10, 11, 12, 13, 14]);
        let seq = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::Ellav)).unwrap();
        assert_eq!(
            render(&v, &seq),
            vec![P(3), P(1), Bos, P(3), A(10), A(11), Eop, P(1), A(12), A(13), A(14), Eop, Eos]
        );
        assert_eq!(seq.bos_index, 2);
        assert_eq!(seq.phoneme_spans[0], PhonemeSpan { phoneme: 3, start: 4, end: 6 });
    }

    #[test]
    fn silence_keeps_acoustics_only() {
        let v = Vocab::new(&lang());
        let u = utt(&[3, 16, 1], &[2, 1, 2], &[10, 11, 129, 13, 14]);
        let seq = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::Ellav)).unwrap();
        assert_eq!(
            render(&v, &seq),
            vec![P(3), P(1), Bos, P(3), A(10), A(11), Eop, A(129), P(1), A(13), A(14), Eop, Eos]
        );
        let valle = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::ValleOrder)).unwrap();
        assert_eq!(render(&v, &valle), vec![P(3), P(1), Bos, A(10), A(11), A(129), A(13), A(14), Eos]);
    }

    #[test]
    fn ablation_layouts() {
        let v = Vocab::new(&lang());
        let u = utt(&[3, 1], &[1, 1], &[10, 12]);
        let ng = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::EllavNoglobal)).unwrap();
        assert_eq!(render(&v, &ng), vec![Bos, P(3), A(10), Eop, P(1), A(12), Eop, Eos]);
        assert_eq!(ng.bos_index, 0);
        let np = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::EllavNophn)).unwrap();
        assert_eq!(render(&v, &np), vec![P(3), P(1), Bos, A(10), Eop, A(12), Eop, Eos]);
    }

    #[test]
    fn local_advance_example() {
        let v = Vocab::new(&lang());
        let u = utt(&[1, 2], &[2, 3], &[10, 11, 12, 13, 14]);
        let seq = build_hybrid(&v, &u, 1, SeqVariant { kind: VariantKind::EllavNoglobal, adv: 1 }).unwrap();
        assert_eq!(
            render(&v, &seq)[1..],
            [P(1), A(10), Eop, P(2), A(11), A(12), A(13), Eop, A(14), Eos]
        );
        // b (frame 1) still belongs to phoneme 0
        assert_eq!(seq.phoneme_spans[0], PhonemeSpan { phoneme: 1, start: 2, end: 6 });
        assert_eq!(seq.phoneme_spans[1], PhonemeSpan { phoneme: 2, start: 6, end: 10 });
    }

    #[test]
    fn large_advance_clamps_to_own_phoneme() {
        let v = Vocab::new(&lang());
        let u = utt(&[1, 2], &[2, 3], &[10, 11, 12, 13, 14]);
        let seq = build_hybrid(&v, &u, 1, SeqVariant { kind: VariantKind::EllavNoglobal, adv: 9 }).unwrap();
        assert_eq!(
            render(&v, &seq)[1..],
            [P(1), Eop, P(2), A(10), A(11), Eop, A(12), A(13), A(14), Eos]
        );
    }

    #[test]
    fn valle_rejects_advance() {
        assert!(SeqVariant::new(VariantKind::ValleOrder, 2).is_err());
    }

    #[test]
    fn silence_in_global_prefix_is_an_invariant_error() {
        let v = Vocab::new(&lang());
        let err = start_sequence(&v, &[3, 16], 1).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn mask_examples() {
        let v = Vocab::new(&lang());
        let u = utt(&[3, 1], &[2, 3], &[10, 11, 12, 13, 14]);
        let seq = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::Ellav)).unwrap();
        let m = attention_mask(&seq);
        assert!(m[[0, 1]]);
        assert!(!m[[seq.bos_index, seq.bos_index + 1]]);
        assert!(!m[[1, seq.bos_index]]);
        assert!((0..seq.len()).all(|i| m[[i, i]]));

        let gar = loss_mask(&seq, Stage::Gar);
        let on: Vec<usize> = (0..seq.len()).filter(|&t| gar[t]).collect();
        assert_eq!(on, vec![4, 5, 6, 8, 9, 10, 11, 12]);
        let nar = loss_mask(&seq, Stage::Nar);
        assert_eq!(nar.iter().filter(|&&b| b).count(), 5);

        let valle = build_hybrid(&v, &u, 1, SeqVariant::plain(VariantKind::ValleOrder)).unwrap();
        let g = loss_mask(&valle, Stage::Gar);
        for (t, &on) in g.iter().enumerate() {
            let want = matches!(valle.kinds[t], TokenKind::Acoustic | TokenKind::Eos);
            assert_eq!(on, want);
        }
    }

    #[test]
    fn continuation_prompt_cuts_at_boundary() {
        let v = Vocab::new(&lang());
        let l = lang();
        let u = utt(&[3, 1], &[2, 3], &[10, 11, 12, 13, 14]);
        let task = PromptTask::Continuation { prompt_frames: 3 };
        let p = build_prompt(&v, &l, task, &u, &[], SeqVariant::plain(VariantKind::Ellav)).unwrap();
        assert_eq!(render(&v, &p.prefix), vec![P(3), P(1), Bos, P(3), A(10), A(11), Eop]);
        assert_eq!(p.schedule, vec![1]);
        assert_eq!(p.reference_frames, 3);
        assert_eq!(p.prompt_frames, 2);

        let task = PromptTask::Continuation { prompt_frames: 6 };
        let err = build_prompt(&v, &l, task, &u, &[], SeqVariant::plain(VariantKind::Ellav)).unwrap_err();
        assert!(matches!(err, Error::InvalidPrompt(_)));
    }

    #[test]
    fn continuation_prompt_keeps_trailing_silence() {
        let v = Vocab::new(&lang());
        let l = lang();
        let u = utt(&[3, 16, 1], &[2, 1, 2], &[10, 11, 129, 13, 14]);
        let task = PromptTask::Continuation { prompt_frames: 3 };
        let p = build_prompt(&v, &l, task, &u, &[], SeqVariant::plain(VariantKind::Ellav)).unwrap();
        assert_eq!(render(&v, &p.prefix), vec![P(3), P(1), Bos, P(3), A(10), A(11), Eop, A(129)]);
        let p = build_prompt(&v, &l, task, &u, &[], SeqVariant::plain(VariantKind::ValleOrder)).unwrap();
        assert_eq!(render(&v, &p.prefix), vec![P(3), P(1), Bos, A(10), A(11), A(129)]);
    }

    #[test]
    fn cross_speaker_prompt_global_prefix() {
        let v = Vocab::new(&lang());
        let l = lang();
        let u = utt(&[3, 1], &[1, 1], &[10, 12]);
        let p = build_prompt(&v, &l, PromptTask::CrossSpeaker, &u, &[2, 5], SeqVariant::plain(VariantKind::Ellav))
            .unwrap();
        assert_eq!(
            render(&v, &p.prefix),
            vec![P(3), P(1), P(2), P(5), Bos, P(3), A(10), Eop, P(1), A(12), Eop]
        );
        assert_eq!(p.schedule, vec![2, 5]);
        assert_eq!(p.reference_frames, 8);
    }
}
