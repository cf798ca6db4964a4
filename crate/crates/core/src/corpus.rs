//! Synthetic aligned corpus and its oracle decoders.
//!
//! Every utterance is a phoneme sequence with per-phoneme frame durations and
//! an `L`-layer code matrix. Layer-1 codes are drawn from disjoint
//! (phoneme, speaker) cells of the codebook, so transcription and speaker
//! identity can be read back exactly from the codes. Silence emits a single
//! code per speaker. Layers 2..L are a deterministic function of the layer-1
//! code and the speaker.
//!
//! All randomness goes through [`SplitMix64`] streams keyed by
//! `(seed, utterance index, field tag)`; the per-field draw order is documented
//! on [`generate_utterance`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::util::write_atomic;

pub type PhonemeId = u32;
pub type Code = u32;

const TAG_SPEAKER: u64 = 1;
const TAG_LENGTH: u64 = 2;
const TAG_PHONEMES: u64 = 3;
const TAG_WORDS: u64 = 4;
const TAG_SILENCE: u64 = 5;
const TAG_DURATIONS: u64 = 6;
const TAG_CODES: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LanguageConfig {
    pub n_phonemes: u32,
    pub n_speakers: u32,
    pub repeats_per_cell: u32,
    pub codebook_size: u32,
    pub n_layers: u32,
    pub mean_dur: u32,
    pub mean_sil_dur: u32,
    pub max_dur: u32,
    pub utt_len_range: [u32; 2],
    pub sil_prob: f64,
    /// Real phonemes per word; silences are only inserted at word boundaries.
    pub word_len_range: [u32; 2],
    /// Phoneme `p` is drawn with weight `(p + 1)^-zipf_exponent`, so high ids
    /// are rare.
    pub zipf_exponent: f64,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self {
            n_phonemes: 16,
            n_speakers: 4,
            repeats_per_cell: 2,
            codebook_size: 144,
            n_layers: 4,
            mean_dur: 4,
            mean_sil_dur: 8,
            max_dur: 24,
            utt_len_range: [6, 12],
            sil_prob: 0.3,
            word_len_range: [2, 4],
            zipf_exponent: 1.0,
        }
    }
}

impl LanguageConfig {
    pub fn silence_id(&self) -> PhonemeId {
        self.n_phonemes
    }

    /// First code of the silence block; codes at or above it decode as silence.
    pub fn silence_base(&self) -> Code {
        self.n_phonemes * self.n_speakers * self.repeats_per_cell
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_phonemes < 2 {
            return bad("n_phonemes must be at least 2 (adjacent phonemes must differ)");
        }
        if self.n_speakers == 0 || self.repeats_per_cell == 0 || self.n_layers == 0 {
            return bad("n_speakers, repeats_per_cell and n_layers must be positive");
        }
        let needed = u64::from(self.n_phonemes) * u64::from(self.n_speakers)
            * u64::from(self.repeats_per_cell)
            + u64::from(self.n_speakers);
        if u64::from(self.codebook_size) < needed {
            return Err(Error::Config(format!(
                "codebook_size {} < n_phonemes*n_speakers*repeats_per_cell + n_speakers = {needed}",
                self.codebook_size
            )));
        }
        if self.max_dur == 0 || self.mean_dur == 0 || self.mean_sil_dur == 0 {
            return bad("durations must be at least one frame");
        }
        let [lo, hi] = self.utt_len_range;
        if lo == 0 || lo > hi {
            return bad("utt_len_range must satisfy 1 <= min <= max");
        }
        let [wlo, whi] = self.word_len_range;
        if wlo == 0 || wlo > whi {
            return bad("word_len_range must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.sil_prob) {
            return bad("sil_prob must lie in [0, 1]");
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return bad("zipf_exponent must be finite and non-negative");
        }
        Ok(())
    }

    /// Layer-1 code for frame `r` of real phoneme `p` spoken by `speaker`.
    pub fn phoneme_code(&self, p: PhonemeId, speaker: u32, r: u32) -> Code {
        (p * self.n_speakers + speaker) * self.repeats_per_cell + r
    }

    pub fn silence_code(&self, speaker: u32) -> Code {
        self.silence_base() + speaker
    }

    /// Code of 1-based layer `layer >= 2` given the layer-1 code.
    pub fn upper_code(&self, c1: Code, speaker: u32, layer: u32) -> Code {
        let k = u64::from(self.codebook_size);
        let v = u64::from(c1) * (2 * u64::from(layer) + 1) + u64::from(speaker) + u64::from(layer);
        (v % k) as Code
    }

    /// Phoneme sampling weights (Zipf over ids).
    pub fn phoneme_weights(&self) -> Vec<f64> {
        (0..self.n_phonemes)
            .map(|p| f64::from(p + 1).powf(-self.zipf_exponent))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: u32,
    pub phonemes: Vec<PhonemeId>,
    pub durations: Vec<u32>,
    /// `n_layers` rows, each of length `T = sum(durations)`.
    pub codes: Vec<Vec<Code>>,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    pub fn n_layers(&self) -> usize {
        self.codes.len()
    }

    /// Real (non-silence) phonemes in order.
    pub fn real_phonemes(&self, silence_id: PhonemeId) -> Vec<PhonemeId> {
        self.phonemes
            .iter()
            .copied()
            .filter(|&p| p != silence_id)
            .collect()
    }

    /// Frame offsets `[start, end)` of each phoneme.
    pub fn phoneme_frames(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.durations
            .iter()
            .map(|&d| {
                let span = (start, start + d as usize);
                start = span.1;
                span
            })
            .collect()
    }

    /// Codes of one phoneme slice for one 1-based layer.
    pub fn phoneme_codes(&self, phoneme_index: usize, layer: usize) -> &[Code] {
        let (s, e) = self.phoneme_frames()[phoneme_index];
        &self.codes[layer - 1][s..e]
    }

    /// Structural checks that do not need a [`LanguageConfig`].
    pub fn check_shape(&self) -> Result<()> {
        if self.phonemes.len() != self.durations.len() {
            return Err(Error::Validation(format!(
                "{}: {} phonemes but {} durations",
                self.id,
                self.phonemes.len(),
                self.durations.len()
            )));
        }
        if self.durations.contains(&0) {
            return Err(Error::Validation(format!("{}: zero duration", self.id)));
        }
        if self.codes.is_empty() {
            return Err(Error::Validation(format!("{}: no code layers", self.id)));
        }
        let t = self.n_frames();
        for (l, row) in self.codes.iter().enumerate() {
            if row.len() != t {
                return Err(Error::Validation(format!(
                    "{}: layer {} has {} codes but durations sum to {t}",
                    self.id,
                    l + 1,
                    row.len()
                )));
            }
        }
        Ok(())
    }

    /// Full validation against a language.
    pub fn validate(&self, cfg: &LanguageConfig) -> Result<()> {
        self.check_shape()?;
        if self.codes.len() != cfg.n_layers as usize {
            return Err(Error::Validation(format!(
                "{}: {} layers, expected {}",
                self.id,
                self.codes.len(),
                cfg.n_layers
            )));
        }
        if self.speaker >= cfg.n_speakers {
            return Err(Error::Validation(format!("{}: speaker out of range", self.id)));
        }
        if let Some(p) = self.phonemes.iter().find(|&&p| p > cfg.silence_id()) {
            return Err(Error::Validation(format!("{}: phoneme {p} out of range", self.id)));
        }
        if let Some(c) = self.codes.iter().flatten().find(|&&c| c >= cfg.codebook_size) {
            return Err(Error::Validation(format!("{}: code {c} out of range", self.id)));
        }
        Ok(())
    }
}

/// Generates utterance `index` of the corpus keyed by `seed`.
///
/// Draw order, one splitmix64 stream per field tag:
///
/// 1. speaker: `below(n_speakers)`
/// 2. length: `range_inclusive(utt_len_range)` real phonemes
/// 3. phonemes: Zipf-weighted choice with the previous phoneme's weight zeroed
/// 4. words: repeated `range_inclusive(word_len_range)` until all phonemes are
///    covered
/// 5. silence: one Bernoulli(`sil_prob`) draw before the first word, one per
///    word boundary, one after the last word
/// 6. durations: real phonemes `range_inclusive(1, 2*mean_dur-1)`, silences
///    `range_inclusive(1, 2*mean_sil_dur-1)`, both clamped to `max_dur`
/// 7. codes: one `below(repeats_per_cell)` per real-phoneme frame
pub fn generate_utterance(cfg: &LanguageConfig, seed: u64, index: u64, id: String) -> Utterance {
    let idx = index;
    let speaker = SplitMix64::stream(seed, idx, TAG_SPEAKER).below(u64::from(cfg.n_speakers)) as u32;
    let [lo, hi] = cfg.utt_len_range;
    let n_real = SplitMix64::stream(seed, idx, TAG_LENGTH).range_inclusive(u64::from(lo), u64::from(hi))
        as usize;

    let weights = cfg.phoneme_weights();
    let mut ph_rng = SplitMix64::stream(seed, idx, TAG_PHONEMES);
    let real = sample_phonemes(&weights, n_real, &mut ph_rng);

    let mut word_rng = SplitMix64::stream(seed, idx, TAG_WORDS);
    let [wlo, whi] = cfg.word_len_range;
    let mut words = Vec::new();
    let mut covered = 0;
    while covered < n_real {
        let w = (word_rng.range_inclusive(u64::from(wlo), u64::from(whi)) as usize).min(n_real - covered);
        words.push(&real[covered..covered + w]);
        covered += w;
    }

    let mut sil_rng = SplitMix64::stream(seed, idx, TAG_SILENCE);
    let sil = cfg.silence_id();
    let mut phonemes = Vec::with_capacity(n_real + words.len() + 1);
    if sil_rng.bernoulli(cfg.sil_prob) {
        phonemes.push(sil);
    }
    for (w, word) in words.iter().enumerate() {
        if w > 0 && sil_rng.bernoulli(cfg.sil_prob) {
            phonemes.push(sil);
        }
        phonemes.extend_from_slice(word);
    }
    if sil_rng.bernoulli(cfg.sil_prob) {
        phonemes.push(sil);
    }

    let mut dur_rng = SplitMix64::stream(seed, idx, TAG_DURATIONS);
    let durations: Vec<u32> = phonemes
        .iter()
        .map(|&p| {
            let mean = if p == sil { cfg.mean_sil_dur } else { cfg.mean_dur };
            let d = dur_rng.range_inclusive(1, u64::from(2 * mean - 1)) as u32;
            d.min(cfg.max_dur)
        })
        .collect();

    let mut code_rng = SplitMix64::stream(seed, idx, TAG_CODES);
    let t: usize = durations.iter().map(|&d| d as usize).sum();
    let mut layer1 = Vec::with_capacity(t);
    for (&p, &d) in phonemes.iter().zip(&durations) {
        for _ in 0..d {
            let c = if p == sil {
                cfg.silence_code(speaker)
            } else {
                let r = code_rng.below(u64::from(cfg.repeats_per_cell)) as u32;
                cfg.phoneme_code(p, speaker, r)
            };
            layer1.push(c);
        }
    }
    let codes = complete_layers(cfg, &layer1, speaker);

    Utterance {
        id,
        speaker,
        phonemes,
        durations,
        codes,
    }
}

/// Builds all `n_layers` rows from a layer-1 row.
pub fn complete_layers(cfg: &LanguageConfig, layer1: &[Code], speaker: u32) -> Vec<Vec<Code>> {
    let mut codes = Vec::with_capacity(cfg.n_layers as usize);
    codes.push(layer1.to_vec());
    for j in 2..=cfg.n_layers {
        codes.push(layer1.iter().map(|&c| cfg.upper_code(c, speaker, j)).collect());
    }
    codes
}

/// Draws `n` phonemes by weight, never repeating the previous one.
pub(crate) fn sample_phonemes(weights: &[f64], n: usize, rng: &mut SplitMix64) -> Vec<PhonemeId> {
    let mut out: Vec<PhonemeId> = Vec::with_capacity(n);
    let mut w = weights.to_vec();
    for _ in 0..n {
        if let Some(&prev) = out.last() {
            w.copy_from_slice(weights);
            w[prev as usize] = 0.0;
        }
        out.push(rng.weighted(&w) as PhonemeId);
    }
    out
}

pub fn utterance_id(seed: u64, index: u64) -> String {
    format!("s{seed}-{index:06}")
}

/// Deterministic corpus of `n_utts` utterances with indices `0..n_utts`.
pub fn gen_corpus(cfg: &LanguageConfig, n_utts: usize, seed: u64) -> Result<Vec<Utterance>> {
    gen_corpus_range(cfg, 0, n_utts, seed)
}

/// Utterances with indices `start..start + n_utts`; disjoint ranges give
/// disjoint ids, which is how train and test splits are carved.
pub fn gen_corpus_range(cfg: &LanguageConfig, start: u64, n_utts: usize, seed: u64) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    if n_utts == 0 {
        return Err(Error::Config("n_utts must be at least 1".into()));
    }
    Ok((start..start + n_utts as u64)
        .map(|i| generate_utterance(cfg, seed, i, utterance_id(seed, i)))
        .collect())
}

/// What a single layer-1 code decodes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodedFrame {
    Phoneme { phoneme: PhonemeId, speaker: u32 },
    Silence { speaker: Option<u32> },
}

pub fn decode_code(cfg: &LanguageConfig, c: Code) -> DecodedFrame {
    let base = cfg.silence_base();
    if c >= base {
        let s = c - base;
        DecodedFrame::Silence {
            speaker: (s < cfg.n_speakers).then_some(s),
        }
    } else {
        let cell = c / cfg.repeats_per_cell;
        DecodedFrame::Phoneme {
            phoneme: cell / cfg.n_speakers,
            speaker: cell % cfg.n_speakers,
        }
    }
}

/// Per-frame inverse lookup, run collapsing, silence removal.
pub fn oracle_transcribe(cfg: &LanguageConfig, codes_layer1: &[Code]) -> Vec<PhonemeId> {
    let mut out = Vec::new();
    let mut prev: Option<PhonemeId> = None;
    for &c in codes_layer1 {
        let cur = match decode_code(cfg, c) {
            DecodedFrame::Phoneme { phoneme, .. } => Some(phoneme),
            DecodedFrame::Silence { .. } => None,
        };
        if let Some(p) = cur {
            if prev != Some(p) {
                out.push(p);
            }
        }
        prev = cur;
    }
    out
}

/// Fraction of frames whose decoded speaker is `claimed_speaker`.
pub fn oracle_speaker_score(cfg: &LanguageConfig, codes_layer1: &[Code], claimed_speaker: u32) -> Result<f64> {
    if codes_layer1.is_empty() {
        return Err(Error::UndefinedScore("no frames to score".into()));
    }
    let hits = codes_layer1
        .iter()
        .filter(|&&c| {
            let s = match decode_code(cfg, c) {
                DecodedFrame::Phoneme { speaker, .. } => Some(speaker),
                DecodedFrame::Silence { speaker } => speaker,
            };
            s == Some(claimed_speaker)
        })
        .count();
    Ok(hits as f64 / codes_layer1.len() as f64)
}

/// Serialises to the line-delimited JSON corpus format.
pub fn corpus_to_string(corpus: &[Utterance]) -> String {
    let mut s = String::new();
    for u in corpus {
        // Utterance serialises to a single compact object in field order
        let line = serde_json::to_string(u).expect("utterance serialises");
        let _ = writeln!(s, "{line}");
    }
    s
}

pub fn save_corpus(path: &Path, corpus: &[Utterance]) -> Result<()> {
    write_atomic(path, corpus_to_string(corpus).as_bytes())
}

pub fn parse_corpus(path: &Path, text: &str) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let u: Utterance = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        u.check_shape().map_err(|e| err(e.to_string()))?;
        out.push(u);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(path, &text)
}
