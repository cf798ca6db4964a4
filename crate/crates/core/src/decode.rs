//! GAR inference: nucleus sampling, EOP-triggered phoneme injection,
//! per-phoneme truncation, INF detection and NAR completion.
//!
//! Interleaved variants alternate between a phoneme phase, where EOS is
//! masked out of the head, and a final EOS phase after the last EOP, where EOP
//! is masked out. Frames sampled in the EOS phase are attributed to the last
//! phoneme and share its frame budget, which bounds the number of appended
//! tokens by `n' * (max_phoneme_frames + 2) + 1` for any model. VALLE order
//! has no phoneme boundaries: it stops on EOS or at `inf_factor` times the
//! reference length, which raises the INF flag.

use serde::{Deserialize, Serialize};

use crate::corpus::{Code, PhonemeId, Utterance};
use crate::error::{Error, Result};
use crate::models::{GarClass, GarHead, GarLm, GarSession, NarInput, NarModel};
use crate::rng::{hash_str, SplitMix64};
use crate::seqbuild::{HybridSequence, PhonemeSpan, Prompt, SeqVariant, TokenId, TokenKind, VariantKind, Vocab};
use crate::tensornn::Scalar;

const DECODE_TAG: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Nucleus mass; 0 selects greedy decoding.
    pub top_p: f64,
    pub max_phoneme_frames: u32,
    pub inf_factor: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            top_p: 1.0,
            max_phoneme_frames: 30,
            inf_factor: 2.0,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(Error::Config(format!("top_p {} outside [0, 1]", self.top_p)));
        }
        if self.max_phoneme_frames == 0 {
            return Err(Error::Config("max_phoneme_frames must be at least 1".into()));
        }
        if !(self.inf_factor > 0.0 && self.inf_factor.is_finite()) {
            return Err(Error::Config(format!("inf_factor {} must be positive", self.inf_factor)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    /// Per-utterance sampling stream.
    pub fn rng_for(&self, key: &str) -> SplitMix64 {
        SplitMix64::stream(self.seed, hash_str(key), DECODE_TAG)
    }
}

/// Lowest index among the maxima.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in dist.iter().enumerate() {
        if v > dist[best] {
            best = i;
        }
    }
    best
}

/// Indices kept by the nucleus rule, most probable first (ties by id).
pub fn nucleus_support(dist: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    if top_p >= 1.0 {
        return order;
    }
    if top_p <= 0.0 {
        order.truncate(1);
        return order;
    }
    let mut cum = 0.0;
    let mut keep = 0;
    for &i in &order {
        cum += dist[i];
        keep += 1;
        if cum >= top_p {
            break;
        }
    }
    order.truncate(keep);
    order
}

fn check_dist(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::numeric("empty distribution"));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::numeric("non-finite or negative probability"));
    }
    if dist.iter().sum::<f64>() <= 0.0 {
        return Err(Error::numeric("distribution has no mass"));
    }
    Ok(())
}

/// Draws from the temperature-scaled distribution truncated to its nucleus.
pub fn nucleus_sample(dist: &[f64], top_p: f64, temperature: f64, rng: &mut SplitMix64) -> Result<usize> {
    check_dist(dist)?;
    if top_p <= 0.0 {
        return Ok(argmax(dist));
    }
    let scaled: Vec<f64>;
    let dist = if temperature == 1.0 {
        dist
    } else {
        let inv = 1.0 / temperature;
        let raw: Vec<f64> = dist.iter().map(|&p| p.powf(inv)).collect();
        let z: f64 = raw.iter().sum();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::numeric("temperature-scaled distribution"));
        }
        scaled = raw.into_iter().map(|p| p / z).collect();
        &scaled
    };
    let z: f64 = dist.iter().sum();
    let normalised: Vec<f64> = dist.iter().map(|p| p / z).collect();
    let support = nucleus_support(&normalised, top_p);
    let mass: f64 = support.iter().map(|&i| normalised[i]).sum();
    let mut u = rng.unit() * mass;
    for &i in &support {
        u -= normalised[i];
        if u < 0.0 {
            return Ok(i);
        }
    }
    // rounding left a sliver: fall back to the last kept entry with mass
    Ok(*support
        .iter()
        .rev()
        .find(|&&i| normalised[i] > 0.0)
        .expect("support carries mass"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Generating frames of schedule phoneme `current`.
    Phoneme,
    /// All phonemes closed; waiting for EOS.
    Eos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeState {
    pub variant: SeqVariant,
    /// Prompt prefix followed by every appended token.
    pub tokens: HybridSequence,
    pub prefix_len: usize,
    pub schedule: Vec<PhonemeId>,
    /// Index of the phoneme currently being generated, or the last one in
    /// the EOS phase.
    pub current: Option<usize>,
    pub phase: Phase,
    pub frames_in_current: u32,
    pub cuts: u32,
    pub finished: bool,
    pub inf: bool,
    /// Tokens appended after the prompt, including injected ones.
    pub steps: usize,
    pub layer1: Vec<Code>,
    /// `(start, end)` of each schedule phoneme in `layer1`.
    pub spans: Vec<(usize, usize)>,
    pub step_budget: Option<usize>,
}

impl DecodeState {
    pub fn new(prompt: &Prompt, variant: SeqVariant, cfg: &DecodeConfig) -> Self {
        let step_budget = (!variant.kind.interleaved())
            .then(|| ((cfg.inf_factor * prompt.reference_frames as f64).ceil() as usize).max(1));
        Self {
            variant,
            tokens: prompt.prefix.clone(),
            prefix_len: prompt.prefix.len(),
            schedule: prompt.schedule.clone(),
            current: None,
            phase: Phase::Phoneme,
            frames_in_current: 0,
            cuts: 0,
            finished: false,
            inf: false,
            steps: 0,
            layer1: Vec::new(),
            spans: Vec::new(),
            step_budget,
        }
    }

    fn append(&mut self, token: TokenId, kind: TokenKind, session: &mut dyn GarSession) -> Result<()> {
        let owner = self.current.map(|c| c as u32);
        self.tokens.push(token, kind, owner);
        self.steps += 1;
        session.push(token)
    }

    /// Moves to the next schedule phoneme, injecting its token when the
    /// variant has local phonemes, or enters the EOS phase.
    fn advance(&mut self, vocab: &Vocab, session: &mut dyn GarSession) -> Result<()> {
        let next = self.current.map_or(0, |c| c + 1);
        if next < self.schedule.len() {
            self.current = Some(next);
            self.frames_in_current = 0;
            self.spans.push((self.layer1.len(), self.layer1.len()));
            if self.variant.kind.has_local_phonemes() {
                self.append(vocab.phoneme(self.schedule[next]), TokenKind::LocalPhoneme, session)?;
            }
        } else {
            self.phase = Phase::Eos;
        }
        Ok(())
    }

    fn finish(&mut self, vocab: &Vocab, session: &mut dyn GarSession) -> Result<()> {
        self.append(vocab.eos(), TokenKind::Eos, session)?;
        self.finished = true;
        Ok(())
    }

    fn push_frame(&mut self, vocab: &Vocab, code: Code, session: &mut dyn GarSession) -> Result<()> {
        self.append(vocab.acoustic(1, code), TokenKind::Acoustic, session)?;
        self.layer1.push(code);
        self.frames_in_current += 1;
        if let Some(span) = self.spans.last_mut() {
            span.1 = self.layer1.len();
        }
        Ok(())
    }

    /// Zeroes classes the current phase forbids.
    fn restrict(&self, head: GarHead, dist: &mut [f64]) {
        if !self.variant.kind.interleaved() {
            dist[head.eop()] = 0.0;
        } else if self.phase == Phase::Phoneme {
            dist[head.eos()] = 0.0;
        } else {
            dist[head.eop()] = 0.0;
        }
    }
}

/// Starts decoding: injects the first scheduled phoneme, or for an empty
/// schedule appends EOS at once.
pub fn start_decode(state: &mut DecodeState, vocab: &Vocab, session: &mut dyn GarSession) -> Result<()> {
    if state.variant.kind.interleaved() {
        if state.schedule.is_empty() {
            state.phase = Phase::Eos;
            return state.finish(vocab, session);
        }
        state.advance(vocab, session)?;
    }
    Ok(())
}

/// Samples one model token and applies it.
pub fn decode_step(
    state: &mut DecodeState,
    vocab: &Vocab,
    head: GarHead,
    session: &mut dyn GarSession,
    cfg: &DecodeConfig,
    rng: &mut SplitMix64,
) -> Result<()> {
    if state.finished {
        return Err(Error::Invariant("decode_step on a finished state".into()));
    }
    let mut dist = session.distribution()?;
    if dist.len() != head.size() {
        return Err(Error::Invariant(format!(
            "model returned {} classes, head has {}",
            dist.len(),
            head.size()
        )));
    }
    state.restrict(head, &mut dist);
    let class = if dist.iter().sum::<f64>() > 0.0 {
        head.class(nucleus_sample(&dist, cfg.top_p, cfg.temperature, rng)?)
    } else if state.variant.kind.interleaved() && state.phase == Phase::Phoneme {
        // all mass on a forbidden class: take the phase transition
        GarClass::Eop
    } else {
        GarClass::Eos
    };

    if !state.variant.kind.interleaved() {
        match class {
            GarClass::Acoustic(c) => {
                state.push_frame(vocab, c, session)?;
                if state.step_budget.is_some_and(|b| state.layer1.len() >= b) {
                    state.inf = true;
                    state.finished = true;
                }
            }
            _ => state.finish(vocab, session)?,
        }
        return Ok(());
    }

    match (state.phase, class) {
        (_, GarClass::Acoustic(c)) => {
            if state.frames_in_current >= cfg.max_phoneme_frames {
                state.cuts += 1;
                match state.phase {
                    Phase::Phoneme => {
                        state.append(vocab.eop(), TokenKind::Eop, session)?;
                        state.advance(vocab, session)?;
                    }
                    Phase::Eos => state.finish(vocab, session)?,
                }
            } else {
                state.push_frame(vocab, c, session)?;
            }
        }
        (Phase::Phoneme, _) => {
            state.append(vocab.eop(), TokenKind::Eop, session)?;
            state.advance(vocab, session)?;
        }
        (Phase::Eos, _) => state.finish(vocab, session)?,
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub id: String,
    pub speaker: u32,
    pub schedule: Vec<PhonemeId>,
    /// Generated layer-1 codes.
    pub layer1: Vec<Code>,
    /// Per-schedule-phoneme spans over `layer1`; empty for VALLE order.
    pub spans: Vec<PhonemeSpan>,
    /// Generated codes for every layer (layer-major); only layer 1 when no
    /// NAR model was given.
    pub codes: Vec<Vec<Code>>,
    pub cuts: u32,
    pub inf: bool,
    pub steps: usize,
    pub sequence: HybridSequence,
}

impl GenerationResult {
    /// Corpus-format record plus `spans`, `cuts` and `inf`.
    pub fn dump_line(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            id: &'a str,
            speaker: u32,
            phonemes: &'a [PhonemeId],
            durations: Vec<u32>,
            codes: &'a [Vec<Code>],
            spans: Vec<(usize, usize)>,
            cuts: u32,
            inf: bool,
        }
        let rec = Record {
            id: &self.id,
            speaker: self.speaker,
            phonemes: &self.schedule,
            durations: self.spans.iter().map(|s| (s.end - s.start) as u32).collect(),
            codes: &self.codes,
            spans: self.spans.iter().map(|s| (s.start, s.end)).collect(),
            cuts: self.cuts,
            inf: self.inf,
        };
        serde_json::to_string(&rec).expect("record serialises")
    }
}

/// Runs the GAR state machine from `prompt` until it finishes, then fills
/// layers `2..=L` with the NAR model. `prompt_utt` supplies the ground-truth
/// codes of the prompt frames; `key` seeds the sampling stream.
#[allow(clippy::too_many_arguments)]
pub fn synthesize<F: Scalar>(
    gar: &dyn GarLm,
    nar: Option<&NarModel<F>>,
    vocab: &Vocab,
    variant: SeqVariant,
    prompt: &Prompt,
    prompt_utt: &Utterance,
    cfg: &DecodeConfig,
    key: &str,
) -> Result<GenerationResult> {
    cfg.validate()?;
    variant.validate()?;
    let head = gar.head();
    let mut rng = cfg.rng_for(key);
    let mut state = DecodeState::new(prompt, variant, cfg);
    let mut session = gar.session(&prompt.prefix)?;
    let outcome = (|| {
        start_decode(&mut state, vocab, session.as_mut())?;
        while !state.finished {
            decode_step(&mut state, vocab, head, session.as_mut(), cfg, &mut rng)?;
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => {}
        Err(Error::Length { .. }) => {
            state.inf = true;
            state.finished = true;
        }
        Err(e) => return Err(e),
    }

    let spans = if variant.kind.interleaved() {
        state
            .spans
            .iter()
            .enumerate()
            .map(|(i, &(start, end))| PhonemeSpan {
                phoneme: state.schedule[i],
                start,
                end,
            })
            .collect()
    } else {
        Vec::new()
    };
    let codes = match nar {
        Some(nar) => complete_layers(nar, &state.tokens, vocab, prompt_utt, &state.layer1)?,
        None => vec![state.layer1.clone()],
    };
    Ok(GenerationResult {
        id: key.to_string(),
        speaker: prompt.speaker,
        schedule: state.schedule,
        layer1: state.layer1,
        spans,
        codes,
        cuts: state.cuts,
        inf: state.inf,
        steps: state.steps,
        sequence: state.tokens,
    })
}

/// Greedy NAR completion over prompt and generated frames. Prompt frames
/// keep their ground-truth codes at every layer.
fn complete_layers<F: Scalar>(
    nar: &NarModel<F>,
    seq: &HybridSequence,
    vocab: &Vocab,
    prompt_utt: &Utterance,
    generated: &[Code],
) -> Result<Vec<Vec<Code>>> {
    let all1 = seq.extract_acoustic(vocab);
    let m = all1.len() - generated.len();
    let mut input = NarInput {
        seq: seq.clone(),
        codes: vec![all1],
    };
    for j in 2..=vocab.n_layers as usize {
        let mut next = if generated.is_empty() {
            vec![0; m]
        } else {
            nar.predict_layer(&input, j)?
        };
        next[..m].copy_from_slice(&prompt_utt.codes[j - 1][..m]);
        input.codes.push(next);
    }
    Ok(input.codes.into_iter().map(|row| row[m..].to_vec()).collect())
}

/// GAR stand-in driven by a closure over the full context.
pub struct ScriptedLm<F> {
    pub head: GarHead,
    pub script: F,
}

impl<F> ScriptedLm<F>
where
    F: Fn(&[TokenId]) -> Vec<f64>,
{
    pub fn new(codebook_size: u32, script: F) -> Self {
        Self {
            head: GarHead { codebook_size },
            script,
        }
    }
}

struct ScriptedSession<'a, F> {
    script: &'a F,
    context: Vec<TokenId>,
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> GarSession for ScriptedSession<'_, F> {
    fn distribution(&mut self) -> Result<Vec<f64>> {
        Ok((self.script)(&self.context))
    }

    fn push(&mut self, token: TokenId) -> Result<()> {
        self.context.push(token);
        Ok(())
    }
}

impl<F: Fn(&[TokenId]) -> Vec<f64>> GarLm for ScriptedLm<F> {
    fn head(&self) -> GarHead {
        self.head
    }

    fn session<'a>(&'a self, prefix: &HybridSequence) -> Result<Box<dyn GarSession + 'a>> {
        Ok(Box::new(ScriptedSession {
            script: &self.script,
            context: prefix.tokens.clone(),
        }))
    }
}

/// Upper bound on appended tokens for an interleaved variant.
pub fn termination_bound(n_phonemes: usize, max_phoneme_frames: u32) -> usize {
    n_phonemes * (max_phoneme_frames as usize + 2) + 1
}

/// Whether `kind` decodes with phoneme injection and truncation.
pub fn is_self_aligned(kind: VariantKind) -> bool {
    kind.interleaved()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_corpus, LanguageConfig};
    use crate::seqbuild::{build_prompt, PromptTask};

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn nucleus_support_examples() {
        let d = [0.5, 0.3, 0.2];
        assert_eq!(nucleus_support(&d, 0.7), vec![0, 1]);
        assert_eq!(nucleus_support(&d, 1.0), vec![0, 1, 2]);
        assert_eq!(nucleus_support(&d, 0.0), vec![0]);
        let mut rng = SplitMix64::new(1);
        for _ in 0..100 {
            assert_eq!(nucleus_sample(&d, 0.0, 1.0, &mut rng).unwrap(), 0);
        }
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(nucleus_support(&[0.2, 0.4, 0.4], 0.3), vec![1]);
    }

    #[test]
    fn nucleus_rejects_bad_input() {
        let mut rng = SplitMix64::new(1);
        assert!(nucleus_sample(&[f64::NAN, 0.5], 1.0, 1.0, &mut rng).unwrap_err().is_numeric());
        assert!(nucleus_sample(&[0.0, 0.0], 1.0, 1.0, &mut rng).is_err());
        assert!(nucleus_sample(&[], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn nucleus_support_is_monotone_in_p() {
        let d = [0.05, 0.4, 0.1, 0.25, 0.2];
        let ps = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
        for w in ps.windows(2) {
            let a = nucleus_support(&d, w[0]);
            let b = nucleus_support(&d, w[1]);
            assert!(a.iter().all(|i| b.contains(i)));
        }
    }

    fn setup() -> (LanguageConfig, Vocab, Utterance) {
        let lang = LanguageConfig::default();
        let v = Vocab::new(&lang);
        let u = gen_corpus(&lang, 1, 11).unwrap().remove(0);
        (lang, v, u)
    }

    #[test]
    fn injects_next_phoneme_after_eop() {
        let (lang, v, u) = setup();
        let variant = SeqVariant::plain(VariantKind::Ellav);
        let prompt = build_prompt(&v, &lang, PromptTask::CrossSpeaker, &u, &[3, 1], variant).unwrap();
        let k = lang.codebook_size as usize;
        let code = lang.phoneme_code(3, 0, 0) as usize;
        // two frames then EOP, repeatedly
        let lm = ScriptedLm::new(lang.codebook_size, move |ctx: &[TokenId]| {
            let trailing = ctx.iter().rev().take_while(|&&t| v.acoustic_code(t).is_some()).count();
            if ctx.last() == Some(&v.eop()) {
                one_hot(k + 2, k + 1)
            } else if trailing >= 2 {
                let mut d = one_hot(k + 2, k);
                d[k + 1] = 0.5;
                d
            } else {
                one_hot(k + 2, code)
            }
        });
        let cfg = DecodeConfig::default();
        let r = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &cfg, "x").unwrap();
        let gen = &r.sequence.tokens[prompt.prefix.len()..];
        assert_eq!(gen[0], v.phoneme(3));
        assert_eq!(gen[3], v.eop());
        assert_eq!(gen[4], v.phoneme(1));
        assert_eq!(*gen.last().unwrap(), v.eos());
        assert_eq!(r.spans.len(), 2);
        assert_eq!((r.spans[1].start, r.spans[1].end), (2, 4));
        assert_eq!(r.cuts, 0);
        assert!(!r.inf);
    }

    #[test]
    fn over_budget_frame_forces_eop_and_counts_a_cut() {
        let (lang, v, u) = setup();
        let variant = SeqVariant::plain(VariantKind::Ellav);
        let prompt = build_prompt(&v, &lang, PromptTask::CrossSpeaker, &u, &[2], variant).unwrap();
        let k = lang.codebook_size as usize;
        let lm = ScriptedLm::new(lang.codebook_size, move |_: &[TokenId]| one_hot(k + 2, 5));
        let cfg = DecodeConfig {
            max_phoneme_frames: 4,
            ..DecodeConfig::default()
        };
        let r = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &cfg, "x").unwrap();
        // P, 4 frames, forced EOP, forced EOS (shared budget exhausted)
        assert_eq!(r.steps, 1 + 4 + 1 + 1);
        assert_eq!(r.cuts, 2);
        assert_eq!(r.layer1.len(), 4);
        assert!(r.steps <= termination_bound(1, 4));
    }

    #[test]
    fn empty_schedule_finishes_immediately() {
        let (lang, v, u) = setup();
        let variant = SeqVariant::plain(VariantKind::Ellav);
        let prompt = build_prompt(&v, &lang, PromptTask::CrossSpeaker, &u, &[], variant).unwrap();
        let lm = ScriptedLm::new(lang.codebook_size, |_: &[TokenId]| unreachable!());
        let r = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &DecodeConfig::default(), "x").unwrap();
        assert_eq!(r.steps, 1);
        assert!(r.layer1.is_empty());
    }

    #[test]
    fn valle_with_silent_model_hits_inf_at_twice_reference() {
        let (lang, v, u) = setup();
        let variant = SeqVariant::plain(VariantKind::ValleOrder);
        let prompt = build_prompt(&v, &lang, PromptTask::CrossSpeaker, &u, &[1, 2, 3], variant).unwrap();
        let k = lang.codebook_size as usize;
        let sil = lang.silence_code(u.speaker) as usize;
        let lm = ScriptedLm::new(lang.codebook_size, move |_: &[TokenId]| one_hot(k + 2, sil));
        let r = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &DecodeConfig::default(), "x").unwrap();
        assert!(r.inf);
        assert_eq!(r.layer1.len(), 2 * prompt.reference_frames);
        assert!(r.spans.is_empty());
    }

    #[test]
    fn decoding_is_deterministic_per_key() {
        let (lang, v, u) = setup();
        let variant = SeqVariant::plain(VariantKind::Ellav);
        let prompt = build_prompt(&v, &lang, PromptTask::CrossSpeaker, &u, &[1, 4, 2, 7], variant).unwrap();
        let k = lang.codebook_size as usize;
        let lm = ScriptedLm::new(lang.codebook_size, move |_: &[TokenId]| vec![1.0 / (k + 2) as f64; k + 2]);
        let cfg = DecodeConfig::default();
        let a = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &cfg, "a").unwrap();
        let b = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &cfg, "a").unwrap();
        let c = synthesize::<f32>(&lm, None, &v, variant, &prompt, &u, &cfg, "b").unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sequence, c.sequence);
        // spans partition the generated frames
        let mut at = 0;
        for s in &a.spans {
            assert_eq!(s.start, at);
            at = s.end;
        }
        assert_eq!(at, a.layer1.len());
    }
}
