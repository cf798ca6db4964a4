//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Optional arguments select criteria by number, e.g.
//! `cargo test --test acceptance -- 1 4 9`; unselected ones report SKIP.

use std::collections::BTreeMap;
use std::time::Instant;

use ellav::corpus::{gen_corpus, gen_corpus_range, oracle_transcribe, LanguageConfig, Utterance};
use ellav::decode::{nucleus_sample, synthesize, DecodeConfig, ScriptedLm};
use ellav::eval::{continuation_cases, results_csv, sweep_top_p, MetricsReport, SeededGar, TestCase};
use ellav::models::{nar_layer_accuracy, train_gar, train_nar, GarModel, TrainConfig};
use ellav::rng::SplitMix64;
use ellav::seqbuild::{
    attention_mask, build_hybrid, build_prompt, loss_mask, HybridSequence, PromptTask, SeqVariant, Stage,
    TokenId, TokenKind, VariantKind, Vocab,
};
use ellav::tensornn::{transformer_grad_check, write_checkpoint, ModelConfig};

// structural criteria
const N_STRUCT_UTTS: usize = 1000;
const STRUCT_SEED: u64 = 2024;
const SEQ_RUNTIME_LIMIT_S: f64 = 10.0;
const GRAD_TOL: f64 = 1e-4;
const GRAD_RUNTIME_LIMIT_S: f64 = 60.0;
const SAMPLER_DRAWS: usize = 100_000;
const SAMPLER_SIGMAS: f64 = 3.0;
const N_ARGMAX_DISTS: usize = 100;
const N_SCHEDULES: usize = 100;

// trained-model criteria
const TRAIN_UTTS: usize = 4000;
const TEST_UTTS: usize = 100;
const DATA_SEED: u64 = 7;
const TEST_START: u64 = 1_000_000;
const PROMPT_FRAMES: usize = 12;
const GAR_STEPS: usize = 1500;
const GAR_WARMUP: u64 = 300;
const MODEL_SEEDS: [u64; 3] = [1, 2, 3];
const NAR_STEPS: usize = 600;
const NAR_ACC_MIN: f64 = 0.95;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn lang() -> LanguageConfig {
    LanguageConfig::default()
}

// ---------------------------------------------------------------------------
// 1. sequence exactness

/// Expected token count from the utterance alone.
fn oracle_len(u: &Utterance, kind: VariantKind, silence: u32) -> usize {
    let n = u.phonemes.iter().filter(|&&p| p != silence).count();
    let t: usize = u.durations.iter().map(|&d| d as usize).sum();
    let global = match kind {
        VariantKind::EllavNoglobal => 0,
        _ => n,
    };
    let local = match kind {
        VariantKind::Ellav | VariantKind::EllavNoglobal => n,
        _ => 0,
    };
    let eop = match kind {
        VariantKind::ValleOrder => 0,
        _ => n,
    };
    global + 1 + t + local + eop + 1
}

/// Acoustic tokens before each non-acoustic token, in order.
fn acoustic_before(seq: &HybridSequence) -> Vec<usize> {
    let mut count = 0;
    let mut out = Vec::new();
    for &k in &seq.kinds {
        if k == TokenKind::Acoustic {
            count += 1;
        } else {
            out.push(count);
        }
    }
    out
}

/// Expected backward shift of every non-acoustic token under local advance:
/// each marker run after BOS moves by min(adv, length of the same-owner
/// acoustic block directly before it).
fn oracle_shifts(seq: &HybridSequence, adv: usize) -> Vec<usize> {
    let is_marker = |k: TokenKind| matches!(k, TokenKind::Eop | TokenKind::LocalPhoneme);
    let mut shifts = Vec::new();
    let mut t = 0;
    while t < seq.len() {
        let k = seq.kinds[t];
        if k == TokenKind::Acoustic {
            t += 1;
            continue;
        }
        if t <= seq.bos_index || !is_marker(k) {
            shifts.push(0);
            t += 1;
            continue;
        }
        let mut block = 0;
        let mut u = t;
        while u > 0 && seq.kinds[u - 1] == TokenKind::Acoustic && seq.owners[u - 1] == seq.owners[t - 1] {
            block += 1;
            u -= 1;
        }
        while t < seq.len() && is_marker(seq.kinds[t]) {
            shifts.push(adv.min(block));
            t += 1;
        }
    }
    shifts
}

fn sorted(v: &[TokenId]) -> Vec<TokenId> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

fn check_sequences(corpus: &[Utterance], lang: &LanguageConfig) -> Result<usize, String> {
    let vocab = Vocab::new(lang);
    let silence = lang.silence_id();
    let silence_token = vocab.phoneme(silence);
    let mut checked = 0;
    for u in corpus {
        for kind in VariantKind::ALL {
            let plain = build_hybrid(&vocab, u, 1, SeqVariant::plain(kind)).map_err(|e| e.to_string())?;
            if plain.len() != oracle_len(u, kind, silence) {
                return Err(format!("{} {kind}: length {} != {}", u.id, plain.len(), oracle_len(u, kind, silence)));
            }
            if plain.tokens.contains(&silence_token) {
                return Err(format!("{} {kind}: silence token present", u.id));
            }
            for layer in 1..=u.n_layers() {
                let seq = build_hybrid(&vocab, u, layer, SeqVariant::plain(kind)).map_err(|e| e.to_string())?;
                let mut back = Vec::new();
                for (&tok, &k) in seq.tokens.iter().zip(&seq.kinds) {
                    if k == TokenKind::Acoustic {
                        match vocab.acoustic_code(tok) {
                            Some((l, c)) if l == layer => back.push(c),
                            other => return Err(format!("{} {kind}: bad acoustic token {tok} ({other:?})", u.id)),
                        }
                    }
                }
                if back != u.codes[layer - 1] {
                    return Err(format!("{} {kind} layer {layer}: round trip differs", u.id));
                }
            }
            checked += 1;
            if !kind.interleaved() {
                continue;
            }
            for adv in 1..=3u32 {
                let moved = build_hybrid(&vocab, u, 1, SeqVariant { kind, adv }).map_err(|e| e.to_string())?;
                let ok = sorted(&moved.tokens) == sorted(&plain.tokens)
                    && moved.extract_acoustic(&vocab) == u.codes[0]
                    && non_acoustic(&moved) == non_acoustic(&plain)
                    && moved.tokens.last() == Some(&vocab.eos())
                    && moved.tokens[..=moved.bos_index] == plain.tokens[..=plain.bos_index];
                if !ok {
                    return Err(format!("{} {kind} adv {adv}: not an order-preserving permutation", u.id));
                }
                let got: Vec<usize> = acoustic_before(&plain)
                    .iter()
                    .zip(acoustic_before(&moved))
                    .map(|(a, b)| a - b)
                    .collect();
                if got != oracle_shifts(&plain, adv as usize) {
                    return Err(format!("{} {kind} adv {adv}: marker shifts {got:?}", u.id));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

fn non_acoustic(seq: &HybridSequence) -> Vec<TokenId> {
    seq.tokens
        .iter()
        .zip(&seq.kinds)
        .filter(|(_, &k)| k != TokenKind::Acoustic)
        .map(|(&t, _)| t)
        .collect()
}

fn criterion_1() -> Verdict {
    let lang = lang();
    let start = Instant::now();
    let corpus = gen_corpus(&lang, N_STRUCT_UTTS, STRUCT_SEED).expect("corpus");
    let result = check_sequences(&corpus, &lang);
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(n) => verdict(
            secs < SEQ_RUNTIME_LIMIT_S,
            format!("{n} sequences, 0 failures, {secs:.2}s (limit {SEQ_RUNTIME_LIMIT_S}s)"),
        ),
        Err(e) => verdict(false, e),
    }
}

// ---------------------------------------------------------------------------
// 2. mask exactness

fn criterion_2() -> Verdict {
    let lang = lang();
    let vocab = Vocab::new(&lang);
    let silence = lang.silence_id();
    let corpus = gen_corpus(&lang, N_STRUCT_UTTS, STRUCT_SEED + 1).expect("corpus");
    let mut failures = 0;
    for (i, u) in corpus.iter().enumerate() {
        let kind = VariantKind::ALL[i % 4];
        let adv = if kind.interleaved() { (i / 4 % 3) as u32 } else { 0 };
        let seq = build_hybrid(&vocab, u, 1, SeqVariant { kind, adv }).expect("sequence");
        let bos = seq.tokens.iter().position(|&t| t == vocab.bos()).expect("bos");
        let mask = attention_mask(&seq);
        let mut ok = mask.dim() == (seq.len(), seq.len());
        for r in 0..seq.len() {
            for c in 0..seq.len() {
                let allow = if r < bos && c < bos { true } else { c <= r };
                ok &= mask[[r, c]] == allow;
            }
        }
        let n = u.phonemes.iter().filter(|&&p| p != silence).count();
        let frames: usize = u.durations.iter().map(|&d| d as usize).sum();
        let eops = if kind.interleaved() { n } else { 0 };
        let gar = loss_mask(&seq, Stage::Gar);
        let nar = loss_mask(&seq, Stage::Nar);
        ok &= gar.iter().filter(|&&b| b).count() == frames + eops + 1;
        ok &= nar.iter().filter(|&&b| b).count() == frames;
        for t in 0..seq.len() {
            let tok = seq.tokens[t];
            let acoustic = vocab.acoustic_code(tok).is_some();
            ok &= gar[t] == (acoustic || tok == vocab.eop() || tok == vocab.eos());
            ok &= nar[t] == acoustic;
        }
        failures += usize::from(!ok);
    }
    verdict(failures == 0, format!("{N_STRUCT_UTTS} sequences, {failures} failures"))
}

// ---------------------------------------------------------------------------
// 3. gradient check

fn criterion_3() -> Verdict {
    let tiny = ModelConfig {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 12,
        max_seq_len: 8,
        dropout: 0.0,
    };
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut n_params = 0;
    for seed in [1, 2, 3] {
        match transformer_grad_check(tiny.clone(), 6, 1e-5, seed) {
            Ok(r) => {
                worst = worst.max(r.max_rel_err);
                n_params = r.n_params;
            }
            Err(e) => return verdict(false, e.to_string()),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < GRAD_TOL && secs < GRAD_RUNTIME_LIMIT_S,
        format!("max relative error {worst:.2e} (tol {GRAD_TOL:.0e}) over {n_params} parameters x 3 seeds, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------------------
// 4. nucleus sampler

/// Smallest most-probable prefix with mass >= p, renormalised.
fn oracle_truncated(dist: &[f64], p: f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap());
    let mut keep = vec![false; dist.len()];
    let mut mass = 0.0;
    for &i in &idx {
        keep[i] = true;
        mass += dist[i];
        if mass >= p {
            break;
        }
    }
    dist.iter()
        .zip(&keep)
        .map(|(&q, &k)| if k { q / mass } else { 0.0 })
        .collect()
}

fn random_dist(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.unit() + 1e-3).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

fn criterion_4() -> Verdict {
    let mut rng = SplitMix64::new(404);
    let dist = random_dist(&mut rng, 10);
    let mut worst_z = 0.0f64;
    for p in [1.0, 0.7, 0.3] {
        let want = oracle_truncated(&dist, p);
        let mut counts = vec![0usize; dist.len()];
        for _ in 0..SAMPLER_DRAWS {
            match nucleus_sample(&dist, p, 1.0, &mut rng) {
                Ok(i) => counts[i] += 1,
                Err(e) => return verdict(false, e.to_string()),
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let q = want[i];
            let n = SAMPLER_DRAWS as f64;
            if q == 0.0 {
                if c > 0 {
                    return verdict(false, format!("p={p}: token {i} outside the nucleus drawn {c} times"));
                }
                continue;
            }
            let z = (c as f64 - n * q).abs() / (n * q * (1.0 - q)).sqrt().max(f64::MIN_POSITIVE);
            worst_z = worst_z.max(z);
        }
    }
    let mut argmax_fail = 0;
    for _ in 0..N_ARGMAX_DISTS {
        let n = 2 + rng.below(40) as usize;
        let d = random_dist(&mut rng, n);
        let mut best = 0;
        for i in 1..n {
            if d[i] > d[best] {
                best = i;
            }
        }
        if nucleus_sample(&d, 0.0, 1.0, &mut rng).ok() != Some(best) {
            argmax_fail += 1;
        }
    }
    verdict(
        worst_z <= SAMPLER_SIGMAS && argmax_fail == 0,
        format!(
            "max |z| {worst_z:.2} (limit {SAMPLER_SIGMAS}) over {SAMPLER_DRAWS} draws x 3 p; greedy mismatches {argmax_fail}/{N_ARGMAX_DISTS}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. termination

fn criterion_5() -> Verdict {
    let lang = lang();
    let vocab = Vocab::new(&lang);
    let k = lang.codebook_size as usize;
    let prompts = gen_corpus(&lang, 20, STRUCT_SEED + 5).expect("corpus");
    let mut rng = SplitMix64::new(505);
    // never emits EOP or EOS; every third context collapses onto one code
    let lm = ScriptedLm::new(lang.codebook_size, move |ctx: &[TokenId]| {
        let mut d = vec![0.0; k + 2];
        if ctx.len() % 3 == 0 {
            d[ctx.len() % k] = 1.0;
        } else {
            for x in d.iter_mut().take(k) {
                *x = 1.0 / k as f64;
            }
        }
        d
    });
    let mut worst_ratio = 0.0f64;
    for i in 0..N_SCHEDULES {
        let max_frames = 1 + rng.below(30) as u32;
        let cfg = DecodeConfig {
            max_phoneme_frames: max_frames,
            top_p: [1.0, 0.5, 0.0][i % 3],
            seed: i as u64,
            ..DecodeConfig::default()
        };
        let n = 1 + rng.below(20) as usize;
        let schedule: Vec<u32> = (0..n).map(|_| rng.below(u64::from(lang.n_phonemes)) as u32).collect();
        let prompt_utt = &prompts[i % prompts.len()];
        let kind = [VariantKind::Ellav, VariantKind::EllavNoglobal, VariantKind::EllavNophn][i % 3];
        let variant = SeqVariant::plain(kind);
        let prompt = match build_prompt(&vocab, &lang, PromptTask::CrossSpeaker, prompt_utt, &schedule, variant) {
            Ok(p) => p,
            Err(e) => return verdict(false, e.to_string()),
        };
        let gen = match synthesize::<f32>(&lm, None, &vocab, variant, &prompt, prompt_utt, &cfg, &format!("t{i}")) {
            Ok(g) => g,
            Err(e) => return verdict(false, e.to_string()),
        };
        let appended = gen.sequence.len() - prompt.prefix.len();
        let bound = n * (max_frames as usize + 2) + 1;
        let spans_ok = gen.spans.len() == n && gen.spans.iter().all(|s| s.end - s.start <= max_frames as usize);
        if gen.inf || appended > bound || gen.steps > bound || gen.sequence.tokens.last() != Some(&vocab.eos()) || !spans_ok
        {
            return verdict(
                false,
                format!("schedule {i}: inf={} appended={appended} steps={} bound={bound}", gen.inf, gen.steps),
            );
        }
        worst_ratio = worst_ratio.max(appended as f64 / bound as f64);
    }
    verdict(
        true,
        format!("{N_SCHEDULES} schedules halted with inf=false; max appended/bound {worst_ratio:.3}"),
    )
}

// ---------------------------------------------------------------------------
// shared experiment for 6, 7, 8

fn model_config() -> ModelConfig {
    ModelConfig::default()
}

fn train_config(steps: usize, warmup: u64) -> TrainConfig {
    TrainConfig {
        steps,
        warmup,
        ..TrainConfig::default()
    }
}

struct Experiment {
    lang: LanguageConfig,
    train: Vec<Utterance>,
    cases: Vec<TestCase>,
    models: BTreeMap<(VariantKind, u64), GarModel>,
}

impl Experiment {
    fn new() -> Self {
        let lang = lang();
        let train = gen_corpus(&lang, TRAIN_UTTS, DATA_SEED).expect("train corpus");
        let test = gen_corpus_range(&lang, TEST_START, TEST_UTTS, DATA_SEED).expect("test corpus");
        Self {
            cases: continuation_cases(&test, PROMPT_FRAMES),
            lang,
            train,
            models: BTreeMap::new(),
        }
    }

    fn ensure(&mut self, kind: VariantKind) {
        for seed in MODEL_SEEDS {
            if self.models.contains_key(&(kind, seed)) {
                continue;
            }
            let t = Instant::now();
            let out = train_gar(
                &self.train,
                &self.lang,
                SeqVariant::plain(kind),
                &model_config(),
                &train_config(GAR_STEPS, GAR_WARMUP),
                seed,
            )
            .expect("training");
            eprintln!(
                "  trained {kind} seed {seed}: final loss {:.4} in {:.0}s",
                out.final_loss,
                t.elapsed().as_secs_f64()
            );
            self.models.insert((kind, seed), out.model);
        }
    }

    fn seeded(&self, kind: VariantKind) -> Vec<SeededGar<'_>> {
        MODEL_SEEDS
            .iter()
            .map(|&seed| SeededGar {
                seed,
                model: &self.models[&(kind, seed)],
            })
            .collect()
    }

    fn mean_at(&self, kind: VariantKind, p: f64) -> MetricsReport {
        let rows = sweep_top_p(&self.seeded(kind), &self.lang, &self.cases, &[p], &DecodeConfig::default())
            .expect("evaluation");
        rows.into_iter().find(|r| r.seed.is_none()).expect("mean row")
    }
}

fn criterion_6(exp: &mut Experiment) -> Verdict {
    exp.ensure(VariantKind::Ellav);
    exp.ensure(VariantKind::ValleOrder);
    let e = exp.mean_at(VariantKind::Ellav, 1.0);
    let v = exp.mean_at(VariantKind::ValleOrder, 1.0);
    verdict(
        e.wer < v.wer,
        format!("p=1 mean WER over 3 seeds: ellav {:.2} vs valle {:.2}", e.wer, v.wer),
    )
}

fn criterion_7(exp: &mut Experiment) -> Verdict {
    exp.ensure(VariantKind::Ellav);
    exp.ensure(VariantKind::ValleOrder);
    let p_list = ellav::eval::DEFAULT_P_LIST;
    let mut means: BTreeMap<VariantKind, Vec<MetricsReport>> = BTreeMap::new();
    for kind in [VariantKind::Ellav, VariantKind::ValleOrder] {
        let rows = sweep_top_p(&exp.seeded(kind), &exp.lang, &exp.cases, &p_list, &DecodeConfig::default())
            .expect("sweep");
        means.insert(kind, rows.into_iter().filter(|r| r.seed.is_none()).collect());
    }
    let valle = &means[&VariantKind::ValleOrder];
    let ellav = &means[&VariantKind::Ellav];
    let inf_at = |rows: &[MetricsReport], p: f64| rows.iter().find(|r| r.top_p == p).expect("row").inf_pct;
    let valle_inf_1 = inf_at(valle, 1.0);
    let low: Vec<(f64, f64)> = p_list.iter().filter(|&&p| p <= 0.4).map(|&p| (p, inf_at(valle, p))).collect();
    let low_ok = low.iter().all(|&(_, inf)| inf > valle_inf_1);
    let ellav_inf_zero = ellav.iter().all(|r| r.inf_pct == 0.0);
    let range = |rows: &[MetricsReport]| {
        let hi = rows.iter().map(|r| r.wer).fold(f64::MIN, f64::max);
        let lo = rows.iter().map(|r| r.wer).fold(f64::MAX, f64::min);
        hi - lo
    };
    let (er, vr) = (range(ellav), range(valle));
    let curve: Vec<String> = valle.iter().map(|r| format!("{}:{:.0}", r.top_p, r.inf_pct)).collect();
    verdict(
        low_ok && ellav_inf_zero && er < vr,
        format!(
            "valle INF% at p=1 {valle_inf_1:.1}, at p<=0.4 min {:.1}; ellav INF% all zero: {ellav_inf_zero}; WER range ellav {er:.2} vs valle {vr:.2}; valle INF% curve [{}]",
            low.iter().map(|x| x.1).fold(f64::MAX, f64::min),
            curve.join(" ")
        ),
    )
}

fn criterion_8(exp: &mut Experiment) -> Verdict {
    for kind in VariantKind::ALL {
        exp.ensure(kind);
    }
    let w: BTreeMap<VariantKind, f64> = VariantKind::ALL.iter().map(|&k| (k, exp.mean_at(k, 1.0).wer)).collect();
    let e = w[&VariantKind::Ellav];
    let nophn = w[&VariantKind::EllavNophn];
    let noglobal = w[&VariantKind::EllavNoglobal];
    let valle = w[&VariantKind::ValleOrder];
    verdict(
        e < nophn && e < noglobal,
        format!(
            "mean WER ellav {e:.2} < nophn {nophn:.2}: {}, ellav < noglobal {noglobal:.2}: {}; report only: noglobal {noglobal:.2} vs valle {valle:.2}",
            e < nophn,
            e < noglobal
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. NAR accuracy

fn criterion_9() -> Verdict {
    let lang = lang();
    let train = gen_corpus(&lang, TRAIN_UTTS, DATA_SEED).expect("train corpus");
    let test = gen_corpus_range(&lang, TEST_START, TEST_UTTS, DATA_SEED).expect("test corpus");
    let out = match train_nar(&train, &lang, &model_config(), &train_config(NAR_STEPS, NAR_STEPS as u64 / 5), 1) {
        Ok(o) => o,
        Err(e) => return verdict(false, e.to_string()),
    };
    let acc = nar_layer_accuracy(&out.model, &test, 2).expect("accuracy");
    let upper: Vec<String> = (3..=lang.n_layers as usize)
        .map(|l| format!("{:.4}", nar_layer_accuracy(&out.model, &test, l).expect("accuracy")))
        .collect();
    verdict(
        acc > NAR_ACC_MIN,
        format!(
            "held-out layer-2 accuracy {acc:.4} (min {NAR_ACC_MIN}) after {NAR_STEPS} steps; layers 3.. {}",
            upper.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. reproducibility

/// Corpus bytes, checkpoint bytes and sweep CSV bytes of a small pipeline.
fn pipeline_bytes(threads: usize) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool");
    pool.install(|| {
        let lang = lang();
        let train = gen_corpus(&lang, 200, 31).expect("corpus");
        let test = gen_corpus_range(&lang, 5000, 12, 31).expect("corpus");
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ff: 64,
            vocab_size: 0,
            max_seq_len: 200,
            dropout: 0.1,
        };
        let model = train_gar(&train, &lang, SeqVariant::plain(VariantKind::Ellav), &cfg, &train_config(40, 10), 3)
            .expect("training")
            .model;
        let ckpt = write_checkpoint(&model.to_checkpoint(serde_json::Value::Null)).expect("checkpoint");
        let cases = continuation_cases(&test, 8);
        let rows = sweep_top_p(
            &[SeededGar { seed: 3, model: &model }],
            &lang,
            &cases,
            &[1.0, 0.5, 0.0],
            &DecodeConfig::default(),
        )
        .expect("sweep");
        let corpus = ellav::corpus::corpus_to_string(&train).into_bytes();
        (corpus, ckpt, results_csv(&rows).into_bytes())
    })
}

fn criterion_10() -> Verdict {
    let a = pipeline_bytes(1);
    let b = pipeline_bytes(1);
    let c = pipeline_bytes(2);
    let same = |x: &(Vec<u8>, Vec<u8>, Vec<u8>), y: &(Vec<u8>, Vec<u8>, Vec<u8>)| {
        [x.0 == y.0, x.1 == y.1, x.2 == y.2]
    };
    let rerun = same(&a, &b);
    let threads = same(&a, &c);
    verdict(
        rerun.iter().all(|&x| x),
        format!(
            "rerun identical [corpus, checkpoint, csv] = {rerun:?} ({} + {} + {} bytes); with 2 threads {threads:?}",
            a.0.len(),
            a.1.len(),
            a.2.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn check_oracle_transcriber() {
    // sanity: the oracle decodes the generator's own codes exactly
    let lang = lang();
    for u in gen_corpus(&lang, 50, 1).expect("corpus") {
        assert_eq!(oracle_transcribe(&lang, &u.codes[0]), u.real_phonemes(lang.silence_id()));
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    check_oracle_transcriber();
    let mut exp: Option<Experiment> = None;
    let names = [
        "sequence exactness",
        "mask exactness",
        "gradient check",
        "nucleus sampler",
        "termination guarantee",
        "ellav beats valle order on WER",
        "top-p sweep robustness",
        "ablation ordering",
        "NAR layer-2 accuracy",
        "reproducibility",
    ];
    let mut failed = Vec::new();
    let mut lines = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let n = i as u32 + 1;
        if !wanted(n) {
            lines.push(format!("criterion {n:>2} SKIP {name}"));
            println!("{}", lines.last().unwrap());
            continue;
        }
        let t = Instant::now();
        let v = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(exp.get_or_insert_with(Experiment::new)),
            7 => criterion_7(exp.get_or_insert_with(Experiment::new)),
            8 => criterion_8(exp.get_or_insert_with(Experiment::new)),
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let status = if v.pass { "PASS" } else { "FAIL" };
        lines.push(format!(
            "criterion {n:>2} {status} {name}: {} [{:.1}s]",
            v.detail,
            t.elapsed().as_secs_f64()
        ));
        println!("{}", lines.last().unwrap());
        if !v.pass {
            failed.push(n);
        }
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
