//! Invariant checks on tiny inputs.

use ellav::corpus::{corpus_to_string, gen_corpus, LanguageConfig, Utterance};
use ellav::decode::{nucleus_sample, nucleus_support, synthesize, termination_bound, DecodeConfig, ScriptedLm};
use ellav::eval::edit_ops;
use ellav::models::{train_gar, GarModel, TrainConfig};
use ellav::rng::SplitMix64;
use ellav::seqbuild::{
    attention_mask, build_hybrid, build_prompt, loss_mask, PromptTask, SeqVariant, Stage, TokenId, TokenKind,
    VariantKind, Vocab,
};
use ellav::tensornn::{read_checkpoint, transformer_grad_check, write_checkpoint, ModelConfig};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn run_all() -> Vec<(&'static str, Check)> {
    let checks: [(&'static str, fn() -> Check); 9] = [
        ("corpus determinism", corpus_determinism),
        ("sequence layout", sequence_layout),
        ("attention and loss masks", masks),
        ("gradient check", gradients),
        ("nucleus sampler", sampler),
        ("termination bound", termination),
        ("edit distance", edit_distance),
        ("checkpoint round trip", checkpoint_round_trip),
        ("training smoke run", training_smoke),
    ];
    checks.iter().map(|(n, f)| (*n, f())).collect()
}

fn small_corpus(n: usize) -> (LanguageConfig, Vec<Utterance>) {
    let lang = LanguageConfig::default();
    let corpus = gen_corpus(&lang, n, 99).expect("default config is valid");
    (lang, corpus)
}

fn corpus_determinism() -> Check {
    let (lang, a) = small_corpus(50);
    let b = gen_corpus(&lang, 50, 99).map_err(|e| e.to_string())?;
    ensure(corpus_to_string(&a) == corpus_to_string(&b), || "corpus differs between runs".into())?;
    for u in &a {
        u.validate(&lang).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn sequence_layout() -> Check {
    let (lang, corpus) = small_corpus(200);
    let v = Vocab::new(&lang);
    let sil = lang.silence_id();
    for u in &corpus {
        let n = u.real_phonemes(sil).len();
        let t = u.n_frames();
        for kind in VariantKind::ALL {
            let seq = build_hybrid(&v, u, 1, SeqVariant::plain(kind)).map_err(|e| e.to_string())?;
            let g = if kind.has_global() { n } else { 0 };
            let l = if kind.has_local_phonemes() { n } else { 0 };
            let e = if kind.interleaved() { n } else { 0 };
            ensure(seq.len() == g + 1 + t + l + e + 1, || format!("{}: length mismatch for {kind}", u.id))?;
            ensure(seq.extract_acoustic(&v) == u.codes[0], || {
                format!("{}: acoustic round trip failed for {kind}", u.id)
            })?;
            ensure(!seq.tokens.contains(&v.phoneme(sil)), || format!("{}: silence token emitted", u.id))?;
        }
    }
    Ok(())
}

fn masks() -> Check {
    let (lang, corpus) = small_corpus(50);
    let v = Vocab::new(&lang);
    let sil = lang.silence_id();
    for u in &corpus {
        let seq = build_hybrid(&v, u, 1, SeqVariant::plain(VariantKind::Ellav)).map_err(|e| e.to_string())?;
        let m = attention_mask(&seq);
        let b = seq.bos_index;
        for i in 0..seq.len() {
            for j in 0..seq.len() {
                let want = (i < b && j < b) || j <= i;
                ensure(m[[i, j]] == want, || format!("{}: mask differs at ({i}, {j})", u.id))?;
            }
        }
        let n = u.real_phonemes(sil).len();
        let gar = loss_mask(&seq, Stage::Gar).iter().filter(|&&x| x).count();
        let nar = loss_mask(&seq, Stage::Nar).iter().filter(|&&x| x).count();
        ensure(gar == u.n_frames() + n + 1, || format!("{}: GAR loss count {gar}", u.id))?;
        ensure(nar == u.n_frames(), || format!("{}: NAR loss count {nar}", u.id))?;
    }
    Ok(())
}

fn gradients() -> Check {
    let tiny = ModelConfig {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 12,
        max_seq_len: 8,
        dropout: 0.0,
    };
    let r = transformer_grad_check(tiny, 6, 1e-5, 3).map_err(|e| e.to_string())?;
    ensure(r.max_rel_err < 1e-4, || format!("max relative error {:.3e}", r.max_rel_err))
}

fn sampler() -> Check {
    let dist = [0.1, 0.35, 0.05, 0.3, 0.2];
    let mut rng = SplitMix64::new(5);
    for p in [0.3, 0.7, 1.0] {
        let support = nucleus_support(&dist, p);
        let mass: f64 = support.iter().map(|&i| dist[i]).sum();
        let draws = 20_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[nucleus_sample(&dist, p, 1.0, &mut rng).map_err(|e| e.to_string())?] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let q = if support.contains(&i) { dist[i] / mass } else { 0.0 };
            let sd = (draws as f64 * q * (1.0 - q)).sqrt();
            let dev = (c as f64 - draws as f64 * q).abs();
            ensure(dev <= 4.0 * sd + 1e-9, || format!("p={p}: id {i} drawn {c} times"))?;
        }
    }
    ensure(nucleus_sample(&dist, 0.0, 1.0, &mut rng).ok() == Some(1), || "greedy pick differs from argmax".into())
}

fn termination() -> Check {
    let (lang, corpus) = small_corpus(20);
    let v = Vocab::new(&lang);
    let k = lang.codebook_size as usize;
    // never emits EOP or EOS
    let lm = ScriptedLm::new(lang.codebook_size, move |_: &[TokenId]| {
        let mut d = vec![1.0 / k as f64; k + 2];
        d[k] = 0.0;
        d[k + 1] = 0.0;
        d
    });
    let cfg = DecodeConfig {
        max_phoneme_frames: 5,
        ..DecodeConfig::default()
    };
    for (i, u) in corpus.iter().enumerate() {
        let target = corpus[(i + 1) % corpus.len()].real_phonemes(lang.silence_id());
        for kind in [VariantKind::Ellav, VariantKind::EllavNoglobal, VariantKind::EllavNophn] {
            let variant = SeqVariant::plain(kind);
            let prompt =
                build_prompt(&v, &lang, PromptTask::CrossSpeaker, u, &target, variant).map_err(|e| e.to_string())?;
            let r = synthesize::<f32>(&lm, None, &v, variant, &prompt, u, &cfg, &u.id).map_err(|e| e.to_string())?;
            let bound = termination_bound(target.len(), cfg.max_phoneme_frames);
            ensure(r.steps <= bound && !r.inf, || format!("{}: {} steps > {bound}", u.id, r.steps))?;
            let last = r.sequence.kinds.last().copied();
            ensure(last == Some(TokenKind::Eos), || format!("{}: did not end with EOS", u.id))?;
        }
    }
    Ok(())
}

fn edit_distance() -> Check {
    let mut rng = SplitMix64::new(11);
    for _ in 0..300 {
        let a: Vec<u64> = (0..rng.below(6)).map(|_| rng.below(3)).collect();
        let b: Vec<u64> = (0..rng.below(6)).map(|_| rng.below(3)).collect();
        let ops = edit_ops(&a, &b);
        let want = brute_force(&a, &b);
        ensure(ops.cost() == want, || format!("{a:?} vs {b:?}: {} != {want}", ops.cost()))?;
        ensure(a.len() - ops.del == b.len() - ops.ins, || format!("{a:?} vs {b:?}: counts inconsistent"))?;
    }
    Ok(())
}

fn brute_force(a: &[u64], b: &[u64]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ar)), Some((y, br))) => {
            let diag = brute_force(ar, br) + usize::from(x != y);
            diag.min(brute_force(a, br) + 1).min(brute_force(ar, b) + 1)
        }
    }
}

fn checkpoint_round_trip() -> Check {
    let lang = LanguageConfig::default();
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 0,
        max_seq_len: 32,
        dropout: 0.0,
    };
    let m = GarModel::<f32>::new(Vocab::new(&lang), SeqVariant::plain(VariantKind::Ellav), cfg, 0.02, 4)
        .map_err(|e| e.to_string())?;
    let ckpt = m.to_checkpoint(serde_json::Value::Null);
    let bytes = write_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let back = read_checkpoint::<f32>(&bytes).map_err(|e| e.to_string())?;
    let again = write_checkpoint(&back).map_err(|e| e.to_string())?;
    ensure(bytes == again && back == ckpt, || "checkpoint bytes changed on round trip".into())
}

fn training_smoke() -> Check {
    let lang = LanguageConfig::default();
    let corpus = gen_corpus(&lang, 32, 5).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        vocab_size: 0,
        max_seq_len: 160,
        dropout: 0.0,
    };
    let train = TrainConfig {
        steps: 60,
        batch_tokens: 256,
        warmup: 10,
        peak_lr: 3e-3,
        ..TrainConfig::default()
    };
    let out = train_gar(&corpus, &lang, SeqVariant::plain(VariantKind::Ellav), &cfg, &train, 1)
        .map_err(|e| e.to_string())?;
    let first = out.log[0].loss;
    ensure(out.log.iter().all(|r| r.loss.is_finite()), || "non-finite loss".into())?;
    ensure(out.final_loss < first, || format!("loss did not fall: {first:.3} -> {:.3}", out.final_loss))
}
