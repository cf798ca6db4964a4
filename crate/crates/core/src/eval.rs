//! Phoneme-level metrics and experiment drivers.
//!
//! WER here is an edit-distance error rate between the oracle transcription
//! of generated layer-1 codes and the target real-phoneme sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_utterance, oracle_speaker_score, oracle_transcribe, LanguageConfig, PhonemeId, Utterance};
use crate::decode::{synthesize, DecodeConfig, GenerationResult};
use crate::error::{Error, Result};
use crate::models::{train_gar, GarLm, GarModel, NarModel, TrainConfig};
use crate::rng::SplitMix64;
use crate::seqbuild::{build_prompt, PromptTask, SeqVariant, VariantKind, Vocab};
use crate::tensornn::ModelConfig;
use crate::util::write_atomic;

/// The 13 nucleus thresholds of the sweep, from full sampling to greedy.
pub const DEFAULT_P_LIST: [f64; 13] = [1.0, 0.99, 0.95, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0];

pub const CSV_HEADER: &str = "variant,top_p,seed,wer,sub,del,ins,inf_pct,cut_pct,spk_score,n_utts,wer_excl_inf,cut_per_phoneme";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
}

impl EditOps {
    pub fn cost(&self) -> usize {
        self.sub + self.del + self.ins
    }
}

/// Minimal unit-cost alignment of `hyp` against `reference`. The backtrace
/// prefers substitution (or match), then insertion, then deletion.
pub fn edit_ops<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditOps {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = diag.min(ins).min(del);
        }
    }
    let mut ops = EditOps::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                if !same {
                    ops.sub += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == d[i * w + j - 1] + 1 {
            ops.ins += 1;
            j -= 1;
        } else {
            ops.del += 1;
            i -= 1;
        }
    }
    ops
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub top_p: f64,
    /// `None` marks a mean over seeds.
    pub seed: Option<u64>,
    pub wer: f64,
    pub sub: f64,
    pub del: f64,
    pub ins: f64,
    pub inf_pct: f64,
    pub cut_pct: f64,
    pub spk_score: f64,
    pub n_utts: usize,
    /// WER over utterances without the INF flag; `None` if all are INF.
    pub wer_excl_inf: Option<f64>,
    /// Forced cuts per 100 target phonemes.
    pub cut_per_phoneme: f64,
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        let seed = self.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
        let excl = self.wer_excl_inf.map_or_else(|| "nan".to_string(), |w| format!("{w:.4}"));
        format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{:.4}",
            self.variant,
            self.top_p,
            seed,
            self.wer,
            self.sub,
            self.del,
            self.ins,
            self.inf_pct,
            self.cut_pct,
            self.spk_score,
            self.n_utts,
            excl,
            self.cut_per_phoneme
        )
    }
}

/// Per-utterance tallies feeding a report.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UttScore {
    pub ops: EditOps,
    pub ref_len: usize,
    pub inf: bool,
    pub cuts: u32,
    pub spk: f64,
}

pub fn score_generation(lang: &LanguageConfig, gen: &GenerationResult) -> UttScore {
    let hyp = oracle_transcribe(lang, &gen.layer1);
    // an empty generation carries no speaker evidence
    let spk = oracle_speaker_score(lang, &gen.layer1, gen.speaker).unwrap_or(0.0);
    UttScore {
        ops: edit_ops(&gen.schedule, &hyp),
        ref_len: gen.schedule.len(),
        inf: gen.inf,
        cuts: gen.cuts,
        spk,
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Aggregates utterance scores; WER shares the reference-length denominator
/// with its three components and is their exact sum.
pub fn aggregate(variant: &str, top_p: f64, seed: Option<u64>, scores: &[UttScore]) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::EmptyDataset("no utterances to score".into()));
    }
    let n_ref: usize = scores.iter().map(|s| s.ref_len).sum();
    let sub = pct(scores.iter().map(|s| s.ops.sub).sum(), n_ref);
    let del = pct(scores.iter().map(|s| s.ops.del).sum(), n_ref);
    let ins = pct(scores.iter().map(|s| s.ops.ins).sum(), n_ref);
    let kept: Vec<&UttScore> = scores.iter().filter(|s| !s.inf).collect();
    let wer_excl_inf = (!kept.is_empty()).then(|| {
        pct(
            kept.iter().map(|s| s.ops.cost()).sum(),
            kept.iter().map(|s| s.ref_len).sum(),
        )
    });
    Ok(MetricsReport {
        variant: variant.to_string(),
        top_p,
        seed,
        wer: sub + del + ins,
        sub,
        del,
        ins,
        inf_pct: pct(scores.iter().filter(|s| s.inf).count(), scores.len()),
        cut_pct: pct(scores.iter().filter(|s| s.cuts > 0).count(), scores.len()),
        spk_score: scores.iter().map(|s| s.spk).sum::<f64>() / scores.len() as f64,
        n_utts: scores.len(),
        wer_excl_inf,
        cut_per_phoneme: pct(scores.iter().map(|s| s.cuts as usize).sum(), n_ref),
    })
}

/// Mean over per-seed reports of one (variant, p) cell.
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::EmptyDataset("no reports to average".into()))?;
    let k = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let (sub, del, ins) = (avg(|r| r.sub), avg(|r| r.del), avg(|r| r.ins));
    let excl: Vec<f64> = reports.iter().filter_map(|r| r.wer_excl_inf).collect();
    Ok(MetricsReport {
        variant: first.variant.clone(),
        top_p: first.top_p,
        seed: None,
        wer: sub + del + ins,
        sub,
        del,
        ins,
        inf_pct: avg(|r| r.inf_pct),
        cut_pct: avg(|r| r.cut_pct),
        spk_score: avg(|r| r.spk_score),
        n_utts: reports.iter().map(|r| r.n_utts).sum(),
        wer_excl_inf: (!excl.is_empty()).then(|| excl.iter().sum::<f64>() / excl.len() as f64),
        cut_per_phoneme: avg(|r| r.cut_per_phoneme),
    })
}

/// One evaluation item: a prompt utterance and the task built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub utt: Utterance,
    pub task: PromptTask,
    /// Target phonemes for cross-speaker cases; unused for continuation.
    pub target: Vec<PhonemeId>,
}

impl TestCase {
    pub fn continuation(utt: Utterance, prompt_frames: usize) -> Self {
        Self {
            utt,
            task: PromptTask::Continuation { prompt_frames },
            target: Vec::new(),
        }
    }
}

/// Continuation cases over a test corpus, with the prompt capped below each
/// utterance's length.
pub fn continuation_cases(testset: &[Utterance], prompt_frames: usize) -> Vec<TestCase> {
    testset
        .iter()
        .map(|u| TestCase::continuation(u.clone(), prompt_frames.min(u.n_frames())))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: MetricsReport,
    pub generations: Vec<GenerationResult>,
}

/// Synthesises every case and scores it. Cases run in parallel; results
/// are reduced in input order, so the report does not depend on the thread
/// count.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_run(
    gar: &(dyn GarLm + Sync),
    nar: Option<&NarModel>,
    lang: &LanguageConfig,
    cases: &[TestCase],
    variant: SeqVariant,
    cfg: &DecodeConfig,
    seed_label: Option<u64>,
) -> Result<EvalRun> {
    if cases.is_empty() {
        return Err(Error::EmptyDataset("empty test set".into()));
    }
    let vocab = Vocab::new(lang);
    let generations: Vec<GenerationResult> = cases
        .par_iter()
        .map(|case| {
            let prompt = build_prompt(&vocab, lang, case.task, &case.utt, &case.target, variant)?;
            synthesize(gar, nar, &vocab, variant, &prompt, &case.utt, cfg, &case.utt.id)
        })
        .collect::<Result<_>>()?;
    let scores: Vec<UttScore> = generations.iter().map(|g| score_generation(lang, g)).collect();
    let report = aggregate(variant.kind.name(), cfg.top_p, seed_label, &scores)?;
    Ok(EvalRun { report, generations })
}

/// A trained GAR model labelled with its training seed.
pub struct SeededGar<'a> {
    pub seed: u64,
    pub model: &'a GarModel,
}

/// One report per (model, p) plus a mean row per (variant, p).
pub fn sweep_top_p(
    models: &[SeededGar<'_>],
    lang: &LanguageConfig,
    cases: &[TestCase],
    p_list: &[f64],
    base: &DecodeConfig,
) -> Result<Vec<MetricsReport>> {
    let mut rows = Vec::new();
    let mut cells: BTreeMap<(String, usize), Vec<MetricsReport>> = BTreeMap::new();
    for (pi, &p) in p_list.iter().enumerate() {
        for m in models {
            let cfg = DecodeConfig { top_p: p, ..*base };
            let run = evaluate_run(m.model, None, lang, cases, m.model.variant, &cfg, Some(m.seed))?;
            cells
                .entry((m.model.variant.kind.name().to_string(), pi))
                .or_default()
                .push(run.report.clone());
            rows.push(run.report);
        }
    }
    rows.extend(mean_rows(&cells)?);
    Ok(rows)
}

fn mean_rows(cells: &BTreeMap<(String, usize), Vec<MetricsReport>>) -> Result<Vec<MetricsReport>> {
    let mut keyed: Vec<_> = cells.iter().collect();
    keyed.sort_by_key(|((v, p), _)| (variant_rank(v), *p));
    keyed.into_iter().map(|(_, reps)| mean_report(reps)).collect()
}

fn variant_rank(name: &str) -> usize {
    VariantKind::ALL
        .iter()
        .position(|k| k.name() == name)
        .unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub variants: Vec<SeqVariant>,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    /// Per-seed reports followed by one mean row per variant.
    pub rows: Vec<MetricsReport>,
    pub models: Vec<(SeqVariant, u64, GarModel)>,
}

impl AblationResult {
    pub fn means(&self) -> Vec<&MetricsReport> {
        self.rows.iter().filter(|r| r.seed.is_none()).collect()
    }
}

/// Trains and evaluates every variant under identical budgets and seeds.
pub fn ablation_suite(
    corpus: &[Utterance],
    lang: &LanguageConfig,
    cases: &[TestCase],
    cfg: &AblationConfig,
) -> Result<AblationResult> {
    let mut rows = Vec::new();
    let mut models = Vec::new();
    let mut cells: BTreeMap<(String, usize), Vec<MetricsReport>> = BTreeMap::new();
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            let out = train_gar(corpus, lang, variant, &cfg.model, &cfg.train, seed)?;
            let run = evaluate_run(&out.model, None, lang, cases, variant, &cfg.decode, Some(seed))?;
            cells
                .entry((variant.kind.name().to_string(), 0))
                .or_default()
                .push(run.report.clone());
            rows.push(run.report);
            models.push((variant, seed, out.model));
        }
    }
    rows.extend(mean_rows(&cells)?);
    Ok(AblationResult { rows, models })
}

/// Stress cases for the cross-speaker task: long runs of rare phonemes at
/// maximal utterance length, prompted by utterances with dense silences.
pub fn hard_cases(n: usize, lang: &LanguageConfig, seed: u64) -> Result<Vec<TestCase>> {
    lang.validate()?;
    let rare = rare_phonemes(lang);
    let weights = lang.phoneme_weights();
    let prompt_lang = LanguageConfig {
        sil_prob: 0.9,
        ..lang.clone()
    };
    let len = lang.utt_len_range[1] as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("hard-s{seed}-{i:04}");
        let utt = generate_utterance(&prompt_lang, seed, i as u64, id);
        let mut rng = SplitMix64::stream(seed, i as u64, 0x6861_7264);
        let mut target: Vec<PhonemeId> = Vec::with_capacity(len);
        while target.len() < len {
            let p = if rng.bernoulli(0.75) {
                rare[rng.below(rare.len() as u64) as usize]
            } else {
                rng.weighted(&weights) as PhonemeId
            };
            if target.last() != Some(&p) {
                target.push(p);
            }
        }
        out.push(TestCase {
            utt,
            task: PromptTask::CrossSpeaker,
            target,
        });
    }
    Ok(out)
}

/// The least frequent quarter of the phoneme alphabet (at least two).
pub fn rare_phonemes(lang: &LanguageConfig) -> Vec<PhonemeId> {
    let n = lang.n_phonemes as usize;
    let k = (n / 4).max(2).min(n);
    let w = lang.phoneme_weights();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
    let mut rare: Vec<PhonemeId> = order[..k].iter().map(|&p| p as PhonemeId).collect();
    rare.sort_unstable();
    rare
}

pub fn results_csv(rows: &[MetricsReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Tab-separated `(p, wer, inf_pct, cut_pct)` per variant from mean rows.
pub fn plot_data(rows: &[MetricsReport]) -> String {
    let mut s = String::from("# phoneme-level WER; mean over seeds\nvariant\tp\twer\tinf_pct\tcut_pct\n");
    for r in rows.iter().filter(|r| r.seed.is_none()) {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            r.variant, r.top_p, r.wer, r.inf_pct, r.cut_pct
        );
    }
    s
}

pub fn write_results(dir: &Path, stem: &str, rows: &[MetricsReport]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    let tsv = dir.join(format!("{stem}_plot.tsv"));
    write_atomic(&csv, results_csv(rows).as_bytes())?;
    write_atomic(&tsv, plot_data(rows).as_bytes())?;
    Ok((csv, tsv))
}

pub fn gar_checkpoint_path(dir: &Path, variant: SeqVariant, seed: u64) -> PathBuf {
    let adv = if variant.adv > 0 { format!("-adv{}", variant.adv) } else { String::new() };
    dir.join(format!("gar-{}{adv}-s{seed}.ckpt", variant.kind.name()))
}

pub fn nar_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("nar-s{seed}.ckpt"))
}

/// Loads the GAR checkpoint of each (variant, seed), naming the variant of
/// the first one missing.
pub fn load_gar_models(dir: &Path, variants: &[SeqVariant], seeds: &[u64]) -> Result<Vec<(u64, GarModel)>> {
    let mut out = Vec::new();
    for &v in variants {
        for &s in seeds {
            let path = gar_checkpoint_path(dir, v, s);
            if !path.exists() {
                return Err(Error::MissingCheckpoint(format!("{} (seed {s}, expected {})", v.kind, path.display())));
            }
            out.push((s, GarModel::load(&path)?));
        }
    }
    Ok(out)
}
