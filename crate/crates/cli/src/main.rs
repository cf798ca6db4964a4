//! `ellav` command-line entry point.

mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ellav::corpus::{gen_corpus_range, load_corpus, save_corpus, LanguageConfig};
use ellav::decode::synthesize;
use ellav::eval::{
    ablation_suite, continuation_cases, evaluate_run, gar_checkpoint_path, hard_cases, load_gar_models,
    sweep_top_p, write_results, AblationConfig, SeededGar, TestCase,
};
use ellav::models::{save_log, train_gar, train_nar, GarModel, NarModel};
use ellav::seqbuild::{build_prompt, SeqVariant, Vocab};
use ellav::tensornn::{transformer_grad_check, ModelConfig};
use ellav::util::write_atomic;
use ellav::Error;

use config::{Flags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ellav", version, about = "Interleaved phoneme/acoustic codec LM on a synthetic codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData,
    /// Train a GAR model for one sequence variant.
    TrainGar,
    /// Train the NAR model.
    TrainNar,
    /// Synthesize a test set and dump the generations.
    Synth,
    /// Evaluate one GAR checkpoint.
    Eval,
    /// Top-p sweep over trained checkpoints.
    Sweep,
    /// Train and evaluate every variant under one budget.
    Ablate,
    /// Finite-difference gradient check on the tiny config.
    Gradcheck,
    /// Run the invariant suite on tiny inputs.
    Selftest,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainGar => "train-gar",
            Command::TrainNar => "train-nar",
            Command::Synth => "synth",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Ablate => "ablate",
            Command::Gradcheck => "gradcheck",
            Command::Selftest => "selftest",
        }
    }
}

/// Failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
    fn threshold(msg: impl Into<String>) -> Self {
        Self { code: 4, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            Error::Numeric { .. } | Error::UndefinedScore(_) => 3,
            _ => 2,
        };
        Self { code, msg: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.flags.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    let cfg = cli.flags.resolve()?;
    let threads = cli.flags.threads;
    let name = cli.command.name();
    match cli.command {
        Command::GenData => gen_data(&cfg, name, threads),
        Command::TrainGar => cmd_train_gar(&cfg, name, threads),
        Command::TrainNar => cmd_train_nar(&cfg, name, threads),
        Command::Synth => cmd_synth(&cfg, name, threads),
        Command::Eval => cmd_eval(&cfg, name, threads),
        Command::Sweep => cmd_sweep(&cfg, name, threads),
        Command::Ablate => cmd_ablate(&cfg, name, threads),
        Command::Gradcheck => cmd_gradcheck(&cfg),
        Command::Selftest => cmd_selftest(),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Failure::usage(format!("missing required --{flag}")))
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn sidecar(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

fn gen_data(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let corpus = gen_corpus_range(&cfg.language, cfg.start, cfg.n, cfg.seed)?;
    save_corpus(out, &corpus)?;
    cfg.write_manifest(&manifest_beside(out), name, threads)?;
    println!("wrote {} utterances to {}", corpus.len(), out.display());
    Ok(())
}

fn train_meta(cfg: &RunConfig, seed: u64, skipped: usize, final_loss: f64) -> serde_json::Value {
    serde_json::json!({
        "seed": seed,
        "language": cfg.language,
        "train": cfg.train,
        "skipped": skipped,
        "final_loss": final_loss,
    })
}

fn cmd_train_gar(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    let variant = cfg.seq_variant()?;
    let res = train_gar(&corpus, &cfg.language, variant, &cfg.model, &cfg.train, cfg.seed)?;
    res.model
        .save(out, train_meta(cfg, cfg.seed, res.skipped, res.final_loss))?;
    save_log(&sidecar(out, "log.tsv"), &res.log)?;
    cfg.write_manifest(&manifest_beside(out), name, threads)?;
    println!(
        "{}: final loss {:.4}, {} utterances skipped, checkpoint {}",
        variant.kind,
        res.final_loss,
        res.skipped,
        out.display()
    );
    Ok(())
}

fn cmd_train_nar(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    let res = train_nar(&corpus, &cfg.language, &cfg.model, &cfg.train, cfg.seed)?;
    res.model
        .save(out, train_meta(cfg, cfg.seed, res.skipped, res.final_loss))?;
    save_log(&sidecar(out, "log.tsv"), &res.log)?;
    cfg.write_manifest(&manifest_beside(out), name, threads)?;
    println!("nar: final loss {:.4}, checkpoint {}", res.final_loss, out.display());
    Ok(())
}

/// Language config stored at training time, falling back to the run config.
fn checkpoint_language(meta: &serde_json::Value, cfg: &RunConfig) -> CliResult<LanguageConfig> {
    match meta.get("language") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Failure::from(Error::Checkpoint(format!("language config: {e}")))),
        None => Ok(cfg.language.clone()),
    }
}

fn load_gar(path: &Path, cfg: &RunConfig) -> CliResult<(GarModel, LanguageConfig, Option<u64>)> {
    let ckpt = ellav::tensornn::load_checkpoint::<f32>(path)?;
    let lang = checkpoint_language(&ckpt.header.meta, cfg)?;
    let seed = ckpt.header.meta.get("seed").and_then(serde_json::Value::as_u64);
    let model = GarModel::from_checkpoint(ckpt)?;
    if model.vocab != Vocab::new(&lang) {
        return Err(Error::Checkpoint("vocabulary does not match the language config".into()).into());
    }
    Ok((model, lang, seed))
}

fn test_cases(cfg: &RunConfig, lang: &LanguageConfig) -> CliResult<Vec<TestCase>> {
    match cfg.hard {
        Some(n) => Ok(hard_cases(n, lang, cfg.seed)?),
        None => {
            let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
            Ok(continuation_cases(&corpus, cfg.prompt_frames))
        }
    }
}

fn cmd_synth(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let out = required(&cfg.out, "out")?;
    let (gar, lang, _) = load_gar(required(&cfg.gar, "gar")?, cfg)?;
    let nar = cfg.nar.as_deref().map(NarModel::<f32>::load).transpose()?;
    let cases = test_cases(cfg, &lang)?;
    let vocab = Vocab::new(&lang);
    let variant = gar.variant;
    let mut dump = String::new();
    for case in &cases {
        let prompt = build_prompt(&vocab, &lang, case.task, &case.utt, &case.target, variant)?;
        let res = synthesize(&gar, nar.as_ref(), &vocab, variant, &prompt, &case.utt, &cfg.decode, &case.utt.id)?;
        dump.push_str(&res.dump_line());
        dump.push('\n');
    }
    write_atomic(out, dump.as_bytes())?;
    cfg.write_manifest(&manifest_beside(out), name, threads)?;
    println!("wrote {} generations to {}", cases.len(), out.display());
    Ok(())
}

fn results_dir(cfg: &RunConfig) -> CliResult<&Path> {
    required(&cfg.out, "out")
}

fn cmd_eval(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let dir = results_dir(cfg)?;
    let (gar, lang, seed) = load_gar(required(&cfg.gar, "gar")?, cfg)?;
    let nar = cfg.nar.as_deref().map(NarModel::<f32>::load).transpose()?;
    let cases = test_cases(cfg, &lang)?;
    let run = evaluate_run(&gar, nar.as_ref(), &lang, &cases, gar.variant, &cfg.decode, seed)?;
    let (csv, _) = write_results(dir, "eval", std::slice::from_ref(&run.report))?;
    cfg.write_manifest(&dir.join("eval.manifest.json"), name, threads)?;
    let r = &run.report;
    println!(
        "{} p={}: WER {:.2} (sub {:.2} del {:.2} ins {:.2}) INF {:.2}% CUT {:.2}% SPK {:.3} -> {}",
        r.variant,
        r.top_p,
        r.wer,
        r.sub,
        r.del,
        r.ins,
        r.inf_pct,
        r.cut_pct,
        r.spk_score,
        csv.display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let dir = results_dir(cfg)?;
    let variants: Vec<SeqVariant> = cfg
        .variants
        .iter()
        .map(|&k| SeqVariant::new(k, if k.interleaved() { cfg.adv } else { 0 }))
        .collect::<Result<_, _>>()?;
    let loaded = load_gar_models(&cfg.checkpoints, &variants, &cfg.seeds)?;
    let lang = {
        let first = gar_checkpoint_path(&cfg.checkpoints, variants[0], cfg.seeds[0]);
        load_gar(&first, cfg)?.1
    };
    let models: Vec<SeededGar<'_>> = loaded.iter().map(|(s, m)| SeededGar { seed: *s, model: m }).collect();
    let cases = test_cases(cfg, &lang)?;
    let rows = sweep_top_p(&models, &lang, &cases, &cfg.p_list, &cfg.decode)?;
    let (csv, tsv) = write_results(dir, "sweep", &rows)?;
    cfg.write_manifest(&dir.join("sweep.manifest.json"), name, threads)?;
    println!("{} rows -> {} and {}", rows.len(), csv.display(), tsv.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, name: &str, threads: Option<usize>) -> CliResult<()> {
    let dir = results_dir(cfg)?;
    let corpus = load_corpus(required(&cfg.corpus, "corpus")?)?;
    let cases = match cfg.hard {
        Some(n) => hard_cases(n, &cfg.language, cfg.seed)?,
        None => continuation_cases(&load_corpus(required(&cfg.test_corpus, "test-corpus")?)?, cfg.prompt_frames),
    };
    let variants = cfg
        .variants
        .iter()
        .map(|&k| SeqVariant::new(k, if k.interleaved() { cfg.adv } else { 0 }))
        .collect::<Result<_, _>>()?;
    let abl = AblationConfig {
        variants,
        seeds: cfg.seeds.clone(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        decode: cfg.decode,
    };
    let res = ablation_suite(&corpus, &cfg.language, &cases, &abl)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (variant, seed, model) in &res.models {
        let meta = train_meta(cfg, *seed, 0, f64::NAN);
        model.save(&gar_checkpoint_path(dir, *variant, *seed), meta)?;
    }
    let (csv, _) = write_results(dir, "ablation", &res.rows)?;
    cfg.write_manifest(&dir.join("ablation.manifest.json"), name, threads)?;
    for r in res.means() {
        println!("{:<15} WER {:>7.2}  INF {:>6.2}%  CUT {:>6.2}%", r.variant, r.wer, r.inf_pct, r.cut_pct);
    }
    println!("-> {}", csv.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<()> {
    let tiny = ModelConfig {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: 12,
        max_seq_len: 8,
        dropout: 0.0,
    };
    let report = transformer_grad_check(tiny, 6, 1e-5, cfg.seed)?;
    println!("max relative error {:.3e} over {} parameters", report.max_rel_err, report.n_params);
    if report.max_rel_err < cfg.threshold {
        Ok(())
    } else {
        Err(Failure::threshold(format!(
            "gradient check failed: {:.3e} >= {:.1e}",
            report.max_rel_err, cfg.threshold
        )))
    }
}

fn cmd_selftest() -> CliResult<()> {
    let results = selftest::run_all();
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(()) => println!("ok    {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        println!("{} checks passed", results.len());
        Ok(())
    } else {
        Err(Failure::threshold(format!("{failed} of {} checks failed", results.len())))
    }
}
