//! Python bindings. Utterances cross the boundary as corpus JSON lines.

use std::path::PathBuf;

use ellav::corpus::{corpus_to_string, gen_corpus_range, oracle_transcribe, LanguageConfig, Utterance};
use ellav::decode::{nucleus_sample as sample_one, nucleus_support as support, synthesize, DecodeConfig};
use ellav::eval::{continuation_cases, edit_ops as ops, evaluate_run};
use ellav::models::{train_gar, GarModel, TrainConfig};
use ellav::rng::SplitMix64;
use ellav::seqbuild::{build_hybrid, build_prompt, PromptTask, SeqVariant, VariantKind, Vocab};
use ellav::tensornn::ModelConfig;
use ellav::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Validation(_) | Error::InvalidPrompt(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_utt(line: &str) -> PyResult<Utterance> {
    serde_json::from_str(line).map_err(|e| PyValueError::new_err(format!("bad utterance: {e}")))
}

fn parse_lines(text: &str) -> PyResult<Vec<Utterance>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_utt).collect()
}

fn variant(name: &str, adv: u32) -> PyResult<SeqVariant> {
    let kind: VariantKind = name.parse().map_err(|e| PyValueError::new_err(format!("{e}")))?;
    SeqVariant::new(kind, adv).map_err(py_err)
}

/// Generates `n` utterances as JSON lines.
#[pyfunction]
#[pyo3(signature = (n, seed, start = 0))]
fn gen_corpus(n: usize, seed: u64, start: u64) -> PyResult<String> {
    let corpus = gen_corpus_range(&LanguageConfig::default(), start, n, seed).map_err(py_err)?;
    Ok(corpus_to_string(&corpus))
}

/// Hybrid token ids and kind names of one utterance's layer-1 sequence.
#[pyfunction]
#[pyo3(signature = (utt, variant_name, adv = 0))]
fn build_sequence(utt: &str, variant_name: &str, adv: u32) -> PyResult<(Vec<u32>, Vec<String>)> {
    let u = parse_utt(utt)?;
    let vocab = Vocab::new(&LanguageConfig::default());
    let seq = build_hybrid(&vocab, &u, 1, variant(variant_name, adv)?).map_err(py_err)?;
    let kinds = seq.kinds.iter().map(|k| format!("{k:?}")).collect();
    Ok((seq.tokens, kinds))
}

/// Substitutions, deletions and insertions turning `reference` into `hyp`.
#[pyfunction]
fn edit_ops(reference: Vec<i64>, hyp: Vec<i64>) -> (usize, usize, usize) {
    let o = ops(&reference, &hyp);
    (o.sub, o.del, o.ins)
}

#[pyfunction]
fn nucleus_support(dist: Vec<f64>, top_p: f64) -> Vec<usize> {
    support(&dist, top_p)
}

/// `n` independent nucleus draws from one seeded stream.
#[pyfunction]
#[pyo3(signature = (dist, top_p, n, seed, temperature = 1.0))]
fn nucleus_sample(dist: Vec<f64>, top_p: f64, n: usize, seed: u64, temperature: f64) -> PyResult<Vec<usize>> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| sample_one(&dist, top_p, temperature, &mut rng).map_err(py_err))
        .collect()
}

/// Oracle phoneme transcription of layer-1 codes.
#[pyfunction]
fn transcribe(codes: Vec<u32>) -> Vec<u32> {
    oracle_transcribe(&LanguageConfig::default(), &codes)
}

#[pyclass(name = "GarModel")]
struct PyGar {
    model: GarModel,
    #[pyo3(get)]
    final_loss: Option<f64>,
}

#[pymethods]
impl PyGar {
    /// Trains on a JSON-lines corpus with a compact default architecture.
    #[staticmethod]
    #[pyo3(signature = (corpus, variant_name, steps, seed = 1, d_model = 32, n_layers = 1, batch_tokens = 256))]
    fn train(
        corpus: &str,
        variant_name: &str,
        steps: usize,
        seed: u64,
        d_model: usize,
        n_layers: usize,
        batch_tokens: usize,
    ) -> PyResult<Self> {
        let utts = parse_lines(corpus)?;
        let cfg = ModelConfig {
            n_layers,
            d_model,
            n_heads: 2,
            d_ff: 2 * d_model,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            steps,
            batch_tokens,
            warmup: (steps / 5).max(1) as u64,
            peak_lr: 3e-3,
            ..TrainConfig::default()
        };
        let out = train_gar(&utts, &LanguageConfig::default(), variant(variant_name, 0)?, &cfg, &train, seed)
            .map_err(py_err)?;
        Ok(Self {
            model: out.model,
            final_loss: Some(out.final_loss),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: GarModel::load(&path).map_err(py_err)?,
            final_loss: None,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path, serde_json::Value::Null).map_err(py_err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.model.variant.kind.name().to_string()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.model.net.layout.total
    }

    /// Continues `utt` from its first `prompt_frames` frames; returns the
    /// generation record as a JSON line.
    #[pyo3(signature = (utt, prompt_frames, top_p = 1.0, seed = 0))]
    fn synthesize(&self, utt: &str, prompt_frames: usize, top_p: f64, seed: u64) -> PyResult<String> {
        let u = parse_utt(utt)?;
        let lang = LanguageConfig::default();
        let vocab = Vocab::new(&lang);
        let v = self.model.variant;
        let task = PromptTask::Continuation {
            prompt_frames: prompt_frames.min(u.n_frames()),
        };
        let prompt = build_prompt(&vocab, &lang, task, &u, &[], v).map_err(py_err)?;
        let cfg = DecodeConfig {
            top_p,
            seed,
            ..DecodeConfig::default()
        };
        let g = synthesize::<f32>(&self.model, None, &vocab, v, &prompt, &u, &cfg, &u.id).map_err(py_err)?;
        Ok(g.dump_line())
    }

    /// Continuation metrics over a JSON-lines test set, as a CSV row.
    #[pyo3(signature = (testset, prompt_frames, top_p = 1.0))]
    fn evaluate(&self, testset: &str, prompt_frames: usize, top_p: f64) -> PyResult<String> {
        let utts = parse_lines(testset)?;
        let cases = continuation_cases(&utts, prompt_frames);
        let cfg = DecodeConfig {
            top_p,
            ..DecodeConfig::default()
        };
        let lang = LanguageConfig::default();
        let run = evaluate_run(&self.model, None, &lang, &cases, self.model.variant, &cfg, None).map_err(py_err)?;
        Ok(run.report.csv_row())
    }
}

#[pymodule]
fn ellav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(build_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(edit_ops, m)?)?;
    m.add_function(wrap_pyfunction!(nucleus_support, m)?)?;
    m.add_function(wrap_pyfunction!(nucleus_sample, m)?)?;
    m.add_function(wrap_pyfunction!(transcribe, m)?)?;
    m.add_class::<PyGar>()?;
    Ok(())
}
